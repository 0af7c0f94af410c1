"""Gaussian state observer and the classical Kalman-Bucy filter it corresponds to.

The Gaussian observer propagates five numbers (means of x and p, the two
variances and the symmetric covariance) from the measurement record. All
functions here work elementwise, so a belief may hold scalars or numpy
arrays (one entry per trajectory).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .dynamics import MeasurementModel
from .errors import FilterDivergence, UsageError
from .hilbert import PotentialParams

__all__ = [
    "GaussianBelief",
    "LinearSystemSpec",
    "gaussian_filter_step",
    "kalman_bucy_step",
    "belief_reset",
    "heisenberg_defect",
    "gaussian_purity",
    "riccati_steady_state",
    "free_particle_system",
]

log = logging.getLogger(__name__)

HEISENBERG_LOG_TOL = 1e-3


@dataclass(frozen=True)
class GaussianBelief:
    mean_x: float | np.ndarray
    mean_p: float | np.ndarray
    Vx: float | np.ndarray
    Vp: float | np.ndarray
    C: float | np.ndarray
    time: float = 0.0

    @classmethod
    def at_rest(cls, x: float, vx: float = 0.5, vp: float = 0.5, c: float = 0.0,
                p: float = 0.0, n: int | None = None) -> "GaussianBelief":
        """Belief centred at ``(x, p)``; broadcast to ``n`` copies when given."""
        if n is None:
            return cls(float(x), float(p), float(vx), float(vp), float(c))
        full = lambda v: np.full(n, float(v))
        return cls(full(x), full(p), full(vx), full(vp), full(c))

    def __neg__(self) -> "GaussianBelief":
        return replace(self, mean_x=-self.mean_x, mean_p=-self.mean_p)


def heisenberg_defect(b: GaussianBelief, hbar: float = 1.0):
    """``Vx Vp - C**2 - hbar**2/4``; negative values violate the uncertainty bound."""
    return b.Vx * b.Vp - b.C**2 - 0.25 * hbar**2


def gaussian_purity(b: GaussianBelief, hbar: float = 1.0):
    """Purity of the Gaussian state, ``hbar / (2 sqrt(Vx Vp - C**2))``."""
    det = np.maximum(b.Vx * b.Vp - b.C**2, 1e-300)
    return 0.5 * hbar / np.sqrt(det)


def gaussian_filter_step(b: GaussianBelief, params: PotentialParams, model: MeasurementModel,
                         u, dQ, dt: float, hbar: float = 1.0,
                         on_divergence: str = "raise") -> GaussianBelief:
    """One Euler step of the five-moment observer driven by ``dQ``.

    The innovation is ``dV = dQ - <x> dt``. With ``on_divergence="raise"`` a
    non-positive variance raises FilterDivergence; ``"ignore"`` leaves the
    caller to apply :func:`belief_reset`.
    """
    if not dt > 0:
        raise UsageError(f"dt must be positive, got {dt}")
    A, B = params.A, params.B
    k, beta = model.k, model.beta
    x, p, vx, vp, c = b.mean_x, b.mean_p, b.Vx, b.Vp, b.C
    g = 2.0 * np.sqrt(2.0 * k)
    dV = dQ - x * dt

    x_new = x + p * dt + g * vx * dV
    p_new = p + (-4.0 * B * x**3 + 2.0 * A * x - 12.0 * B * x * vx + u) * dt + g * c * dV
    vx_new = vx + (2.0 * c - 8.0 * k * vx**2) * dt
    vp_new = vp + (-24.0 * B * x**2 * c + 4.0 * A * c - 24.0 * B * c * vx
                   + 2.0 * (k + beta) * hbar**2 - 8.0 * k * c**2) * dt
    c_new = c + (vp - 12.0 * B * x**2 * vx + 2.0 * A * vx - 12.0 * B * vx**2
                 - 8.0 * k * c * vx) * dt

    out = GaussianBelief(x_new, p_new, vx_new, vp_new, c_new, b.time + dt)
    if on_divergence == "raise" and (np.any(out.Vx <= 0) or np.any(out.Vp <= 0)):
        raise FilterDivergence(f"non-positive variance at t={out.time:.4g}")
    if np.any(heisenberg_defect(out, hbar) < -HEISENBERG_LOG_TOL):
        log.debug("Heisenberg bound violated at t=%.4g", out.time)
    return out


def belief_reset(b: GaussianBelief, initial: GaussianBelief):
    """Reset the second moments of diverged entries to ``initial``'s values.

    Returns ``(belief, reset_mask)``; means are kept.
    """
    bad = ~((np.asarray(b.Vx) > 0) & (np.asarray(b.Vp) > 0)
            & np.isfinite(b.Vx) & np.isfinite(b.Vp) & np.isfinite(b.C))
    if not np.any(bad):
        return b, bad
    log.info("belief reset on %d entr%s at t=%.4g", int(np.sum(bad)),
             "y" if np.sum(bad) == 1 else "ies", b.time)
    pick = lambda cur, init: np.where(bad, init, cur)
    out = replace(b, Vx=pick(b.Vx, initial.Vx), Vp=pick(b.Vp, initial.Vp), C=pick(b.C, initial.C))
    if np.ndim(b.Vx) == 0:
        out = replace(out, Vx=float(out.Vx), Vp=float(out.Vp), C=float(out.C))
    return out, bad


@dataclass(frozen=True)
class LinearSystemSpec:
    """``dz = (F z + b u) dt + process noise``, ``dy = H z dt + dW_obs``.

    ``Q`` is the process-noise covariance rate and ``R`` the observation
    noise intensity. ``gain_scale`` rescales the observation channel: the
    innovation ``dy - H z dt`` is multiplied by ``gain_scale`` in the mean
    update and the information term of the Riccati flow picks up
    ``gain_scale**2``. This is the standard filter for the rescaled record
    ``gain_scale * dy`` whose noise has intensity ``gain_scale**2 R`` scaled
    back to ``R``.
    """

    F: np.ndarray
    Q: np.ndarray
    H: np.ndarray
    R: float = 1.0
    b: np.ndarray = None
    gain_scale: float = 1.0

    def __post_init__(self):
        if not self.R > 0:
            raise UsageError("observation noise intensity must be positive")


def free_particle_system(model: MeasurementModel, A: float = 0.0, hbar: float = 1.0) -> LinearSystemSpec:
    """Linear system whose Kalman-Bucy filter coincides with the Gaussian
    observer for ``B = 0``: drift ``[[0, 1], [2A, 0]]``, momentum diffusion
    ``2 (k + beta) hbar**2``, observation of ``x`` with gain ``2 sqrt(2k)``."""
    return LinearSystemSpec(
        F=np.array([[0.0, 1.0], [2.0 * A, 0.0]]),
        Q=np.array([[0.0, 0.0], [0.0, 2.0 * (model.k + model.beta) * hbar**2]]),
        H=np.array([1.0, 0.0]),
        R=1.0,
        b=np.array([0.0, 1.0]),
        gain_scale=2.0 * np.sqrt(2.0 * model.k),
    )


def kalman_bucy_step(mean, cov, sys: LinearSystemSpec, u: float, dy: float, dt: float):
    """Euler step of the continuous-time Kalman-Bucy filter."""
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    F, Hr, g = sys.F, np.asarray(sys.H, dtype=float), sys.gain_scale
    bvec = np.zeros_like(mean) if sys.b is None else sys.b
    innov = dy - (Hr @ mean) * dt
    gain = g * (cov @ Hr) / sys.R
    mean_new = mean + (F @ mean + bvec * u) * dt + gain * innov
    ph = cov @ Hr
    cov_new = cov + (F @ cov + cov @ F.T + sys.Q - g**2 * np.outer(ph, ph) / sys.R) * dt
    cov_new = 0.5 * (cov_new + cov_new.T)
    if np.linalg.eigvalsh(cov_new)[0] <= 0:
        raise FilterDivergence("Kalman-Bucy covariance lost positive definiteness")
    return mean_new, cov_new


def riccati_steady_state(k: float, beta: float, hbar: float = 1.0) -> tuple[float, float, float]:
    """Closed-form stationary ``(C, Vx, Vp)`` of the free-particle observer."""
    if not k > 0:
        raise UsageError("steady state needs k > 0")
    c = hbar * np.sqrt((k + beta) / (4.0 * k))
    vx = np.sqrt(c / (4.0 * k))
    return c, vx, 8.0 * k * c * vx

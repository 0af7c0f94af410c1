"""Conditioned and unconditioned propagators on the position grid.

Every step is split into two parts:

* the measurement and thermal back-action, which is diagonal in the
  eigenbasis of the measured observable (and of ``x`` for the thermal
  channel), integrated with an exponential Euler-Maruyama update in which
  the state's moments are frozen over the step;
* the Hamiltonian part ``H - u x``, integrated with a Strang split-operator
  step (FFT for the kinetic term).

For the pure-state SSE the diagonal factor per grid point is
``exp(a_i dW - a_i**2 dt)`` with ``a_i = sqrt(2k) (x_i - <x>)``, i.e. the
exact solution of the linear Ito SDE ``d psi_i = (a_i dW - a_i**2 dt/2) psi_i``.
For the SME the same factor is applied from both sides, which makes the
update a Kraus map and keeps the density matrix positive. The record
convention is ``dQ = <x> dt + dW`` with unit-intensity noise.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import ConfigError, IntegrationError, UsageError
from .hilbert import Operator, Space

__all__ = [
    "MeasurementModel",
    "MeasurementRecord",
    "Propagator",
    "sse_step",
    "sme_step",
    "me_step",
    "generate_record",
    "innovation",
    "purity",
    "pure_moments",
    "mixed_moments",
    "ensure_physical",
]

log = logging.getLogger(__name__)

NORM_COLLAPSE = 1e-6


@dataclass(frozen=True)
class MeasurementModel:
    """Continuous measurement of strength ``k`` plus thermal noise ``beta``.

    The measured observable is ``x`` (the double-well experiment) or ``p``
    (used for QND checks). The thermal channel always couples through ``x``.
    """

    k: float = 0.3
    beta: float = 0.1
    measured: str = "x"

    def __post_init__(self):
        if self.k < 0 or self.beta < 0:
            raise ConfigError("k and beta must be non-negative")
        if self.measured not in ("x", "p"):
            raise ConfigError(f"measured must be 'x' or 'p', got {self.measured!r}")

    def measured_operator(self, space: Space) -> Operator:
        return space.x if self.measured == "x" else space.p


@dataclass
class MeasurementRecord:
    """Record increments ``dQ_i`` sampled every ``dt``."""

    dt: float
    dQ: list = field(default_factory=list)

    def append(self, dq: float) -> None:
        self.dQ.append(float(dq))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.dQ)

    def innovations(self, est_means) -> np.ndarray:
        """``dV_i = dQ_i - <x>_est(t_i) dt``."""
        return self.as_array() - np.asarray(est_means) * self.dt


def generate_record(mean: float, dt: float, dW0):
    """``dQ = <x> dt + dW0``."""
    return mean * dt + dW0


def innovation(dQ, mean, dt: float):
    return dQ - mean * dt


class Propagator:
    """Precomputed split-step factors for one (space, model, dt) triple."""

    def __init__(self, space: Space, model: MeasurementModel, dt: float):
        if not dt > 0:
            raise UsageError(f"dt must be positive, got {dt}")
        self.space = space
        self.model = model
        self.dt = dt
        x = space.x_diag
        self._x = x
        self._v_half = np.exp(-0.5j * space.v_diag * dt)
        self._kin = np.exp(-1j * space.kinetic_diag * dt)
        self._kin2 = self._kin[:, None] * self._kin.conj()[None, :]
        self._m = x if model.measured == "x" else space.k
        dx2 = (x[:, None] - x[None, :]) ** 2
        if model.measured == "x":
            self._deph_x = np.exp(-(model.k + model.beta) * dx2 * dt)
            self._deph_m = None
        else:
            self._deph_x = np.exp(-model.beta * dx2 * dt)
            k = space.k
            self._deph_m = np.exp(-model.k * (k[:, None] - k[None, :]) ** 2 * dt)
        self._thermal_x = np.exp(-model.beta * dx2 * dt)

    # -- Hamiltonian part --------------------------------------------------

    def _potential_half(self, u):
        u = np.asarray(u, dtype=float)
        if not np.any(u):
            return np.broadcast_to(self._v_half, u.shape + self._v_half.shape)
        return self._v_half * _linear_phase(0.5 * self.dt * u, self._x)

    def unitary(self, psi: np.ndarray, u=0.0) -> np.ndarray:
        """Strang step of ``exp(-i (H - u x) dt)`` on vectors (last axis)."""
        h = self._potential_half(u)
        psi = h * psi
        psi = np.fft.ifft(self._kin * np.fft.fft(psi, axis=-1), axis=-1)
        return h * psi

    def unitary_rho(self, rho: np.ndarray, u: float = 0.0) -> np.ndarray:
        h = self._potential_half(u)
        hh = h[:, None] * h.conj()[None, :]
        rho = hh * rho
        rt = np.fft.ifft(np.fft.fft(rho, axis=0), axis=1)
        rt = self._kin2 * rt
        rho = np.fft.fft(np.fft.ifft(rt, axis=0), axis=1)
        return hh * rho

    # -- measurement basis helpers ------------------------------------------

    def _to_m(self, a, axis=-1):
        return a if self.model.measured == "x" else np.fft.fft(a, axis=axis, norm="ortho")

    def _from_m(self, a, axis=-1):
        return a if self.model.measured == "x" else np.fft.ifft(a, axis=axis, norm="ortho")

    def _rho_to_m(self, rho):
        if self.model.measured == "x":
            return rho
        return np.fft.ifft(np.fft.fft(rho, axis=0, norm="ortho"), axis=1, norm="ortho")

    def _rho_from_m(self, rho):
        if self.model.measured == "x":
            return rho
        return np.fft.fft(np.fft.ifft(rho, axis=0, norm="ortho"), axis=1, norm="ortho")

    def measured_mean(self, psi: np.ndarray) -> np.ndarray:
        """``<m>`` for (batched) normalised vectors."""
        prob = np.abs(self._to_m(psi)) ** 2
        return prob @ self._m

    def measured_mean_rho(self, rho: np.ndarray) -> float:
        if self.model.measured == "x":
            return float(np.real(np.diagonal(rho)) @ self._x)
        return float(np.real(np.diagonal(self._rho_to_m(rho))) @ self.space.k)

    # -- steps ---------------------------------------------------------------

    def sse(self, psi, u, dW0, dW1, mean=None):
        """Batched SSE step.

        Returns ``(psi_new, failed)``. ``failed`` marks rows whose norm
        collapsed below ``1e-6`` or became non-finite; those rows are left
        unnormalised and must be discarded by the caller.
        """
        k, beta, dt = self.model.k, self.model.beta, self.dt
        dW0 = np.asarray(dW0, dtype=float)[..., None]
        dW1 = np.asarray(dW1, dtype=float)[..., None]
        if mean is None:
            mean = self.measured_mean(psi)
        mean_x = mean if self.model.measured == "x" else np.abs(psi) ** 2 @ self._x
        with np.errstate(over="ignore", invalid="ignore"):
            if k > 0:
                a = np.sqrt(2.0 * k) * (self._m - np.asarray(mean)[..., None])
                psi = self._from_m(np.exp(a * dW0 - a**2 * dt) * self._to_m(psi))
            if beta > 0:
                b = np.sqrt(2.0 * beta) * (self._x - np.asarray(mean_x)[..., None])
                psi = np.exp(b * dW1 - b**2 * dt) * psi
            norm = np.sqrt(np.sum(np.abs(psi) ** 2, axis=-1))
        failed = ~np.isfinite(norm) | (norm < NORM_COLLAPSE)
        safe = np.where(failed, 1.0, norm)
        psi = psi / safe[..., None]
        psi = self.unitary(psi, u)
        return psi, failed

    def sme(self, rho, u, dW, mean=None, check_positivity=False):
        k, dt = self.model.k, self.dt
        if mean is None:
            mean = self.measured_mean_rho(rho)
        if k > 0:
            a = np.sqrt(2.0 * k) * (self._m - mean)
            om = np.exp(a * dW - a**2 * dt)
            rho = self._rho_from_m(om[:, None] * om[None, :] * self._rho_to_m(rho))
        if self.model.beta > 0:
            rho = self._thermal_x * rho
        tr = np.trace(rho).real
        if not np.isfinite(tr) or tr < NORM_COLLAPSE:
            raise IntegrationError(f"SME trace collapsed to {tr:.3e}")
        rho = self.unitary_rho(rho / tr, u)
        rho = 0.5 * (rho + rho.conj().T)
        if check_positivity:
            rho = ensure_physical(rho)
        return rho

    def me(self, rho, u=0.0):
        rho = self._deph_x * rho
        if self._deph_m is not None:
            rho = self._rho_from_m(self._deph_m * self._rho_to_m(rho))
        rho = self.unitary_rho(rho / np.trace(rho).real, u)
        return 0.5 * (rho + rho.conj().T)


def _linear_phase(theta, x: np.ndarray) -> np.ndarray:
    """``exp(1j * theta[..., None] * x)`` for a uniform grid ``x``.

    Built from per-row unit steps with cumulative products; elementwise
    complex ``np.exp`` over the full array dominates the step cost otherwise.
    """
    n = x.size
    n1 = 1 << (n.bit_length() - 1) // 2
    n2 = n // n1
    dx = x[1] - x[0]
    th = np.asarray(theta, dtype=float)[..., None]
    step = np.exp(1j * th * dx)
    fine = np.cumprod(np.broadcast_to(step, th.shape[:-1] + (n2,)), axis=-1) / step
    big = np.exp(1j * th * (dx * n2))
    coarse = np.cumprod(np.broadcast_to(big, th.shape[:-1] + (n1,)), axis=-1) / big
    coarse = coarse * np.exp(1j * th * x[0])
    out = coarse[..., :, None] * fine[..., None, :]
    return out.reshape(np.shape(theta) + (n,))


@lru_cache(maxsize=32)
def _propagator(space: Space, model: MeasurementModel, dt: float) -> Propagator:
    return Propagator(space, model, dt)


def sse_step(psi, space: Space, model: MeasurementModel, u, dt: float, dW0, dW1=0.0):
    """Advance a pure state (or a batch along the leading axes) by one SSE step.

    ``dW0`` is the observer's measurement noise, ``dW1`` the fictitious
    thermal unravelling noise. Raises IntegrationError on norm collapse.
    """
    psi, failed = _propagator(space, model, dt).sse(np.asarray(psi, dtype=complex), u, dW0, dW1)
    if np.any(failed):
        raise IntegrationError("SSE norm collapsed below 1e-6 (dt too large?)")
    return psi


def sme_step(rho, space: Space, model: MeasurementModel, u, dt: float, dW,
             check_positivity: bool = False):
    """Advance a conditioned density matrix with innovation ``dW``."""
    rho = np.asarray(rho, dtype=complex)
    if rho.ndim != 2:
        raise UsageError("sme_step expects a density matrix")
    if abs(np.trace(rho).real - 1.0) > 1e-6:
        raise UsageError("sme_step expects a unit-trace state")
    return _propagator(space, model, dt).sme(rho, u, dW, check_positivity=check_positivity)


def me_step(rho, space: Space, model: MeasurementModel, u, dt: float):
    """Unconditional master-equation step (measurement record discarded)."""
    rho = np.asarray(rho, dtype=complex)
    if rho.ndim != 2:
        raise UsageError("me_step expects a density matrix")
    return _propagator(space, model, dt).me(rho, u)


def purity(rho) -> float:
    rho = np.asarray(rho)
    return float(np.sum(np.abs(rho) ** 2))


def ensure_physical(rho: np.ndarray, hard: float = 1e-6) -> np.ndarray:
    """Clip small negative eigenvalues to zero; raise below ``-hard``."""
    w, v = np.linalg.eigh(rho)
    if w[0] < -hard:
        raise IntegrationError(f"density matrix eigenvalue {w[0]:.3e} below -{hard:g}")
    if w[0] < 0:
        w = np.clip(w, 0.0, None)
        rho = (v * w) @ v.conj().T
        rho = rho / np.trace(rho).real
    return rho


def pure_moments(psi: np.ndarray, space: Space) -> dict:
    """Means, variances, symmetric covariance and energy for (batched) vectors."""
    x, k = space.x_diag, space.k
    prob = np.abs(psi) ** 2
    mx = prob @ x
    x2 = prob @ x**2
    pt = np.fft.fft(psi, axis=-1, norm="ortho")
    pprob = np.abs(pt) ** 2
    mp = pprob @ k
    p2 = pprob @ k**2
    ppsi = np.fft.ifft(k * pt, axis=-1, norm="ortho")
    xp = np.real(np.sum(psi.conj() * x * ppsi, axis=-1))
    return {
        "x": mx,
        "p": mp,
        "Vx": x2 - mx**2,
        "Vp": p2 - mp**2,
        "C": xp - mx * mp,
        "energy": 0.5 * p2 + prob @ space.v_diag,
    }


def mixed_moments(rho: np.ndarray, space: Space) -> dict:
    x, k = space.x_diag, space.k
    d = np.real(np.diagonal(rho))
    mx = d @ x
    x2 = d @ x**2
    frho = np.fft.fft(rho, axis=0, norm="ortho")
    dk = np.real(np.diagonal(np.fft.ifft(frho, axis=1, norm="ortho")))
    mp = dk @ k
    p2 = dk @ k**2
    prho = np.fft.ifft(k[:, None] * frho, axis=0, norm="ortho")
    xp = float(np.real(x @ np.diagonal(prho)))
    return {
        "x": float(mx),
        "p": float(mp),
        "Vx": float(x2 - mx**2),
        "Vp": float(p2 - mp**2),
        "C": xp - float(mx * mp),
        "energy": float(0.5 * p2 + d @ space.v_diag),
    }

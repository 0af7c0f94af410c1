"""Truncated position-grid Hilbert space, physical operators and superoperators.

Units are fixed to hbar = m = 1. States are stored with the discrete
normalisation ``sum(|psi_i|**2) == 1`` so that every operator is an ordinary
matrix on C^n and ``<A> = psi^H A psi``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ConfigError, UsageError

__all__ = [
    "GridSpec",
    "PotentialParams",
    "Operator",
    "QuantumState",
    "Space",
    "build_space",
    "lindblad_D",
    "superop_H",
    "expectation",
    "commutator",
    "trace_distance",
    "gaussian_wavepacket",
    "gaussian_density",
]


@dataclass(frozen=True)
class GridSpec:
    """Uniform periodic grid on ``[-x_max, x_max)`` with ``n_points`` samples."""

    n_points: int = 256
    x_max: float = 8.0

    def __post_init__(self):
        n = int(self.n_points)
        if n < 16 or n & (n - 1):
            raise ConfigError(f"n_points must be a power of two >= 16, got {self.n_points}")
        if not self.x_max > 0:
            raise ConfigError(f"x_max must be positive, got {self.x_max}")

    @property
    def dx(self) -> float:
        return 2.0 * self.x_max / self.n_points

    @property
    def x(self) -> np.ndarray:
        return -self.x_max + self.dx * np.arange(self.n_points)

    @property
    def k(self) -> np.ndarray:
        """Angular wavenumbers in FFT order."""
        return 2.0 * np.pi * np.fft.fftfreq(self.n_points, d=self.dx)


@dataclass(frozen=True)
class PotentialParams:
    """Quartic double well ``V(x) = -A x**2 + B x**4``."""

    A: float = 2.0
    B: float = 1.0 / 9.0

    def __post_init__(self):
        if self.B < 0:
            raise ConfigError(f"B must be non-negative, got {self.B}")

    def potential(self, x):
        return -self.A * x**2 + self.B * x**4

    def force(self, x):
        """``-V'(x)``."""
        return 2.0 * self.A * x - 4.0 * self.B * x**3

    @property
    def minima(self) -> tuple[float, float] | None:
        if self.A > 0 and self.B > 0:
            xm = np.sqrt(self.A / (2.0 * self.B))
            return (-xm, xm)
        return None

    @property
    def well_depth(self) -> float | None:
        if self.minima is None:
            return None
        return self.A**2 / (4.0 * self.B)


@dataclass(frozen=True, eq=False)
class Operator:
    matrix: np.ndarray
    label: str = ""

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def H(self) -> "Operator":
        return Operator(self.matrix.conj().T, f"{self.label}^H")

    def is_hermitian(self, atol: float = 1e-12) -> bool:
        return bool(np.max(np.abs(self.matrix - self.matrix.conj().T)) <= atol)

    def __add__(self, other: "Operator") -> "Operator":
        return Operator(self.matrix + other.matrix, f"({self.label}+{other.label})")

    def __sub__(self, other: "Operator") -> "Operator":
        return Operator(self.matrix - other.matrix, f"({self.label}-{other.label})")

    def __mul__(self, scalar) -> "Operator":
        return Operator(scalar * self.matrix, f"{scalar}*{self.label}")

    __rmul__ = __mul__

    def __matmul__(self, other: "Operator") -> "Operator":
        return Operator(self.matrix @ other.matrix, f"{self.label}{other.label}")


@dataclass
class QuantumState:
    """A pure vector (1-d) or density matrix (2-d) tagged with its time."""

    data: np.ndarray
    time: float = 0.0

    @property
    def kind(self) -> str:
        return "pure" if self.data.ndim == 1 else "mixed"

    @classmethod
    def pure(cls, psi, time: float = 0.0) -> "QuantumState":
        psi = np.asarray(psi, dtype=complex)
        return cls(psi / np.linalg.norm(psi), time)

    @classmethod
    def mixed(cls, rho, time: float = 0.0) -> "QuantumState":
        rho = np.asarray(rho, dtype=complex)
        return cls(rho / np.trace(rho).real, time)

    def density(self) -> np.ndarray:
        if self.kind == "pure":
            return np.outer(self.data, self.data.conj())
        return self.data

    def validate(self, tol: float = 1e-9) -> None:
        """Raise UsageError when normalisation, Hermiticity or positivity fail."""
        if self.kind == "pure":
            err = abs(np.vdot(self.data, self.data).real - 1.0)
            if err > tol:
                raise UsageError(f"pure state norm off by {err:.3e}")
            return
        rho = self.data
        if abs(np.trace(rho).real - 1.0) > tol:
            raise UsageError("density matrix trace differs from 1")
        if np.max(np.abs(rho - rho.conj().T)) > 1e-10:
            raise UsageError("density matrix is not Hermitian")
        if np.linalg.eigvalsh(rho).min() < -1e-8:
            raise UsageError("density matrix has negative eigenvalues")


@dataclass(frozen=True, eq=False)
class Space:
    """Grid, potential and the operators built on them.

    Immutable after construction; safe to share between worker threads.
    """

    grid: GridSpec
    params: PotentialParams
    x_diag: np.ndarray = field(repr=False)
    k: np.ndarray = field(repr=False)
    v_diag: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.grid.n_points

    @property
    def kinetic_diag(self) -> np.ndarray:
        return 0.5 * self.k**2

    @cached_property
    def fourier_matrix(self) -> np.ndarray:
        """Unitary DFT matrix F with ``F @ psi == fft(psi, norm='ortho')``."""
        return np.fft.fft(np.eye(self.n), axis=0, norm="ortho")

    def _from_k_diag(self, diag: np.ndarray) -> np.ndarray:
        F = self.fourier_matrix
        m = F.conj().T @ (diag[:, None] * F)
        return 0.5 * (m + m.conj().T)

    @cached_property
    def x(self) -> Operator:
        return Operator(np.diag(self.x_diag).astype(complex), "x")

    @cached_property
    def p(self) -> Operator:
        return Operator(self._from_k_diag(self.k), "p")

    @cached_property
    def T(self) -> Operator:
        return Operator(self._from_k_diag(self.kinetic_diag), "p^2/2")

    @cached_property
    def V(self) -> Operator:
        return Operator(np.diag(self.v_diag).astype(complex), "V")

    @cached_property
    def H(self) -> Operator:
        return Operator(self.T.matrix + self.V.matrix, "H")

    def identity(self) -> Operator:
        return Operator(np.eye(self.n, dtype=complex), "1")

    def to_momentum(self, a: np.ndarray, axis: int = -1) -> np.ndarray:
        return np.fft.fft(a, axis=axis, norm="ortho")

    def from_momentum(self, a: np.ndarray, axis: int = -1) -> np.ndarray:
        return np.fft.ifft(a, axis=axis, norm="ortho")


def build_space(grid: GridSpec | None = None, params: PotentialParams | None = None) -> Space:
    """Assemble x, p (spectral), V and ``H = p**2/2 - A x**2 + B x**4``."""
    grid = grid or GridSpec()
    params = params or PotentialParams()
    if params.minima is not None and grid.x_max <= params.minima[1]:
        raise ConfigError(
            f"x_max={grid.x_max} does not contain the wells at +/-{params.minima[1]:.4g}"
        )
    x = grid.x
    return Space(grid=grid, params=params, x_diag=x, k=grid.k, v_diag=params.potential(x))


def _as_matrix(a) -> np.ndarray:
    return a.matrix if isinstance(a, Operator) else np.asarray(a)


def _as_state(state) -> np.ndarray:
    return state.data if isinstance(state, QuantumState) else np.asarray(state)


def _check_dims(a: np.ndarray, rho: np.ndarray) -> None:
    if rho.ndim != 2 or a.shape != rho.shape:
        raise UsageError(f"dimension mismatch: operator {a.shape} vs state {rho.shape}")


def commutator(a, b) -> np.ndarray:
    a, b = _as_matrix(a), _as_matrix(b)
    return a @ b - b @ a


def lindblad_D(A, rho) -> np.ndarray:
    """``D[A] rho = A rho A^H - (A^H A rho + rho A^H A) / 2``."""
    a, rho = _as_matrix(A), _as_state(rho)
    _check_dims(a, rho)
    ad = a.conj().T
    ada = ad @ a
    return a @ rho @ ad - 0.5 * (ada @ rho + rho @ ada)


def superop_H(L, rho) -> np.ndarray:
    """``H[L] rho = L rho + rho L^H - Tr[(L + L^H) rho] rho`` for unit-trace rho."""
    lam, rho = _as_matrix(L), _as_state(rho)
    _check_dims(lam, rho)
    tr = np.trace(rho)
    if abs(tr - 1.0) > 1e-6:
        raise UsageError(f"superop_H needs a unit-trace state, trace={tr:.6g}")
    lr = lam @ rho
    rl = rho @ lam.conj().T
    return lr + rl - np.trace(lr + rl) * rho


def expectation(op, state):
    """``Tr(op rho)`` or ``<psi|op|psi>``; real for Hermitian ``op``."""
    a = _as_matrix(op)
    s = _as_state(state)
    if s.shape[0] != a.shape[0] or (s.ndim == 2 and s.shape != a.shape):
        raise UsageError(f"dimension mismatch: operator {a.shape} vs state {s.shape}")
    if s.ndim == 1:
        val = np.vdot(s, a @ s)
    else:
        val = np.einsum("ij,ji->", a, s)
    if isinstance(op, Operator) and op.is_hermitian(1e-10):
        return float(val.real)
    return complex(val)


def trace_distance(rho1, rho2) -> float:
    """``(1/2) Tr|rho1 - rho2|``."""
    d = _as_state(rho1) - _as_state(rho2)
    d = 0.5 * (d + d.conj().T)
    return 0.5 * float(np.abs(np.linalg.eigvalsh(d)).sum())


def gaussian_wavepacket(space: Space, x0: float, p0: float = 0.0, vx: float = 0.5,
                        c: float = 0.0) -> np.ndarray:
    """Pure Gaussian with mean (x0, p0), position variance ``vx`` and covariance ``c``.

    The momentum variance is fixed by purity: ``vp = (1/4 + c**2) / vx``.
    """
    if vx <= 0:
        raise UsageError("vx must be positive")
    x = space.x_diag
    d = x - x0
    psi = np.exp(-d**2 * (1.0 - 2j * c) / (4.0 * vx) + 1j * p0 * d)
    return psi / np.linalg.norm(psi)


def gaussian_density(space: Space, x0: float, p0: float = 0.0, vx: float = 0.5, vp: float = 0.5,
                     c: float = 0.0) -> np.ndarray:
    """Gaussian (generally mixed) density matrix with the given first and second moments.

    Requires ``vx * vp - c**2 >= 1/4``; equality gives the pure wavepacket.
    """
    if vx <= 0 or vx * vp - c**2 < 0.25 - 1e-12:
        raise UsageError("moments violate the uncertainty relation")
    x = space.x_diag
    X = 0.5 * (x[:, None] + x[None, :]) - x0
    y = x[:, None] - x[None, :]
    cond = vp - c**2 / vx
    rho = np.exp(-X**2 / (2.0 * vx) + 1j * (c / vx) * X * y - 0.5 * cond * y**2 + 1j * p0 * y)
    return rho / np.trace(rho).real

"""Linearized LQG feedback and target schedules."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, UsageError
from .estimator import GaussianBelief
from .hilbert import Operator, PotentialParams

__all__ = [
    "ControlParams",
    "TargetSchedule",
    "ControlOutput",
    "lqg_feedback",
    "apply_control",
    "schedule_target",
    "square_wave",
]


@dataclass(frozen=True)
class ControlParams:
    """``gamma`` sets the overall feedback strength; ``u_max`` optionally clamps |u|."""

    gamma: float = 100.0
    u_max: float | None = None
    enabled: bool = True

    def __post_init__(self):
        if self.gamma < 0:
            raise ConfigError("gamma must be non-negative")
        if self.u_max is not None and not self.u_max > 0:
            raise ConfigError("u_max must be positive when given")


@dataclass(frozen=True)
class TargetSchedule:
    """Piecewise-constant targets; each segment is ``(t_start, x0, p0)``."""

    segments: tuple[tuple[float, float, float], ...]

    def __post_init__(self):
        segs = tuple(tuple(float(v) for v in s) for s in self.segments)
        if not segs:
            raise ConfigError("schedule needs at least one segment")
        if any(len(s) != 3 for s in segs):
            raise ConfigError("schedule segments are (t_start, x0, p0) triples")
        if segs[0][0] != 0.0:
            raise ConfigError("first schedule segment must start at t = 0")
        starts = [s[0] for s in segs]
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ConfigError("schedule segments must be strictly time-ordered")
        object.__setattr__(self, "segments", segs)

    @property
    def switch_times(self) -> list[float]:
        return [s[0] for s in self.segments[1:]]

    def mirrored(self) -> "TargetSchedule":
        return TargetSchedule(tuple((t, -x, -p) for t, x, p in self.segments))

    def targets(self, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Vectorised lookup for an array of times."""
        t = np.asarray(t, dtype=float)
        starts = np.array([s[0] for s in self.segments])
        idx = np.searchsorted(starts, t, side="right") - 1
        if np.any(idx < 0):
            raise UsageError("time before the first schedule segment")
        xs = np.array([s[1] for s in self.segments])
        ps = np.array([s[2] for s in self.segments])
        return xs[idx], ps[idx]


def square_wave(x_target: float, period: float, t_end: float, start_sign: int = -1) -> TargetSchedule:
    """Targets alternating between ``start_sign * x_target`` and its mirror every ``period``."""
    segs = []
    t, sign = 0.0, start_sign
    while t < t_end:
        segs.append((t, sign * x_target, 0.0))
        t += period
        sign = -sign
    return TargetSchedule(tuple(segs))


def schedule_target(sched: TargetSchedule, t: float) -> tuple[float, float]:
    """Left-closed lookup: a segment is active from its ``t_start`` onwards."""
    if t < 0:
        raise UsageError("t must be non-negative")
    x0, p0 = sched.targets(np.array([t]))
    return float(x0[0]), float(p0[0])


@dataclass(frozen=True)
class ControlOutput:
    u: float | np.ndarray
    u0: float | np.ndarray
    u1: float | np.ndarray
    u2: float | np.ndarray
    u_tilde: float | np.ndarray


def lqg_feedback(b: GaussianBelief, target: Sequence, params: PotentialParams,
                 ctrl: ControlParams) -> ControlOutput:
    """Linearized LQG force from the current estimate.

    ``u0 = -V'(<x>)`` cancels the conservative force at the estimate, and
    ``u1``, ``u2`` are the LQG regulator terms for the linearised dynamics
    with gain ``u~ = s + sqrt(s**2 + gamma)``, ``s = d u0 / d<x>``.
    """
    x0, p0 = target
    x, p = b.mean_x, b.mean_p
    A, B = params.A, params.B
    u0 = 2.0 * A * x - 4.0 * B * x**3
    s = 2.0 * A - 12.0 * B * x**2
    ut = s + np.sqrt(s**2 + ctrl.gamma)
    u1 = -ut * (x - x0)
    u2 = -np.sqrt(2.0 * ut + ctrl.gamma) * (p - p0)
    u = u0 + u1 + u2
    if not ctrl.enabled:
        u = 0.0 * u
    elif ctrl.u_max is not None:
        u = np.clip(u, -ctrl.u_max, ctrl.u_max)
    return ControlOutput(u=u, u0=u0, u1=u1, u2=u2, u_tilde=ut)


def apply_control(H: Operator, u: float, x: Operator) -> Operator:
    """``H + H_fb`` with feedback Hamiltonian ``H_fb = -u x``."""
    return Operator(H.matrix - u * x.matrix, f"{H.label}-u*x")

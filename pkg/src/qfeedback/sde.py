"""Seedable Wiener streams and the Euler-Maruyama stepping contract."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import UsageError

__all__ = ["NoiseStream", "WienerIncrement", "next_wiener", "wiener_block", "em_step"]

MEASUREMENT = 0
THERMAL = 1


class NoiseStream:
    """Gaussian stream keyed by ``(master_seed, stream_id, noise_index)``.

    Streams for distinct keys are derived with ``SeedSequence`` spawn keys, so
    they are statistically independent. Values are served from an internal
    buffer; the sequence does not depend on how draws are batched.
    """

    def __init__(self, master_seed: int, stream_id: int = 0, noise_index: int = 0,
                 block: int = 4096):
        self.master_seed = int(master_seed)
        self.stream_id = int(stream_id)
        self.noise_index = int(noise_index)
        seq = np.random.SeedSequence(self.master_seed, spawn_key=(self.stream_id, self.noise_index))
        self._rng = np.random.Generator(np.random.PCG64(seq))
        self._block = block
        self._buf = np.empty(0)
        self._pos = 0
        self.counter = 0

    def standard_normal(self, size: int) -> np.ndarray:
        out = np.empty(size)
        filled = 0
        while filled < size:
            if self._pos == len(self._buf):
                self._buf = self._rng.standard_normal(max(self._block, size - filled))
                self._pos = 0
            take = min(size - filled, len(self._buf) - self._pos)
            out[filled:filled + take] = self._buf[self._pos:self._pos + take]
            self._pos += take
            filled += take
        self.counter += size
        return out


@dataclass(frozen=True)
class WienerIncrement:
    value: float
    dt: float


def next_wiener(stream: NoiseStream, dt: float) -> WienerIncrement:
    """Draw one increment with mean 0 and variance ``dt``."""
    if not dt > 0:
        raise UsageError(f"dt must be positive, got {dt}")
    return WienerIncrement(float(np.sqrt(dt) * stream.standard_normal(1)[0]), dt)


def wiener_block(streams: Sequence[NoiseStream], dt: float, n_steps: int) -> np.ndarray:
    """Increments for ``n_steps`` steps of every stream, shape ``(n_steps, len(streams))``.

    Column ``j`` is exactly the sequence ``n_steps`` successive ``next_wiener``
    calls on ``streams[j]`` would produce.
    """
    if not dt > 0:
        raise UsageError(f"dt must be positive, got {dt}")
    out = np.empty((n_steps, len(streams)))
    for j, s in enumerate(streams):
        out[:, j] = s.standard_normal(n_steps)
    return np.sqrt(dt) * out


def em_step(state, drift: Callable, diffusions: Sequence[tuple[Callable, WienerIncrement]],
            dt: float):
    """One Euler-Maruyama step ``state + drift(state) dt + sum coeff(state) dW``.

    Normalisation, if any, is left to the caller.
    """
    for _, dw in diffusions:
        if not np.isclose(dw.dt, dt, rtol=1e-12, atol=0.0):
            raise UsageError("all Wiener increments must be drawn for the step's dt")
    out = state + drift(state) * dt
    for coeff, dw in diffusions:
        out = out + coeff(state) * dw.value
    return out

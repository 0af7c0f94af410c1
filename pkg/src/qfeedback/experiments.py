"""Closed-loop trajectory simulation, ensembles and their statistics.

Each trajectory couples four pieces every step: the SSE generates the
"true" conditioned state and the record increment ``dQ``, the Gaussian
observer digests ``dQ``, the LQG law turns the estimate into a force and
the force enters the next SSE step. Trajectories are integrated in
vectorised chunks; each trajectory draws its noise from its own streams,
so results do not depend on chunking or on the number of worker threads.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import curve_fit

from .control import ControlParams, TargetSchedule, lqg_feedback, square_wave
from .dynamics import MeasurementModel, Propagator, pure_moments
from .errors import ConfigError
from .estimator import GaussianBelief, belief_reset, gaussian_filter_step, gaussian_purity
from .hilbert import GridSpec, PotentialParams, build_space, gaussian_wavepacket
from .sde import MEASUREMENT, THERMAL, NoiseStream, wiener_block

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = [
    "InitialState",
    "OutputSpec",
    "SimConfig",
    "TrajectoryResult",
    "EnsembleStats",
    "RelaxationFit",
    "reference_config",
    "load_config",
    "config_to_dict",
    "run_trajectory",
    "run_ensemble",
    "rms_deviation",
    "plateau_level",
    "fit_relaxation",
    "summarize",
    "TRAJECTORY_COLUMNS",
]

log = logging.getLogger(__name__)

ABORT_FRACTION_LIMIT = 0.05
NOISE_BLOCK = 1000
EDGE_FRACTION = 0.9

TRAJECTORY_COLUMNS = ("t", "x_true", "p_true", "x_est", "p_est", "Vx", "Vp", "C",
                      "u", "dQ", "energy", "purity")


@dataclass(frozen=True)
class InitialState:
    """Gaussian initial condition; ``x=None`` means "the first target"."""

    x: float | None = None
    p: float = 0.0
    vx: float = 0.5
    vp: float = 0.5
    c: float = 0.0


@dataclass(frozen=True)
class OutputSpec:
    dir: str = "out"
    per_trajectory: bool = False
    figures: bool = True


@dataclass(frozen=True)
class SimConfig:
    grid: GridSpec = field(default_factory=GridSpec)
    potential: PotentialParams = field(default_factory=PotentialParams)
    model: MeasurementModel = field(default_factory=MeasurementModel)
    ctrl: ControlParams = field(default_factory=ControlParams)
    schedule: TargetSchedule = field(default_factory=lambda: square_wave(3.0, 20.0, 60.0))
    dt: float = 1e-3
    t_end: float = 60.0
    n_traj: int = 200
    master_seed: int = 0
    initial_state: InitialState = field(default_factory=InitialState)
    estimator: InitialState | None = None
    record_every: int = 10
    chunk_size: int = 50
    plateau_start: float = 10.0
    fit_window: float = 15.0
    output: OutputSpec = field(default_factory=OutputSpec)

    def __post_init__(self):
        if not self.t_end > 0:
            raise ConfigError("t_end must be positive")
        if not self.dt > 0 or self.dt > self.t_end:
            raise ConfigError("dt must be positive and below t_end")
        if self.n_traj < 1:
            raise ConfigError("n_traj must be >= 1")
        if self.record_every < 1 or self.chunk_size < 1:
            raise ConfigError("record_every and chunk_size must be >= 1")
        if self.model.measured != "x":
            raise ConfigError("closed-loop runs measure position (model.measured = 'x')")
        if self.initial_state.vx <= 0 or self.initial_state.vp <= 0:
            raise ConfigError("initial variances must be positive")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    @property
    def record_times(self) -> np.ndarray:
        idx = np.arange(0, self.n_steps + 1, self.record_every)
        return idx * self.dt

    def start(self) -> InitialState:
        s = self.initial_state
        if s.x is None:
            s = dataclasses.replace(s, x=self.schedule.segments[0][1])
        return s

    def belief0(self) -> InitialState:
        b = self.estimator or self.initial_state
        if b.x is None:
            b = dataclasses.replace(b, x=self.schedule.segments[0][1])
        return b


def reference_config(**overrides) -> SimConfig:
    """A=2, B=1/9, k=0.3, beta=0.1, gamma=100, targets switching between -3 and +3 every 20."""
    return dataclasses.replace(SimConfig(), **overrides)


# -- config files -----------------------------------------------------------

_SECTIONS = {
    "grid": GridSpec,
    "potential": PotentialParams,
    "model": MeasurementModel,
    "ctrl": ControlParams,
    "initial_state": InitialState,
    "estimator": InitialState,
    "output": OutputSpec,
}


def _build(cls, table, name):
    if not isinstance(table, dict):
        raise ConfigError(f"[{name}] must be a table")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(table) - names
    if unknown:
        raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(sorted(unknown))}")
    try:
        return cls(**table)
    except TypeError as exc:
        raise ConfigError(f"bad [{name}] section: {exc}") from exc


def config_from_dict(data: dict) -> SimConfig:
    data = dict(data)
    kwargs = {}
    for key, cls in _SECTIONS.items():
        if key in data:
            kwargs[key] = _build(cls, data.pop(key), key)
    if "schedule" in data:
        sched = data.pop("schedule")
        if isinstance(sched, dict):
            if "segments" in sched:
                kwargs["schedule"] = TargetSchedule(tuple(tuple(s) for s in sched["segments"]))
            else:
                try:
                    kwargs["schedule"] = square_wave(float(sched["x_target"]), float(sched["period"]),
                                                     float(data.get("t_end", SimConfig.t_end)),
                                                     int(sched.get("start_sign", -1)))
                except KeyError as exc:
                    raise ConfigError(f"[schedule] needs segments or x_target/period: {exc}") from exc
        else:
            kwargs["schedule"] = TargetSchedule(tuple(tuple(s) for s in sched))
    elif "t_end" in data:
        kwargs["schedule"] = square_wave(3.0, 20.0, float(data["t_end"]))
    data.pop("sweep", None)
    names = {f.name for f in dataclasses.fields(SimConfig)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(sorted(unknown))}")
    kwargs.update(data)
    try:
        return SimConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> SimConfig:
    """Read a TOML file whose keys mirror the :class:`SimConfig` fields."""
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    return config_from_dict(data)


def config_to_dict(cfg: SimConfig) -> dict:
    out = {}
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, TargetSchedule):
            out[f.name] = {"segments": [list(s) for s in v.segments]}
        elif dataclasses.is_dataclass(v):
            out[f.name] = dataclasses.asdict(v)
        else:
            out[f.name] = v
    return out


# -- simulation engine -------------------------------------------------------

@dataclass
class _ChunkResult:
    traj_ids: list
    series: dict          # column -> (n_rec, n_chunk)
    aborted: np.ndarray
    resets: np.ndarray
    edge_prob: np.ndarray


def _simulate_chunk(cfg: SimConfig, traj_ids, space=None) -> _ChunkResult:
    space = space or build_space(cfg.grid, cfg.potential)
    prop = Propagator(space, cfg.model, cfg.dt)
    nb = len(traj_ids)
    dt = cfg.dt
    s0, b0 = cfg.start(), cfg.belief0()

    c0 = s0.c
    psi0 = gaussian_wavepacket(space, s0.x, s0.p, s0.vx, c0)
    psi = np.tile(psi0, (nb, 1))
    init_belief = GaussianBelief.at_rest(b0.x, b0.vx, b0.vp, b0.c, b0.p, n=nb)
    belief = init_belief

    streams = [(NoiseStream(cfg.master_seed, i, MEASUREMENT), NoiseStream(cfg.master_seed, i, THERMAL))
               for i in traj_ids]
    times = np.arange(cfg.n_steps + 1) * dt
    x0s, p0s = cfg.schedule.targets(times)

    n_rec = len(cfg.record_times)
    series = {c: np.full((n_rec, nb), np.nan) for c in TRAJECTORY_COLUMNS if c != "t"}
    aborted = np.zeros(nb, dtype=bool)
    resets = np.zeros(nb, dtype=int)
    edge = np.zeros(nb)
    edge_mask = np.abs(space.x_diag) > EDGE_FRACTION * cfg.grid.x_max

    dw0 = dw1 = None
    rec = 0
    for i in range(cfg.n_steps + 1):
        if i % NOISE_BLOCK == 0:
            n_blk = min(NOISE_BLOCK, cfg.n_steps + 1 - i)
            dw0 = wiener_block([s[0] for s in streams], dt, n_blk)
            dw1 = wiener_block([s[1] for s in streams], dt, n_blk)
        j = i % NOISE_BLOCK
        out = lqg_feedback(belief, (x0s[i], p0s[i]), cfg.potential, cfg.ctrl)
        u = np.broadcast_to(np.asarray(out.u, dtype=float), (nb,)).copy()
        mean_x = prop.measured_mean(psi)
        dQ = mean_x * dt + dw0[j]

        if i % cfg.record_every == 0:
            mom = pure_moments(psi, space)
            row = {
                "x_true": mom["x"], "p_true": mom["p"], "x_est": belief.mean_x,
                "p_est": belief.mean_p, "Vx": belief.Vx, "Vp": belief.Vp, "C": belief.C,
                "u": u, "dQ": dQ, "energy": mom["energy"], "purity": gaussian_purity(belief),
            }
            for key, val in row.items():
                series[key][rec] = np.where(aborted, np.nan, val)
            edge = np.maximum(edge, np.abs(psi[:, edge_mask]) ** 2 @ np.ones(edge_mask.sum()))
            rec += 1
        if i == cfg.n_steps:
            break

        psi, failed = prop.sse(psi, u, dw0[j], dw1[j], mean=mean_x)
        belief = gaussian_filter_step(belief, cfg.potential, cfg.model, u, dQ, dt,
                                      on_divergence="ignore")
        belief, reset = belief_reset(belief, init_belief)
        resets += reset
        newly = failed & ~aborted
        if np.any(newly):
            for tid in np.asarray(traj_ids)[newly]:
                log.warning("trajectory %d aborted at t=%.4g: SSE norm collapse", tid, times[i])
            aborted |= newly
        if np.any(aborted):
            # keep aborted rows finite so they do not poison vectorised ops
            psi[aborted] = psi0
            belief = dataclasses.replace(
                belief, **{f: np.where(aborted, getattr(init_belief, f), getattr(belief, f))
                           for f in ("mean_x", "mean_p", "Vx", "Vp", "C")})
    return _ChunkResult(list(traj_ids), series, aborted, resets, edge)


@dataclass
class TrajectoryResult:
    traj_id: int
    t: np.ndarray
    series: dict
    aborted: bool
    resets: int
    edge_prob: float

    def __getitem__(self, key):
        return self.t if key == "t" else self.series[key]

    def to_csv(self, path) -> None:
        cols = [self.t] + [self.series[c] for c in TRAJECTORY_COLUMNS[1:]]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRAJECTORY_COLUMNS)
            for row in zip(*cols):
                w.writerow([repr(float(v)) for v in row])


def run_trajectory(cfg: SimConfig, traj_id: int = 0) -> TrajectoryResult:
    """One closed-loop trajectory; a pure function of ``(cfg, traj_id)``."""
    res = _simulate_chunk(cfg, [traj_id])
    return TrajectoryResult(
        traj_id=traj_id,
        t=cfg.record_times,
        series={k: v[:, 0].copy() for k, v in res.series.items()},
        aborted=bool(res.aborted[0]),
        resets=int(res.resets[0]),
        edge_prob=float(res.edge_prob[0]),
    )


@dataclass
class EnsembleStats:
    t: np.ndarray
    rms: np.ndarray
    mean_energy: np.ndarray
    mean_purity: np.ndarray
    mean_abs_u: np.ndarray
    n_completed: int
    n_aborted: int
    reset_fraction: float = 0.0
    max_edge_prob: float = 0.0
    trajectories: list = field(default_factory=list, repr=False)

    @property
    def failed(self) -> bool:
        total = self.n_completed + self.n_aborted
        return self.n_aborted > ABORT_FRACTION_LIMIT * total

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "rms", "mean_energy", "mean_purity", "mean_abs_u"])
            for row in zip(self.t, self.rms, self.mean_energy, self.mean_purity, self.mean_abs_u):
                w.writerow([repr(float(v)) for v in row])


def run_ensemble(cfg: SimConfig, threads: int = 1, keep_trajectories: bool = False,
                 progress=None) -> EnsembleStats:
    """Simulate ``cfg.n_traj`` trajectories and reduce them to ensemble statistics.

    Aborted trajectories are excluded and counted; ``stats.failed`` is set
    when more than 5% abort.
    """
    space = build_space(cfg.grid, cfg.potential)
    ids = list(range(cfg.n_traj))
    chunks = [ids[i:i + cfg.chunk_size] for i in range(0, len(ids), cfg.chunk_size)]

    def work(chunk):
        res = _simulate_chunk(cfg, chunk, space)
        if progress is not None:
            progress(len(chunk))
        return res

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, chunks))
    else:
        results = [work(c) for c in chunks]

    t = cfg.record_times
    x0, _ = cfg.schedule.targets(t)
    ok_cols = []
    n_aborted = 0
    resets = 0
    edge = 0.0
    keep = []
    for res in results:
        ok = ~res.aborted
        n_aborted += int(np.sum(res.aborted))
        resets += int(np.sum(res.resets[ok]))
        if np.any(ok):
            edge = max(edge, float(np.max(res.edge_prob[ok])))
        ok_cols.append({k: v[:, ok] for k, v in res.series.items()})
        if keep_trajectories:
            for j, tid in enumerate(res.traj_ids):
                keep.append(TrajectoryResult(tid, t, {k: v[:, j].copy() for k, v in res.series.items()},
                                             bool(res.aborted[j]), int(res.resets[j]),
                                             float(res.edge_prob[j])))
    cat = {k: np.concatenate([c[k] for c in ok_cols], axis=1) for k in ok_cols[0]}
    n_ok = cat["x_true"].shape[1]
    if n_ok == 0:
        nan = np.full(t.shape, np.nan)
        return EnsembleStats(t, nan, nan, nan, nan, 0, n_aborted, trajectories=keep)
    stats = EnsembleStats(
        t=t,
        rms=rms_deviation(cat["x_true"].T, x0),
        mean_energy=cat["energy"].mean(axis=1),
        mean_purity=cat["purity"].mean(axis=1),
        mean_abs_u=np.abs(cat["u"]).mean(axis=1),
        n_completed=n_ok,
        n_aborted=n_aborted,
        reset_fraction=resets / (n_ok * cfg.n_steps),
        max_edge_prob=edge,
        trajectories=keep,
    )
    if stats.failed:
        log.error("%d of %d trajectories aborted", n_aborted, cfg.n_traj)
    return stats


# -- statistics ----------------------------------------------------------------

def rms_deviation(x_true, x_target) -> np.ndarray:
    """Per-time ``sqrt(mean_j (x_j(t) - x0(t))**2)``.

    ``x_true`` has shape ``(n_traj, n_t)`` (or is a list of aligned series);
    ``x_target`` is a scalar or a length-``n_t`` array.
    """
    x = np.atleast_2d(np.asarray(x_true, dtype=float))
    d = x - np.asarray(x_target, dtype=float)
    return np.sqrt(np.mean(d**2, axis=0))


def plateau_level(t, curve, start: float, end: float) -> float:
    t = np.asarray(t)
    sel = (t >= start) & (t < end)
    if not np.any(sel):
        raise ConfigError(f"no samples in plateau window [{start}, {end})")
    return float(np.mean(np.asarray(curve)[sel]))


@dataclass(frozen=True)
class RelaxationFit:
    tau: float
    amplitude: float
    plateau: float
    ok: bool
    message: str = ""


def fit_relaxation(t, curve, switch_time: float, plateau: float | None = None,
                   window: float | None = None) -> RelaxationFit:
    """Least-squares fit of ``curve - plateau = a exp(-(t - t_s) / tau)`` after a switch.

    With ``plateau=None`` the plateau is fitted as a third parameter. A
    curve that does not decay returns ``ok=False``.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(curve, dtype=float)
    sel = t >= switch_time
    if window is not None:
        sel &= t <= switch_time + window
    s = t[sel] - switch_time
    yy = y[sel]
    if s.size < 4:
        return RelaxationFit(math.nan, math.nan, math.nan, False, "too few samples after switch")
    span = s[-1] - s[0]
    tail = float(np.mean(yy[-max(2, yy.size // 10):]))
    head = float(yy[0])
    if not head > tail:
        return RelaxationFit(math.nan, math.nan, tail, False, "curve does not decay")
    a0 = head - (tail if plateau is None else plateau)
    # initial tau from the 1/e crossing
    target = (tail if plateau is None else plateau) + a0 / math.e
    below = np.nonzero(yy <= target)[0]
    tau0 = float(s[below[0]]) if below.size and s[below[0]] > 0 else span / 3
    try:
        if plateau is None:
            popt, _ = curve_fit(lambda s, a, tau, c: a * np.exp(-s / tau) + c, s, yy,
                                p0=(a0, tau0, tail), maxfev=20000)
            a, tau, c = popt
        else:
            popt, _ = curve_fit(lambda s, a, tau: a * np.exp(-s / tau), s, yy - plateau,
                                p0=(a0, tau0), maxfev=20000)
            (a, tau), c = popt, plateau
    except (RuntimeError, ValueError) as exc:
        return RelaxationFit(math.nan, math.nan, tail, False, f"fit failed: {exc}")
    if not (tau > 0 and a > 0 and np.isfinite(tau)):
        return RelaxationFit(float(tau), float(a), float(c), False, "fit is not a decay")
    return RelaxationFit(float(tau), float(a), float(c), True)


def summarize(stats: EnsembleStats, cfg: SimConfig) -> dict:
    """Plateau RMS before the first switch and relaxation fits after every switch."""
    switches = [s for s in cfg.schedule.switch_times if s < cfg.t_end]
    first_end = switches[0] if switches else cfg.t_end
    out = {
        "n_completed": stats.n_completed,
        "n_aborted": stats.n_aborted,
        "plateau_rms": plateau_level(stats.t, stats.rms, cfg.plateau_start, first_end),
        "fits": [],
    }
    # The decay is measured relative to the pre-switch plateau; a fit with the
    # plateau left free is kept as a diagnostic only.
    bounds = switches + [cfg.t_end]
    free_taus = []
    for ts, te in zip(switches, bounds[1:]):
        win = min(cfg.fit_window, te - ts)
        fit = fit_relaxation(stats.t, stats.rms, ts, plateau=out["plateau_rms"], window=win)
        free = fit_relaxation(stats.t, stats.rms, ts, window=win)
        out["fits"].append({"switch_time": ts, **dataclasses.asdict(fit), "tau_free_plateau": free.tau})
        if free.ok:
            free_taus.append(free.tau)
    taus = [f["tau"] for f in out["fits"] if f["ok"]]
    out["tau"] = float(np.mean(taus)) if taus else math.nan
    out["tau_free_plateau"] = float(np.mean(free_taus)) if free_taus else math.nan
    return out

"""Discrete-time quantum optimal control by dynamic programming.

A step from belief ``rho`` at time ``t`` consists of choosing a control
``u`` (a unitary), evolving ``rho -> U rho U^H`` and measuring with the
Kraus set attached to ``u``. Every outcome ``y`` yields a child belief, so
the controller picks ``u`` knowing all outcomes obtained so far. After
``horizon`` steps the final cost is charged.

``bellman_solve`` runs the backward recursion over the reachable belief
tree; ``brute_force_search`` enumerates every adaptive strategy and is kept
as an independent check.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import expm

from .errors import ConfigError, UsageError

__all__ = [
    "DiscreteControlProblem",
    "StrategyNode",
    "povm_update",
    "bellman_solve",
    "brute_force_search",
    "evaluate_strategy",
    "evaluate_sequence",
    "count_strategies",
    "fixed_sequences",
    "random_qubit_problem",
    "infidelity_cost",
    "observable_cost",
    "load_problem",
    "format_strategy",
]

PROB_EPS = 1e-14
BRUTE_FORCE_BUDGET = 1_000_000


def _is_unitary(u: np.ndarray, tol: float = 1e-10) -> bool:
    return bool(np.allclose(u.conj().T @ u, np.eye(u.shape[0]), atol=tol))


@dataclass
class DiscreteControlProblem:
    """Finite-horizon problem on a ``dim``-level system.

    ``controls[j]`` is the unitary applied by control ``j`` and ``kraus[j]``
    the measurement performed afterwards. ``stage_cost(rho, j, t)`` is
    multiplied by ``dt``; ``final_cost(rho)`` is charged at the horizon.
    """

    dim: int
    horizon: int
    controls: Sequence[np.ndarray]
    kraus: Sequence[Sequence[np.ndarray]]
    final_cost: Callable[[np.ndarray], float]
    stage_cost: Callable[[np.ndarray, int, int], float] | None = None
    dt: float = 1.0
    labels: Sequence[str] | None = None

    def __post_init__(self):
        if self.horizon < 0:
            raise ConfigError("horizon must be >= 0")
        if len(self.controls) == 0:
            raise ConfigError("need at least one control")
        if len(self.kraus) != len(self.controls):
            raise ConfigError("one Kraus set per control is required")
        self.controls = [np.asarray(u, dtype=complex) for u in self.controls]
        self.kraus = [[np.asarray(k, dtype=complex) for k in ks] for ks in self.kraus]
        eye = np.eye(self.dim)
        for j, (u, ks) in enumerate(zip(self.controls, self.kraus)):
            if u.shape != (self.dim, self.dim) or not _is_unitary(u):
                raise ConfigError(f"control {j} is not a {self.dim}x{self.dim} unitary")
            total = sum(k.conj().T @ k for k in ks)
            if np.max(np.abs(total - eye)) > 1e-10:
                raise ConfigError(f"Kraus set of control {j} is not complete")
        if self.labels is None:
            self.labels = [f"u{j}" for j in range(len(self.controls))]

    def stage(self, rho: np.ndarray, j: int, t: int) -> float:
        if self.stage_cost is None:
            return 0.0
        return float(self.stage_cost(rho, j, t)) * self.dt


@dataclass
class StrategyNode:
    """A reachable belief with the control chosen there and its outcome branches.

    ``children`` holds ``(outcome, probability, node)`` triples; terminal
    nodes have ``control is None``.
    """

    rho: np.ndarray
    t: int
    cost: float
    control: int | None = None
    children: list = field(default_factory=list)

    def walk(self):
        yield self
        for _, _, child in self.children:
            yield from child.walk()


def povm_update(rho: np.ndarray, omega: np.ndarray):
    """Posterior ``Omega rho Omega^H / p`` and outcome probability ``p``.

    A zero-probability outcome returns ``(None, 0.0)``.
    """
    rho = np.asarray(rho, dtype=complex)
    omega = np.asarray(omega, dtype=complex)
    if omega.shape != rho.shape:
        raise UsageError("Kraus operator and state dimensions differ")
    post = omega @ rho @ omega.conj().T
    p = float(np.trace(post).real)
    if p <= PROB_EPS:
        return None, 0.0
    post = post / p
    return 0.5 * (post + post.conj().T), p


def _branches(prob: DiscreteControlProblem, rho: np.ndarray, j: int):
    u = prob.controls[j]
    evolved = u @ rho @ u.conj().T
    out = []
    for y, om in enumerate(prob.kraus[j]):
        child, p = povm_update(evolved, om)
        if child is not None:
            out.append((y, p, child))
    return out


def bellman_solve(prob: DiscreteControlProblem, rho_init, t0: int = 0):
    """Minimal expected cost from ``rho_init`` at step ``t0`` and the optimal strategy.

    Returns ``(cost, root)`` where ``root`` is a :class:`StrategyNode` tree
    covering every reachable node.
    """
    rho_init = np.asarray(rho_init, dtype=complex)
    if not 0 <= t0 <= prob.horizon:
        raise UsageError("t0 outside [0, horizon]")

    def solve(rho, t):
        if t == prob.horizon:
            c = float(prob.final_cost(rho))
            return StrategyNode(rho, t, c)
        best = None
        for j in range(len(prob.controls)):
            kids = [(y, p, solve(child, t + 1)) for y, p, child in _branches(prob, rho, j)]
            c = prob.stage(rho, j, t) + sum(p * node.cost for _, p, node in kids)
            if best is None or c < best.cost:
                best = StrategyNode(rho, t, c, j, kids)
        return best

    root = solve(rho_init, t0)
    return root.cost, root


def count_strategies(prob: DiscreteControlProblem, rho_init, t0: int = 0) -> int:
    """Number of distinct adaptive strategies on the reachable tree."""

    def count(rho, t):
        if t == prob.horizon:
            return 1
        total = 0
        for j in range(len(prob.controls)):
            n = 1
            for _, _, child in _branches(prob, rho, j):
                n *= count(child, t + 1)
                if n > 10 * BRUTE_FORCE_BUDGET:
                    return n
            total += n
        return total

    return count(np.asarray(rho_init, dtype=complex), t0)


def _enumerate(prob, rho, t):
    """Yield every strategy from (rho, t) as nested ``(control, {outcome: sub})``."""
    if t == prob.horizon:
        yield None
        return
    for j in range(len(prob.controls)):
        kids = _branches(prob, rho, j)
        subs = [list(_enumerate(prob, child, t + 1)) for _, _, child in kids]
        for combo in itertools.product(*subs):
            yield (j, {y: s for (y, _, _), s in zip(kids, combo)})


def evaluate_strategy(prob: DiscreteControlProblem, rho_init, strategy, t0: int = 0) -> float:
    """Expected total cost of a nested-tuple strategy by forward evaluation."""

    def value(rho, t, strat):
        if t == prob.horizon:
            return float(prob.final_cost(rho))
        j, sub = strat
        u = prob.controls[j]
        evolved = u @ rho @ u.conj().T
        total = prob.stage(rho, j, t)
        for y, om in enumerate(prob.kraus[j]):
            unnorm = om @ evolved @ om.conj().T
            p = float(np.trace(unnorm).real)
            if p <= PROB_EPS:
                continue
            total += p * value(unnorm / p, t + 1, sub[y])
        return total

    return value(np.asarray(rho_init, dtype=complex), t0, strategy)


def brute_force_search(prob: DiscreteControlProblem, rho_init, t0: int = 0,
                       budget: int = BRUTE_FORCE_BUDGET):
    """Exhaustive minimum over all measurement-adaptive strategies.

    Returns ``(cost, strategy)`` with the strategy as nested tuples.
    """
    n = count_strategies(prob, rho_init, t0)
    if n > budget:
        raise UsageError(f"{n} strategies exceed the enumeration budget of {budget}")
    best_cost, best = np.inf, None
    for strat in _enumerate(prob, np.asarray(rho_init, dtype=complex), t0):
        c = evaluate_strategy(prob, rho_init, strat, t0)
        if c < best_cost:
            best_cost, best = c, strat
    return best_cost, best


def fixed_sequences(prob: DiscreteControlProblem):
    return itertools.product(range(len(prob.controls)), repeat=prob.horizon)


def evaluate_sequence(prob: DiscreteControlProblem, rho_init, seq: Sequence[int]) -> float:
    """Expected cost of a non-adaptive control sequence."""
    if len(seq) != prob.horizon:
        raise UsageError("sequence length must equal the horizon")

    def as_strategy(t):
        if t == prob.horizon:
            return None
        sub = as_strategy(t + 1)
        return (seq[t], {y: sub for y in range(len(prob.kraus[seq[t]]))})

    return evaluate_strategy(prob, rho_init, as_strategy(0))


def infidelity_cost(target) -> Callable[[np.ndarray], float]:
    """``1 - <target|rho|target>``."""
    v = np.asarray(target, dtype=complex)
    v = v / np.linalg.norm(v)
    return lambda rho: float(1.0 - np.real(v.conj() @ rho @ v))


def observable_cost(matrix) -> Callable[[np.ndarray], float]:
    """``Tr(M rho)`` for a Hermitian cost observable ``M``."""
    m = np.asarray(matrix, dtype=complex)
    return lambda rho: float(np.real(np.trace(m @ rho)))


def _random_unitary(rng, d):
    z = (rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    return q * (np.diagonal(r) / np.abs(np.diagonal(r)))


def _random_kraus_pair(rng, d):
    # Columns of a random isometry C^d -> C^(2d) split into two Kraus blocks.
    z = rng.normal(size=(2 * d, d)) + 1j * rng.normal(size=(2 * d, d))
    q, _ = np.linalg.qr(z)
    return [q[:d, :], q[d:, :]]


def random_density(rng, d):
    g = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


def random_qubit_problem(rng: np.random.Generator, horizon: int = 2, n_controls: int = 2,
                         with_stage_cost: bool = True):
    """Random qubit problem with two-outcome measurements; returns ``(problem, rho0)``."""
    d = 2
    controls = [_random_unitary(rng, d) for _ in range(n_controls)]
    kraus = [_random_kraus_pair(rng, d) for _ in range(n_controls)]
    target = rng.normal(size=d) + 1j * rng.normal(size=d)
    stage = None
    if with_stage_cost:
        g = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
        obs = 0.5 * (g + g.conj().T)
        ucost = rng.uniform(0.0, 0.2, size=n_controls)
        stage = lambda rho, j, t: float(np.real(np.trace(obs @ rho))) * 0.1 + ucost[j]
    prob = DiscreteControlProblem(d, horizon, controls, kraus, infidelity_cost(target), stage)
    return prob, random_density(rng, d)


# -- config loading ---------------------------------------------------------

def _matrix(spec) -> np.ndarray:
    if isinstance(spec, dict):
        re = np.asarray(spec.get("re", 0.0), dtype=float)
        im = np.asarray(spec.get("im", np.zeros_like(re)), dtype=float)
        return re + 1j * im
    return np.asarray(spec, dtype=complex)


def _cost_from_spec(spec, dim):
    kind = spec.get("type")
    if kind == "infidelity":
        return infidelity_cost(_matrix(spec["target"]))
    if kind == "observable":
        return observable_cost(_matrix(spec["matrix"]))
    raise ConfigError(f"unknown cost type {kind!r}")


def load_problem(path) -> tuple[DiscreteControlProblem, np.ndarray]:
    """Read a problem definition from JSON.

    Matrices are ``{"re": [[...]], "im": [[...]]}``. Controls give either a
    ``unitary`` or a ``hamiltonian`` with ``duration``; measurements are a
    list of Kraus sets (one per control) or a single shared ``measurement``.
    """
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read problem file {path}: {exc}") from exc
    try:
        dim = int(data["dim"])
        controls, labels = [], []
        for j, c in enumerate(data["controls"]):
            if "unitary" in c:
                controls.append(_matrix(c["unitary"]))
            else:
                controls.append(expm(-1j * _matrix(c["hamiltonian"]) * float(c.get("duration", 1.0))))
            labels.append(c.get("label", f"u{j}"))
        if "measurements" in data:
            kraus = [[_matrix(k) for k in ks] for ks in data["measurements"]]
        else:
            shared = [_matrix(k) for k in data["measurement"]]
            kraus = [shared for _ in controls]
        final = _cost_from_spec(data["final_cost"], dim)
        stage = None
        if "stage_cost" in data:
            sc = data["stage_cost"]
            base = _cost_from_spec(sc, dim) if "type" in sc else (lambda rho: 0.0)
            ucost = list(sc.get("control_costs", [0.0] * len(controls)))
            stage = lambda rho, j, t: base(rho) + ucost[j]
        rho0 = _matrix(data["initial_state"])
        if rho0.ndim == 1:
            rho0 = np.outer(rho0, rho0.conj())
        rho0 = rho0 / np.trace(rho0).real
        prob = DiscreteControlProblem(dim, int(data["horizon"]), controls, kraus, final, stage,
                                      float(data.get("dt", 1.0)), labels)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"malformed problem file {path}: {exc}") from exc
    return prob, rho0


def format_strategy(prob: DiscreteControlProblem, node: StrategyNode, indent: str = "") -> str:
    lines = []

    def visit(n, pre, path):
        if n.control is None:
            lines.append(f"{pre}t={n.t} {path}final cost={n.cost:.6g}")
            return
        lines.append(f"{pre}t={n.t} {path}-> {prob.labels[n.control]}  (cost-to-go {n.cost:.6g})")
        for y, p, child in n.children:
            visit(child, pre + "  ", f"[y={y}, p={p:.4f}] ")

    visit(node, indent, "")
    return "\n".join(lines)

import json

import numpy as np
import pytest

from qfeedback.bellman import (DiscreteControlProblem, bellman_solve, brute_force_search,
                               count_strategies, evaluate_sequence, evaluate_strategy,
                               fixed_sequences, format_strategy, infidelity_cost, load_problem,
                               observable_cost, povm_update, random_qubit_problem)
from qfeedback.errors import ConfigError, UsageError

from conftest import random_rho

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
P0 = np.diag([1.0, 0.0]).astype(complex)
P1 = np.diag([0.0, 1.0]).astype(complex)


def flip_problem(horizon=2):
    """Unknown basis state, Z readout after every step, goal |0>."""
    return DiscreteControlProblem(2, horizon, [I2, X], [[P0, P1], [P0, P1]],
                                  infidelity_cost([1, 0]), labels=["idle", "flip"])


def test_povm_trivial_cases(rng):
    rho = random_rho(rng, 2)
    post, p = povm_update(rho, I2)
    assert np.isclose(p, 1.0) and np.allclose(post, rho)
    post, p = povm_update(I2 / 2, P0)
    assert np.isclose(p, 0.5) and np.allclose(post, P0)
    assert povm_update(P1, P0) == (None, 0.0)
    with pytest.raises(UsageError):
        povm_update(np.eye(3), P0)


def test_povm_matches_naive_formula(rng):
    for _ in range(100):
        rho = random_rho(rng, 2)
        z = rng.normal(size=(4, 2)) + 1j * rng.normal(size=(4, 2))
        q, _ = np.linalg.qr(z)
        ps = []
        for om in (q[:2], q[2:]):
            post, p = povm_update(rho, om)
            unn = om @ rho @ om.conj().T
            assert abs(p - np.trace(om.conj().T @ om @ rho).real) <= 1e-12
            assert np.max(np.abs(post - unn / np.trace(unn))) <= 1e-12
            assert np.linalg.eigvalsh(post).min() > -1e-12
            ps.append(p)
        assert abs(sum(ps) - 1) <= 1e-12


def test_problem_validation():
    with pytest.raises(ConfigError):
        DiscreteControlProblem(2, 1, [2 * I2], [[I2]], infidelity_cost([1, 0]))
    with pytest.raises(ConfigError):
        DiscreteControlProblem(2, 1, [I2], [[P0]], infidelity_cost([1, 0]))
    with pytest.raises(ConfigError):
        DiscreteControlProblem(2, -1, [I2], [[I2]], infidelity_cost([1, 0]))


def test_horizon_zero_is_final_cost(rng):
    rho = random_rho(rng, 2)
    prob = DiscreteControlProblem(2, 0, [I2], [[I2]], infidelity_cost([1, 0]))
    cost, root = bellman_solve(prob, rho)
    assert np.isclose(cost, 1 - rho[0, 0].real) and root.control is None


def test_single_control_single_step(rng):
    rho = random_rho(rng, 2)
    h = np.array([[0.3, 0.1], [0.1, -0.2]], complex)
    stage = lambda r, j, t: np.trace(h @ r).real
    prob = DiscreteControlProblem(2, 1, [X], [[P0, P1]], observable_cost(h), stage, dt=0.1)
    cost, _ = bellman_solve(prob, rho)
    ev = X @ rho @ X
    ref = 0.1 * np.trace(h @ rho).real
    for om in (P0, P1):
        p = np.trace(om @ ev @ om).real
        ref += p * np.trace(h @ (om @ ev @ om) / p).real
    assert np.isclose(cost, ref, atol=1e-14)


def test_bellman_equals_brute_force_on_random_problems(rng):
    for _ in range(20):
        prob, rho = random_qubit_problem(rng)
        c_dp, root = bellman_solve(prob, rho)
        c_bf, strat = brute_force_search(prob, rho)
        assert abs(c_dp - c_bf) <= 1e-12
        assert abs(evaluate_strategy(prob, rho, strat) - c_bf) <= 1e-14
        # every reachable non-terminal node carries a control
        assert all(n.control is not None for n in root.walk() if n.t < prob.horizon)


def test_bellman_three_steps_three_controls(rng):
    prob, rho = random_qubit_problem(rng, horizon=3, n_controls=3, with_stage_cost=False)
    c_dp, _ = bellman_solve(prob, rho)
    c_bf, _ = brute_force_search(prob, rho)
    assert abs(c_dp - c_bf) <= 1e-12


def test_adaptive_beats_every_fixed_sequence():
    prob = flip_problem()
    rho = I2 / 2
    c_dp, root = bellman_solve(prob, rho)
    fixed = [evaluate_sequence(prob, rho, s) for s in fixed_sequences(prob)]
    assert len(fixed) == 4
    assert c_dp < min(fixed) - 0.4
    assert abs(c_dp) < 1e-15
    # after the first readout, the optimal choice depends on the outcome
    second = {y: node.control for y, _, node in root.children}
    assert second == {0: 0, 1: 1}


def test_optimum_no_worse_than_fixed_sequences(rng):
    for _ in range(10):
        prob, rho = random_qubit_problem(rng)
        c_dp, _ = bellman_solve(prob, rho)
        assert all(c_dp <= evaluate_sequence(prob, rho, s) + 1e-14 for s in fixed_sequences(prob))


def test_brute_force_budget_and_counts(rng):
    prob, rho = random_qubit_problem(rng, horizon=2, n_controls=2)
    # 2 choices at the root, each with 2 outcomes x 2 choices below: 2 * 2**2
    assert count_strategies(prob, rho) == 8
    with pytest.raises(UsageError):
        brute_force_search(prob, rho, budget=3)
    with pytest.raises(UsageError):
        evaluate_sequence(prob, rho, [0])


def test_load_problem_round_trip(tmp_path):
    spec = {
        "dim": 2, "horizon": 2,
        "controls": [{"label": "idle", "unitary": {"re": [[1, 0], [0, 1]]}},
                     {"label": "flip", "hamiltonian": {"re": [[0, 1], [1, 0]]},
                      "duration": np.pi / 2}],
        "measurement": [{"re": [[1, 0], [0, 0]]}, {"re": [[0, 0], [0, 1]]}],
        "final_cost": {"type": "infidelity", "target": [1, 0]},
        "stage_cost": {"control_costs": [0.0, 0.01]},
        "initial_state": {"re": [[0.5, 0], [0, 0.5]]},
    }
    path = tmp_path / "p.json"
    path.write_text(json.dumps(spec))
    prob, rho = load_problem(path)
    cost, root = bellman_solve(prob, rho)
    assert np.isclose(cost, 0.5 * 0.01)   # flip only on outcome 1
    text = format_strategy(prob, root)
    assert "flip" in text and "idle" in text
    spec["final_cost"] = {"type": "bogus"}
    path.write_text(json.dumps(spec))
    with pytest.raises(ConfigError):
        load_problem(path)
    with pytest.raises(ConfigError):
        load_problem(tmp_path / "missing.json")

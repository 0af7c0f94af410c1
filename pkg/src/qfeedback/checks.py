"""Fast oracle and invariant checks behind ``qfeedback check``.

Each check compares an implementation path with an independent,
deliberately naive computation and returns ``(name, passed, detail)``.
"""

from __future__ import annotations

import numpy as np

from .bellman import bellman_solve, brute_force_search, povm_update, random_qubit_problem
from .control import ControlParams, lqg_feedback
from .dynamics import MeasurementModel, me_step, mixed_moments
from .estimator import (GaussianBelief, free_particle_system, gaussian_filter_step,
                        kalman_bucy_step, riccati_steady_state)
from .hilbert import GridSpec, PotentialParams, build_space, gaussian_wavepacket, lindblad_D, superop_H


def _rand_herm(rng, d):
    g = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return 0.5 * (g + g.conj().T)


def _rand_rho(rng, d):
    g = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    r = g @ g.conj().T
    return r / np.trace(r)


def _naive_D(a, r):
    out = np.zeros_like(r)
    ad = a.conj().T
    out += 2 * a.dot(r).dot(ad)
    out -= ad.dot(a).dot(r)
    out -= r.dot(ad).dot(a)
    return out / 2


def check_superoperators(rng, n=100):
    err = 0.0
    for _ in range(n):
        a, r = _rand_herm(rng, 3), _rand_rho(rng, 3)
        err = max(err, np.abs(lindblad_D(a, r) - _naive_D(a, r)).max())
        lam = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
        naive = lam.dot(r) + r.dot(lam.conj().T) - np.trace((lam + lam.conj().T).dot(r)) * r
        err = max(err, np.abs(superop_H(lam, r) - naive).max())
    return "superoperators D, H vs naive formulas", err <= 1e-12, f"max err {err:.2e}"


def check_povm(rng, n=100):
    err = 0.0
    for _ in range(n):
        z = rng.normal(size=(4, 2)) + 1j * rng.normal(size=(4, 2))
        q, _ = np.linalg.qr(z)
        ks = [q[:2], q[2:]]
        r = _rand_rho(rng, 2)
        total = 0.0
        for k in ks:
            post, p = povm_update(r, k)
            unn = k.dot(r).dot(k.conj().T)
            err = max(err, abs(p - np.trace(unn).real), np.abs(post - unn / np.trace(unn)).max())
            total += p
        err = max(err, abs(total - 1.0))
    return "POVM update vs naive formula", err <= 1e-12, f"max err {err:.2e}"


def check_riccati():
    worst = 0.0
    for k, beta in [(0.3, 0.0), (0.3, 0.1), (1.0, 0.1)]:
        model = MeasurementModel(k, beta)
        b = GaussianBelief.at_rest(0.0)
        free = PotentialParams(0.0, 0.0)
        for _ in range(40000):
            b = gaussian_filter_step(b, free, model, 0.0, b.mean_x * 1e-3, 1e-3)
        c, vx, vp = riccati_steady_state(k, beta)
        worst = max(worst, abs(b.C / c - 1), abs(b.Vx / vx - 1), abs(b.Vp / vp - 1))
    return "free-particle observer reaches Riccati steady state", worst < 0.01, f"max rel err {worst:.2e}"


def check_kalman_bucy(rng):
    model = MeasurementModel(0.3, 0.1)
    sys = free_particle_system(model)
    free = PotentialParams(0.0, 0.0)
    b = GaussianBelief.at_rest(0.2)
    m, P = np.array([0.2, 0.0]), np.diag([0.5, 0.5])
    dt, err = 1e-3, 0.0
    for _ in range(5000):
        dq = rng.normal() * np.sqrt(dt)
        b = gaussian_filter_step(b, free, model, 0.0, dq, dt)
        m, P = kalman_bucy_step(m, P, sys, 0.0, dq, dt)
        err = max(err, abs(m[0] - b.mean_x), abs(m[1] - b.mean_p), abs(P[0, 0] - b.Vx),
                  abs(P[1, 1] - b.Vp), abs(P[0, 1] - b.C))
    return "Kalman-Bucy equals Gaussian observer (B = 0)", err <= 1e-10, f"max diff {err:.2e}"


def check_lqg(rng):
    params = PotentialParams()
    err = 0.0
    for _ in range(1000):
        b = GaussianBelief(rng.uniform(-6, 6), rng.uniform(-5, 5), 0.5, 0.5, 0.0)
        gamma = rng.uniform(0, 200)
        out = lqg_feedback(b, (3.0, 0.0), params, ControlParams(gamma))
        s = 2 * params.A - 12 * params.B * b.mean_x**2
        err = max(err, abs(out.u_tilde * (out.u_tilde - 2 * s) - gamma) / max(1.0, gamma))
    return "LQG gain identity u~(u~ - 2s) = gamma", err <= 1e-10, f"max rel err {err:.2e}"


def check_bellman(rng, n=20):
    err = 0.0
    for _ in range(n):
        prob, rho = random_qubit_problem(rng)
        c_dp, _ = bellman_solve(prob, rho)
        c_bf, _ = brute_force_search(prob, rho)
        err = max(err, abs(c_dp - c_bf))
    return "Bellman recursion equals brute-force search", err <= 1e-12, f"max diff {err:.2e}"


def check_heating():
    space = build_space(GridSpec(128, 24.0), PotentialParams(0.0, 0.0))
    model = MeasurementModel(0.0, 0.1)
    psi = gaussian_wavepacket(space, 0.0)
    rho = np.outer(psi, psi.conj())
    dt, energies = 2e-3, []
    for i in range(1001):
        if i % 100 == 0:
            energies.append(mixed_moments(rho, space)["energy"])
        rho = me_step(rho, space, model, 0.0, dt)
    rate = np.polyfit(np.arange(len(energies)) * 0.2, energies, 1)[0]
    return "free-particle heating rate (k=0, beta=0.1)", abs(rate - 0.1) <= 0.002, f"rate {rate:.5f}"


def run_checks(seed: int = 0):
    rng = np.random.default_rng(seed)
    return [
        check_superoperators(rng),
        check_povm(rng),
        check_lqg(rng),
        check_kalman_bucy(rng),
        check_riccati(),
        check_bellman(rng),
        check_heating(),
    ]

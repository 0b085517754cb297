"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v`` (summary lines appear in
the "acceptance criteria" section at the end).
"""

import json
import math
import time

import numpy as np
import pytest
from scipy.linalg import solve_continuous_lyapunov
from scipy.stats import poisson

from randswitch.cli import certificate_for, convergence_horizon, main
from randswitch.controller import integrate_closed_loop, phi, sontag_feedback, sontag_law, verify_decrease
from randswitch.dynamics import SwitchedSystem, integrate_switched
from randswitch.lyapunov import LyapunovFamily, SampleSpec, decay_rate_quadratic, decay_rate_sampled, mu_quadratic, mu_sampled
from randswitch.montecarlo import (
    BoundParams,
    EnsembleSpec,
    compare_expected_v,
    estimate_convergence,
    initial_value,
    mean_norm_from_run,
    mean_norm_passed,
    run_ensemble,
)
from randswitch.scenario import bundled_path, load
from randswitch.switching import SE_SLACK, check_markov_pmf_bound, constant_signal, q_params

TIMES = (0.5, 1.0, 2.0)
KMAX = 10
PATHS = 100_000


# ---------------------------------------------------------------- 1: switch-count pmf


def test_1a_pmf_bound_symmetric_chain(acceptance):
    Q = [[-1.0, 1.0], [1.0, -1.0]]
    t0 = time.perf_counter()
    rep = check_markov_pmf_bound(Q, [1.0, 0.0], TIMES, KMAX, PATHS, seed=0)
    elapsed = time.perf_counter() - t0
    one_sided = all(c.estimate <= c.bound + SE_SLACK * c.stderr for c in rep.cells)
    # N(t) is exactly Poisson(t) here, so the estimate should also sit near the bound
    worst = 0.0
    for c in rep.cells:
        p = poisson.pmf(c.k, c.t)
        se = max(c.stderr, math.sqrt(p * (1 - p) / PATHS))
        worst = max(worst, abs(c.estimate - c.bound) / se)
    near = worst <= SE_SLACK
    ok = one_sided and near and elapsed < 30
    acceptance(
        "1a pmf bound, Q=[[-1,1],[1,-1]], 1e5 paths",
        ok,
        f"one-sided={one_sided} two-sided worst z={worst:.2f} time={elapsed:.1f}s",
    )
    assert ok


def test_1b_pmf_bound_asymmetric_chain(acceptance):
    # Expected to fail: from mode 1, P(N(1) = 1) = 0.465 exceeds exp(-2) 2 = 0.271.
    Q = [[-2.0, 2.0], [1.0, -1.0]]
    t0 = time.perf_counter()
    rep = check_markov_pmf_bound(Q, [1.0, 0.0], TIMES, KMAX, PATHS, seed=0)
    elapsed = time.perf_counter() - t0
    bad = [(c.t, c.k) for c in rep.cells if c.estimate > c.bound + SE_SLACK * c.stderr]
    ok = not bad and elapsed < 30
    acceptance("1b pmf bound, Q=[[-2,2],[1,-1]], one-sided", ok, f"cells over bound: {bad}")
    assert ok


# ---------------------------------------------------------------- 2: expected V


@pytest.mark.parametrize("name", ["mjls2", "mjls2b"])
def test_2_expected_v_bound(acceptance, name):
    t0 = time.perf_counter()
    sc = load(name)
    cert = certificate_for(sc)
    params = BoundParams(cert.mu, cert.lam_circ, cert.lam_tilde, cert.lam_bar, cert.M)
    V0 = initial_value(sc.lyapunov, sc.x0, sc.initial)
    grid = tuple(np.linspace(0.0, 3.0, 20))
    spec = EnsembleSpec(10_000, 3.0, sc.h, 0, grid)
    run = run_ensemble(sc.system, sc.generator, sc.initial, sc.x0, spec, V=sc.lyapunov)
    cmp = compare_expected_v(run, V0, params)
    elapsed = time.perf_counter() - t0
    mu_ok = cert.mu < cert.threshold and (name == "mjls2" or cert.mu > 1)
    ok = cert.passed and mu_ok and cmp.passed and all(r.passed for r in cmp.rows) and elapsed < 120
    acceptance(
        f"2 E[V] bound, {name}, 1e4 trajectories",
        ok,
        f"mu={cert.mu:.6g} lam_circ={cert.lam_circ:.6g} gate={cert.verdict} time={elapsed:.1f}s",
    )
    assert ok


# ---------------------------------------------------------------- 3: integrator order


def _decay_error(h):
    sys = SwitchedSystem.linear([[[-1.0]]])
    return abs(integrate_switched(sys, constant_signal(0, 1.0), [1.0], h, 1.0).final_state[0] - math.exp(-1.0))


def test_3_integrator_order(acceptance):
    ratio = _decay_error(1e-2) / _decay_error(5e-3)
    err = _decay_error(1e-3)
    ok = 12 <= ratio <= 20 and err < 1e-9
    acceptance("3 RK4 order", ok, f"ratio={ratio:.3f} err(1e-3)={err:.2e}")
    assert ok


# ---------------------------------------------------------------- 4: mu and decay oracles


def _spd(rng, n=3):
    Qm, _ = np.linalg.qr(rng.normal(size=(n, n)))
    return Qm @ np.diag(np.exp(rng.uniform(-1.5, 1.5, n))) @ Qm.T


def test_4_mu_and_decay_oracles(acceptance):
    rng = np.random.default_rng(2024)
    spec = SampleSpec(100_000)
    mu_errs, lam_errs = [], []
    mu_ok = lam_ok = True
    for i in range(20):
        P1, P2 = _spd(rng), _spd(rng)
        exact = mu_quadratic([P1, P2])
        sampled = mu_sampled(LyapunovFamily.quadratic([P1, P2]), spec, seed=i)
        mu_errs.append((exact - sampled) / exact)
        mu_ok &= sampled <= exact * (1 + 1e-12) and sampled >= 0.99 * exact
    for i in range(20):
        A = rng.normal(size=(3, 3))
        A -= (np.max(np.linalg.eigvals(A).real) + rng.uniform(0.1, 2.0)) * np.eye(3)
        P = solve_continuous_lyapunov(A.T, -np.eye(3))
        exact = decay_rate_quadratic([A], [P])
        sampled = decay_rate_sampled(SwitchedSystem.linear([A]), LyapunovFamily.quadratic([P]), spec, seed=i)
        lam_errs.append((sampled - exact) / exact)
        lam_ok &= sampled >= exact * (1 - 1e-10) and sampled <= 1.01 * exact
    ok = mu_ok and lam_ok
    acceptance(
        "4 mu / decay-rate oracles, 20 + 20 instances",
        ok,
        f"max rel gap mu={max(mu_errs):.2e} lam={max(lam_errs):.2e}",
    )
    assert ok


# ---------------------------------------------------------------- 5: universal formula


def test_5_sontag_scalar(acceptance):
    rng = np.random.default_rng(5)
    a = rng.normal(size=10_000) * np.exp(rng.uniform(-5, 5, 10_000))
    b = rng.normal(size=10_000) * np.exp(rng.uniform(-5, 5, 10_000))
    b[b == 0] = 1.0
    resid = np.abs((phi(a, b) * b - a) - np.hypot(a, b)) / np.hypot(a, b)
    ident = float(np.max(resid)) <= 1e-12

    sys = SwitchedSystem.from_expressions(1, [["x1"]], controls=[[["1"]]])
    V = LyapunovFamily.from_sources(["0.5*x1^2"], 1)
    k1 = sontag_feedback(sys, V, 0, 1.0, [1.0])[0]
    gain = abs(k1 + (1.5 + math.sqrt(3.25))) <= 1e-9
    tr = integrate_closed_loop(sys, constant_signal(0, 3.0), V, 1.0, [1.0], 1e-3, 3.0)
    dec = verify_decrease(tr, sys, V, 1.0, tol=1e-3)
    final = abs(tr.final_state[0]) <= math.exp(-1.5) * 1.01
    ok = ident and gain and dec.passed and final
    acceptance(
        "5a-d universal formula, scalar x' = x + u",
        ok,
        f"phi resid={np.max(resid):.1e} k(1)={k1:.12f} violations={dec.violations} |x(3)|={abs(tr.final_state[0]):.3e}",
    )
    assert ok


def test_5_switched_control_convergence(acceptance):
    sc = load("ctrl2")
    cert = certificate_for(sc)
    spec = EnsembleSpec(1000, sc.T, sc.h, 0)
    est = estimate_convergence(
        sc.system, sc.generator, sc.initial, sc.x0, sc.T, 1e-3, spec, control=(sc.lyapunov, sc.lambda_circ)
    )
    ok = cert.passed and est.fraction >= 0.99
    acceptance(
        "5e 2-mode control-affine example, 1e3 trajectories",
        ok,
        f"gate={cert.verdict} fraction={est.fraction} blown={est.blown}",
    )
    assert ok


# ---------------------------------------------------------------- 6: convergence and mean norm


def test_6_convergence_and_mean_norm(acceptance):
    sc = load("mjls2")
    cert = certificate_for(sc)
    params = BoundParams(cert.mu, cert.lam_circ, cert.lam_tilde, cert.lam_bar, cert.M)
    V0 = initial_value(sc.lyapunov, sc.x0, sc.initial)
    c1 = cert.class_k[0]
    eps = 1e-3
    T = convergence_horizon(params, V0, c1, eps)
    est = estimate_convergence(sc.system, sc.generator, sc.initial, sc.x0, T, eps, EnsembleSpec(10_000, T, sc.h, 0))
    run = run_ensemble(sc.system, sc.generator, sc.initial, sc.x0, EnsembleSpec(10_000, sc.T, sc.h, 0, sc.grid()))
    rows = mean_norm_from_run(run, (V0, params, c1))
    ok = est.fraction >= 0.99 and all(r.passed for r in rows) and mean_norm_passed(rows)
    acceptance(
        "6 convergence and Jensen mean-norm bound, mjls2",
        ok,
        f"T={T:.4f} fraction={est.fraction} blown={est.blown}",
    )
    assert ok


# ---------------------------------------------------------------- 7: negative controls


def test_7_negative_controls(acceptance, tmp_path):
    code = main(["certify", "--config", "fail1", "--out", str(tmp_path)])

    unstable = SwitchedSystem.linear([[[1.0]]])
    est = estimate_convergence(unstable, [[0.0]], [1.0], [1.0], 30.0, 1e-3, EnsembleSpec(100, 30.0, 1e-2, 0))

    sys = SwitchedSystem.from_expressions(1, [["x1"]], controls=[[["1"]]])
    V = LyapunovFamily.from_sources(["0.5*x1^2"], 1)
    law = sontag_law(sys, V, 1.0)
    tr = integrate_closed_loop(sys, constant_signal(0, 3.0), V, 1.0, [1.0], 1e-3, 3.0, feedback=lambda p, X: law(p, X) / 10)
    dec = verify_decrease(tr, sys, V, 1.0)

    ok = code == 1 and est.fraction == 0.0 and est.blown == 100 and not dec.passed and dec.violations > 0
    acceptance(
        "7 negative controls",
        ok,
        f"fail1 exit={code} unstable fraction={est.fraction} blown={est.blown}/100 k/10 violations={dec.violations}",
    )
    assert ok


# ---------------------------------------------------------------- 8: reproducibility


def _small(tmp_path, name, **overrides):
    cfg = json.loads(bundled_path(name).read_text())
    cfg.update(overrides)
    path = tmp_path / f"{name}.json"
    path.write_text(json.dumps(cfg))
    return str(path)


def test_8_reproducibility(acceptance, tmp_path):
    mj = _small(tmp_path, "mjls2", T=0.5, h=0.01)
    ct = _small(tmp_path, "ctrl2", T=1.0, h=0.01)
    cases = [
        (["certify", "--config", mj], ["certificate.txt"]),
        (["simulate", "--config", mj], ["trajectory.csv"]),
        (["mc", "--config", mj, "--trajectories", "1500"], ["expected_v.csv", "mean_norm.csv", "convergence.csv"]),
        (["ctmc-check", "--config", mj, "--trajectories", "3000"], ["pmf.csv"]),
        (["stabilize", "--config", ct, "--trajectories", "1100"], ["closed_loop.csv", "stabilize_report.txt"]),
    ]
    mismatched = []
    for args, files in cases:
        blobs = []
        for i, workers in enumerate(("1", "1", "2")):
            out = tmp_path / f"{args[0]}-{i}"
            main([*args, "--seed", "11", "--workers", workers, "--out", str(out)])
            blobs.append([(out / f).read_bytes() for f in files])
        if not blobs[0] == blobs[1] == blobs[2]:
            mismatched.append(args[0])
    ok = not mismatched
    acceptance("8 byte-identical outputs across runs and worker counts", ok, f"mismatched: {mismatched}")
    assert ok


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-v"]))

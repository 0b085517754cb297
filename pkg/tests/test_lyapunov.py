import math

import numpy as np
import pytest
import scipy.linalg as sl
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from randswitch.dynamics import SwitchedSystem
from randswitch.lyapunov import (
    MU_ONE_PLUS,
    CertificateError,
    LyapunovFamily,
    NonPositiveLyapunovError,
    SampleSpec,
    check_slow_switching,
    classK_bounds_quadratic,
    decay_rate_diagnostics,
    decay_rate_quadratic,
    decay_rate_sampled,
    mu_quadratic,
    mu_sampled,
    pencil_eigvals,
)

A1 = -3.0 * np.eye(2)
A2 = np.array([[-3.0, 1.0], [-1.0, -3.0]])
P2 = np.diag([1.0, 2.0])


def spd(seed, n=3, cond=20.0):
    rng = np.random.default_rng(seed)
    Qm, _ = np.linalg.qr(rng.normal(size=(n, n)))
    return Qm @ np.diag(np.exp(rng.uniform(0, math.log(cond), n))) @ Qm.T


def test_decay_rate_common_identity():
    # skew part of A2 drops out with P = I, so the rate is 6 in both modes
    assert decay_rate_quadratic([A1, A2], [np.eye(2)] * 2) == pytest.approx(6.0, rel=1e-14)


def test_decay_rate_distinct_P():
    # frozen from scipy's generalized symmetric eigensolver: 6 - 1/sqrt(2)
    lam = decay_rate_quadratic([A1, A2], [np.eye(2), P2])
    assert lam == pytest.approx(5.292893218813452, rel=1e-13)
    assert lam == pytest.approx(6 - 1 / math.sqrt(2), rel=1e-13)


def test_mu_and_classK():
    assert mu_quadratic([np.eye(2), P2]) == pytest.approx(2.0, rel=1e-14)
    assert mu_quadratic([np.eye(2), np.eye(2)]) == 1.0
    assert classK_bounds_quadratic([np.eye(2), P2]) == (1.0, 2.0)


def test_spd_validation():
    with pytest.raises(CertificateError):
        mu_quadratic([np.eye(2), np.array([[1.0, 2.0], [2.0, 1.0]])])
    with pytest.raises(CertificateError):
        mu_quadratic([np.array([[1.0, 0.5], [0.0, 1.0]])])


@pytest.mark.parametrize("seed", range(5))
def test_pencil_matches_scipy(seed):
    P = spd(seed)
    S = spd(seed + 100) - 3 * np.eye(3)
    assert np.allclose(pencil_eigvals(S, P), sl.eigh(S, P, eigvals_only=True), rtol=1e-12, atol=1e-12)


@given(st.integers(0, 10_000), st.floats(0.5, 10.0))
@settings(max_examples=50, deadline=None)
def test_mu_scales_with_family(seed, c):
    # a common scale cancels in every ratio V_a / V_b
    P, R = spd(seed), spd(seed + 1)
    assert mu_quadratic([c * P, c * R]) == pytest.approx(mu_quadratic([P, R]), rel=1e-10)


@given(st.integers(0, 10_000))
@settings(max_examples=50, deadline=None)
def test_mu_dominates_sampled_ratios(seed):
    P, R = spd(seed), spd(seed + 1)
    V = LyapunovFamily.quadratic([P, R])
    assert mu_sampled(V, SampleSpec(2000), seed) <= mu_quadratic([P, R]) * (1 + 1e-12)


@given(st.integers(0, 10_000))
@settings(max_examples=50, deadline=None)
def test_decay_rate_is_a_certificate(seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(3, 3)) - 4 * np.eye(3)
    P = spd(seed)
    lam = decay_rate_quadratic([A], [P])
    # A'P + PA + lam P is negative semidefinite
    M = A.T @ P + P @ A + lam * P
    assert np.max(np.linalg.eigvalsh(M)) <= 1e-9 * np.max(np.abs(M))
    sysm = SwitchedSystem.linear([A])
    assert decay_rate_sampled(sysm, LyapunovFamily.quadratic([P]), SampleSpec(2000), seed) >= lam * (1 - 1e-10)


def test_expression_family_matches_quadratic():
    Vq = LyapunovFamily.quadratic([np.eye(2), P2])
    Ve = LyapunovFamily.from_sources(["x1^2 + x2^2", "x1^2 + 2*x2^2"], 2)
    X = SampleSpec(200).points(2, 0)
    for p in range(2):
        assert np.allclose(Ve.values(p, X), Vq.values(p, X), rtol=1e-14)
        assert np.allclose(Ve.gradients(p, X), Vq.gradients(p, X), rtol=1e-6, atol=1e-9)


def test_sampled_rates_nonlinear():
    sysn = SwitchedSystem.from_expressions(2, [["-x1 - x1^3", "-x2"], ["-2*x1 + x2", "-x1 - 2*x2 - x2^3"]])
    V = LyapunovFamily.from_sources(["x1^2 + x2^2", "2*x1^2 + x2^2"], 2)
    d = decay_rate_diagnostics(sysn, V, SampleSpec(5000), 0)
    # the cubic terms only help, so the infimum is the linear-part rate, 2
    assert d.rate == pytest.approx(2.0, rel=1e-6)
    assert not d.no_uniform_rate
    assert mu_sampled(V, SampleSpec(5000), 0) == pytest.approx(2.0, rel=1e-3)


def test_no_uniform_rate_is_flagged():
    # x' = -x^3 with V = x^2: the ratio 2x^2 vanishes at the origin
    sysc = SwitchedSystem.from_expressions(1, [["-x1^3"]])
    d = decay_rate_diagnostics(sysc, LyapunovFamily.from_sources(["x1^2"], 1), SampleSpec(5000), 0)
    assert d.no_uniform_rate


def test_nonpositive_candidate_raises():
    V = LyapunovFamily.from_sources(["x1^2 - x2^2"], 2)
    with pytest.raises(NonPositiveLyapunovError):
        mu_sampled(V)


def test_gate_verdicts():
    r = check_slow_switching(1.0, 6.0, 1.0, 1.0, methods={"mu": "exact-quadratic"})
    assert r.passed and r.mu == MU_ONE_PLUS and r.threshold == 7.0 and r.exit_code == 0
    r = check_slow_switching(2.0, 5.292893218813452, 10.0, 10.0)
    assert not r.passed and r.exit_code == 1
    r = check_slow_switching(2.0, 1.0, 0.0, 0.0, methods={"mu": "sampled"})
    assert r.passed and math.isinf(r.threshold) and r.exit_code == 2
    assert not check_slow_switching(1.0, 0.0, 1.0, 1.0).passed
    with pytest.raises(CertificateError):
        check_slow_switching(1.0, 1.0, 1.0, -1.0)


@given(
    st.floats(1.0, 10.0), st.floats(0.01, 10.0), st.floats(0.0, 10.0), st.floats(0.01, 10.0), st.floats(0.01, 100.0)
)
@settings(max_examples=300, deadline=None)
def test_gate_is_rate_scale_invariant(mu, lam_circ, lam_tilde, lam_bar, c):
    # scaling every rate by c leaves the gate unchanged
    a = check_slow_switching(mu, lam_circ, lam_tilde, lam_bar)
    b = check_slow_switching(mu, c * lam_circ, c * lam_tilde, c * lam_bar)
    if abs(a.margin) > 1e-9 * max(1.0, a.threshold):
        assert a.passed == b.passed


@given(arrays(np.float64, (3,), elements=st.floats(-10, 10)).filter(lambda x: np.linalg.norm(x) > 1e-3))
@settings(max_examples=100, deadline=None)
def test_quadratic_values_sandwiched(x):
    mats = [spd(1), spd(2)]
    c1, c2 = classK_bounds_quadratic(mats)
    V = LyapunovFamily.quadratic(mats)
    r2 = float(x @ x)
    for p in range(2):
        assert c1 * r2 * (1 - 1e-12) <= V.value(p, x) <= c2 * r2 * (1 + 1e-12)

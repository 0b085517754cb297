import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm
from scipy.stats import poisson

from randswitch.switching import (
    GeneratorMatrix,
    PmfBoundParams,
    SwitchingSignal,
    check_markov_pmf_bound,
    count_switches,
    empirical_switch_pmf,
    pmf_bound,
    q_params,
    sample_ctmc,
    statistical_verdict,
    switch_counts,
)

SYM = [[-1.0, 1.0], [1.0, -1.0]]
ASYM = [[-2.0, 2.0], [1.0, -1.0]]


def counting_chain_pmf(Q, pi0, t, kmax=40):
    """Exact law of N(t) from the chain on (count, mode), truncated at kmax."""
    Q = np.asarray(Q, dtype=float)
    n = len(Q)
    G = np.zeros((n * (kmax + 1),) * 2)
    for k in range(kmax + 1):
        for i in range(n):
            G[k * n + i, k * n + i] = Q[i, i]
            if k < kmax:
                for j in range(n):
                    if j != i:
                        G[k * n + i, (k + 1) * n + j] = Q[i, j]
    p0 = np.zeros(n * (kmax + 1))
    p0[:n] = pi0
    return (p0 @ expm(G * t)).reshape(kmax + 1, n).sum(axis=1)


def test_generator_validation():
    with pytest.raises(ValueError):
        GeneratorMatrix([[-1, 1], [1, -2]])
    with pytest.raises(ValueError):
        GeneratorMatrix([[1, -1], [1, -1]])
    assert GeneratorMatrix(ASYM).exit_rate(0) == 2.0


def test_q_params():
    assert q_params(SYM) == (1.0, 1.0)
    assert q_params(ASYM) == (2.0, 2.0)
    assert q_params([[-3, 1, 2], [0, 0, 0], [4, 0, -4]]) == (4.0, 4.0)


def test_signal_invariants():
    with pytest.raises(ValueError):
        SwitchingSignal((0.0, 1.0), (0, 0), 2.0)
    with pytest.raises(ValueError):
        SwitchingSignal((0.5,), (0,), 2.0)
    with pytest.raises(ValueError):
        SwitchingSignal((0.0, 1.0, 1.0), (0, 1, 0), 2.0)
    s = SwitchingSignal((0.0, 0.5, 1.5), (0, 1, 0), 2.0)
    assert s.mode_at(0.5) == 1 and s.mode_at(0.49) == 0 and s.mode_at(2.0) == 0
    assert [count_switches(s, t) for t in (0.0, 0.5, 1.0, 2.0)] == [0, 1, 1, 2]
    with pytest.raises(ValueError):
        count_switches(s, 2.5)


def test_absorbing_mode_never_leaves():
    s = sample_ctmc([[-1.0, 1.0], [0.0, 0.0]], [0.0, 1.0], 100.0, seed=3)
    assert s.instants == (0.0,) and s.modes == (1,)


def test_sampler_is_deterministic():
    a = sample_ctmc(ASYM, [0.5, 0.5], 10.0, seed=11)
    b = sample_ctmc(ASYM, [0.5, 0.5], 10.0, seed=11)
    c = sample_ctmc(ASYM, [0.5, 0.5], 10.0, seed=12)
    assert a == b and a != c


def test_pmf_bound_values():
    p = PmfBoundParams(1.0, 1.0)
    for k in range(8):
        assert pmf_bound(k, 1.3, p) == pytest.approx(poisson.pmf(k, 1.3), rel=1e-12)
    assert pmf_bound(0, 1.0, PmfBoundParams(0.0, 5.0)) == 1.0
    assert pmf_bound(2, 1.0, PmfBoundParams(0.0, 5.0, M=3)) == 1.0
    assert pmf_bound(200, 50.0, PmfBoundParams(1.0, 1.0)) == pytest.approx(poisson.pmf(200, 50.0), rel=1e-9)


@given(st.integers(0, 60), st.floats(1e-3, 50), st.floats(0, 5), st.floats(0, 5), st.integers(0, 5))
@settings(max_examples=300, deadline=None)
def test_pmf_bound_is_probability_cap(k, t, lt, lb, M):
    b = pmf_bound(k, t, PmfBoundParams(lt, lb, M))
    assert 0.0 <= b <= 1.0
    if k < M:
        assert b == 1.0


@given(st.floats(0.1, 5), st.floats(0.1, 5))
@settings(max_examples=100, deadline=None)
def test_pmf_bound_monotone_in_lam_tilde(t, lt):
    p_lo = PmfBoundParams(lt, 3.0)
    p_hi = PmfBoundParams(lt + 0.5, 3.0)
    assert all(pmf_bound(k, t, p_hi) <= pmf_bound(k, t, p_lo) for k in range(10))


def test_empirical_pmf_matches_poisson():
    rows = empirical_switch_pmf(SYM, [1.0, 0.0], 1.0, 6, 20000, seed=5)
    for k, est, se in rows:
        assert abs(est - poisson.pmf(k, 1.0)) <= 4 * max(se, 1e-3)
    with pytest.raises(ValueError):
        empirical_switch_pmf(SYM, [1.0, 0.0], 1.0, 6, 999, seed=5)


def test_switch_counts_worker_invariant():
    a = switch_counts(ASYM, [0.3, 0.7], [0.5, 1.0], 3000, seed=2, workers=1)
    b = switch_counts(ASYM, [0.3, 0.7], [0.5, 1.0], 3000, seed=2, workers=2)
    assert np.array_equal(a, b)


def test_counting_chain_oracle_symmetric_is_poisson():
    pmf = counting_chain_pmf(SYM, [1.0, 0.0], 2.0)
    assert np.allclose(pmf[:15], poisson.pmf(np.arange(15), 2.0), atol=1e-13)


def test_asymmetric_chain_exceeds_max_rate_bound():
    # Exact law from the counting chain, frozen: P(N(1) = 1) starting in mode 1.
    pmf = counting_chain_pmf(ASYM, [1.0, 0.0], 1.0)
    assert pmf[1] == pytest.approx(0.46508831586965843, rel=1e-12)
    q_bar, q_tilde = q_params(ASYM)
    naive = pmf_bound(1, 1.0, PmfBoundParams(q_tilde, q_bar))
    assert naive == pytest.approx(2 * math.exp(-2), rel=1e-15)
    assert pmf[1] > naive


def test_asymmetric_chain_obeys_min_exit_rate_bound():
    # With the smallest exit rate in the exponent the bound holds for this chain.
    lam_tilde = min(-np.diag(np.asarray(ASYM)))
    p = PmfBoundParams(lam_tilde, q_params(ASYM)[0])
    for t in (0.5, 1.0, 2.0):
        for pi0 in ([1.0, 0.0], [0.0, 1.0], [0.5, 0.5]):
            pmf = counting_chain_pmf(ASYM, pi0, t)
            assert all(pmf[k] <= pmf_bound(k, t, p) + 1e-14 for k in range(11))


def test_check_report_symmetric_passes():
    rep = check_markov_pmf_bound(SYM, [1.0, 0.0], [0.5, 1.0], 6, 5000, seed=0)
    assert rep.passed and len(rep.cells) == 14 and not rep.failing()


def test_check_report_flags_asymmetric():
    rep = check_markov_pmf_bound(ASYM, [1.0, 0.0], [1.0], 6, 5000, seed=0)
    assert not rep.passed
    assert any(c.k == 1 for c in rep.failing())


def test_statistical_verdict_rules():
    assert statistical_verdict([(0.0, 1.0)] * 100)
    assert statistical_verdict([(3.5, 1.0)] + [(0.0, 1.0)] * 99)  # one soft miss in 100
    assert not statistical_verdict([(3.5, 1.0)] * 2 + [(0.0, 1.0)] * 98)
    assert not statistical_verdict([(5.5, 1.0)] + [(0.0, 1.0)] * 999)

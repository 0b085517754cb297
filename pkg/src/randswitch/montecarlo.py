"""Ensemble estimates of the stochastic quantities and their closed-form bounds.

An ensemble is ``count`` independent (signal, trajectory) pairs. Trajectory
``i`` draws its switching signal from stream ``(seed, i)``; trajectories are
integrated in fixed-size chunks, and per-trajectory observations are reduced in
index order with compensated summation, so results do not depend on the number
of workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from randswitch._parallel import chunked, parallel_map
from randswitch.controller import closed_loop_field, sontag_law
from randswitch.dynamics import Observer, SwitchedSystem, propagate
from randswitch.lyapunov import LyapunovFamily
from randswitch.switching import (
    SE_SLACK,
    as_generator,
    sample_ensemble,
    statistical_verdict,
)

# RK4 error allowance when comparing an ensemble mean to a bound that the
# dynamics can meet with equality.
BOUND_RTOL = 1e-6


@dataclass(frozen=True)
class EnsembleSpec:
    count: int
    horizon: float
    h: float = 1e-3
    seed: int = 0
    grid: tuple = ()
    epsilons: tuple = (1e-3,)
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "grid", tuple(float(t) for t in self.grid))
        object.__setattr__(self, "epsilons", tuple(float(e) for e in self.epsilons))
        if self.count < 1 or self.horizon <= 0 or self.h <= 0:
            raise ValueError("count, horizon and h must be positive")
        if any(t < 0 or t > self.horizon for t in self.grid):
            raise ValueError("grid must lie in [0, horizon]")

    def with_count(self, count: int) -> "EnsembleSpec":
        return EnsembleSpec(count, self.horizon, self.h, self.seed, self.grid, self.epsilons, self.workers)


def linear_grid(T: float, points: int) -> tuple:
    return tuple(float(t) for t in np.linspace(0.0, T, points))


@dataclass(frozen=True)
class BoundParams:
    mu: float
    lam_circ: float
    lam_tilde: float
    lam_bar: float
    M: int = 0

    def S(self, s: float) -> float:
        return math.fsum(math.exp(s * k) for k in range(self.M))


def _exp(x: float) -> float:
    return math.inf if x > 709.0 else math.exp(x)


def mgf_bound(s: float, t: float, p: BoundParams) -> float:
    """Bound ``S + exp((e^s lam_bar - lam_tilde) t)`` on ``E[exp(s N(t))]``; saturates at inf."""
    if s < 0:
        raise ValueError("s must be nonnegative")
    if t < 0:
        raise ValueError("t must be nonnegative")
    return p.S(s) + _exp((math.exp(s) * p.lam_bar - p.lam_tilde) * t)


def expected_v_bound(t: float, V0: float, p: BoundParams) -> float:
    """Bound on ``E[V_sigma(t)(x(t))]``: ``mgf_bound(ln mu, t) V0 exp(-lam_circ t)``.

    The exponents are combined before exponentiating so a decaying bound
    stays finite at large ``t``.
    """
    if p.mu < 1:
        raise ValueError("mu must be at least 1")
    if V0 < 0:
        raise ValueError("V0 must be nonnegative")
    if t < 0:
        raise ValueError("t must be nonnegative")
    if V0 == 0:
        return 0.0
    tail = _exp((p.mu * p.lam_bar - p.lam_tilde - p.lam_circ) * t + math.log(V0))
    return p.S(math.log(p.mu)) * V0 * math.exp(-p.lam_circ * t) + tail


# ---------------------------------------------------------------- ensemble engine


class _EnsembleObserver(Observer):
    def __init__(self, B, grid, sup_from, V: Optional[LyapunovFamily]):
        self.grid = np.asarray(grid, dtype=float)
        self.index = {t: j for j, t in enumerate(self.grid)}
        self.sup_from = sup_from
        self.V = V
        self.norms = np.full((B, len(grid)), np.nan)
        self.values = np.full((B, len(grid)), np.nan) if V is not None else None
        self.sup = np.zeros(B)

    def at_point(self, t, X, modes, rows, is_stop):
        norms = np.sqrt(np.sum(X * X, axis=1))
        if t >= self.sup_from:
            self.sup[rows] = np.maximum(self.sup[rows], norms)
        j = self.index.get(t)
        if j is None or not is_stop:
            return
        self.norms[rows, j] = norms
        if self.V is not None:
            vals = np.empty(len(rows))
            for p in np.unique(modes):
                sel = modes == p
                vals[sel] = self.V.values(int(p), X[sel])
            self.values[rows, j] = vals

    def at_blowup(self, rows):
        self.sup[rows] = np.inf


@dataclass
class EnsembleRun:
    grid: tuple
    norms: np.ndarray  # (count, len(grid)); nan after blow-up
    values: Optional[np.ndarray]
    sup_tail: np.ndarray  # sup |x| over mesh points in [T/2, T]; inf if blown up
    blown: np.ndarray

    @property
    def count(self) -> int:
        return len(self.blown)


def _run_chunk(job):
    sys, V, control, Q, pi0, x0, spec, indices = job
    signals = sample_ensemble(Q, pi0, spec.horizon, spec.seed, indices)
    field = sys.drift
    if control is not None:
        cV, lam = control
        field = closed_loop_field(sys, sontag_law(sys, cV, lam))
    obs = _EnsembleObserver(len(indices), spec.grid, spec.horizon / 2.0, V)
    X0 = np.tile(np.asarray(x0, dtype=float), (len(indices), 1))
    blown = propagate(field, signals, X0, spec.h, spec.horizon, obs, stops=spec.grid)
    return obs.norms, obs.values, obs.sup, blown


def run_ensemble(
    sys: SwitchedSystem,
    Q,
    pi0,
    x0,
    spec: EnsembleSpec,
    V: Optional[LyapunovFamily] = None,
    control: Optional[tuple] = None,
) -> EnsembleRun:
    """Sample and integrate ``spec.count`` trajectories.

    ``V`` enables logging of ``V_sigma(t)(x(t))`` at grid times. ``control`` is
    ``(V_control, lam_circ)`` to integrate the universal-formula closed loop.
    """
    Q = as_generator(Q)
    if Q.n_modes != sys.n_modes:
        raise ValueError("generator and system have different mode counts")
    jobs = [(sys, V, control, Q.q, np.asarray(pi0, dtype=float), x0, spec, idx) for idx in chunked(spec.count)]
    parts = parallel_map(_run_chunk, jobs, spec.workers)
    norms = np.concatenate([p[0] for p in parts])
    values = np.concatenate([p[1] for p in parts]) if V is not None else None
    return EnsembleRun(spec.grid, norms, values, np.concatenate([p[2] for p in parts]), np.concatenate([p[3] for p in parts]))


def mean_stderr(samples: Sequence[float]) -> tuple[float, float]:
    """Mean and standard error with order-fixed compensated sums."""
    xs = [float(v) for v in samples]
    n = len(xs)
    mean = math.fsum(xs) / n
    if n < 2:
        return mean, 0.0
    var = math.fsum((v - mean) ** 2 for v in xs) / (n - 1)
    return mean, math.sqrt(var / n)


# ---------------------------------------------------------------- estimators


@dataclass(frozen=True)
class BoundRow:
    t: float
    mean: float
    stderr: float
    bound: float
    passed: bool


@dataclass
class BoundComparison:
    rows: list
    blown: int
    passed: bool
    label: str = ""

    def csv_rows(self):
        for r in self.rows:
            yield (r.t, r.mean, r.stderr, r.bound, int(r.passed))


def _compare(ts, means_se, bounds, blown: int, label: str) -> BoundComparison:
    rows = []
    cells = []
    for t, (m, se), b in zip(ts, means_se, bounds):
        allowance = BOUND_RTOL * abs(b)
        rows.append(BoundRow(t, m, se, b, m - SE_SLACK * se <= b + allowance))
        cells.append((m - b - allowance, se))
    passed = blown == 0 and statistical_verdict(cells)
    return BoundComparison(rows, blown, passed, label)


def initial_value(V: LyapunovFamily, x0, pi0) -> float:
    """``max_p V_p(x0)`` over modes the chain can start in."""
    return max(V.value(p, x0) for p, w in enumerate(np.asarray(pi0, dtype=float)) if w > 0)


def compare_expected_v(run: EnsembleRun, V0: float, params: BoundParams) -> BoundComparison:
    if run.values is None:
        raise ValueError("ensemble was run without a Lyapunov family")
    blown = int(run.blown.sum())
    ok = ~run.blown
    stats = [mean_stderr(run.values[ok, j]) for j in range(len(run.grid))]
    bounds = [expected_v_bound(t, V0, params) for t in run.grid]
    return _compare(run.grid, stats, bounds, blown, "expected_v")


def estimate_expected_v(sys, V, Q, pi0, x0, spec: EnsembleSpec, params: BoundParams) -> BoundComparison:
    """Ensemble mean of ``V_sigma(t)(x(t))`` on ``spec.grid`` against the bound.

    A grid point passes when ``mean - 3 stderr`` is below the bound. Any
    blow-up fails the run.
    """
    run = run_ensemble(sys, Q, pi0, x0, spec, V=V)
    return compare_expected_v(run, initial_value(V, x0, pi0), params)


class ConvergenceEstimate(NamedTuple):
    fraction: float
    stderr: float
    blown: int


def convergence_from_run(run: EnsembleRun, eps: float) -> ConvergenceEstimate:
    hits = (run.sup_tail < eps) & ~run.blown
    frac = float(np.sum(hits)) / run.count
    return ConvergenceEstimate(frac, math.sqrt(frac * (1 - frac) / run.count), int(run.blown.sum()))


def estimate_convergence(sys, Q, pi0, x0, T: float, eps: float, spec: EnsembleSpec, control=None) -> ConvergenceEstimate:
    """Fraction of trajectories with ``sup |x(t)| < eps`` over mesh points in ``[T/2, T]``.

    Blown-up trajectories count as not converged.
    """
    spec = EnsembleSpec(spec.count, T, spec.h, spec.seed, (), spec.epsilons, spec.workers)
    return convergence_from_run(run_ensemble(sys, Q, pi0, x0, spec, control=control), eps)


@dataclass(frozen=True)
class NormRow:
    t: float
    mean: float
    stderr: float
    jensen_bound: Optional[float] = None
    passed: Optional[bool] = None


def mean_norm_from_run(run: EnsembleRun, jensen: Optional[tuple] = None) -> list:
    """``jensen = (V0, params, c1)`` adds ``sqrt(expected_v_bound / c1)`` per row."""
    ok = ~run.blown
    rows = []
    for j, t in enumerate(run.grid):
        m, se = mean_stderr(run.norms[ok, j])
        if jensen is None:
            rows.append(NormRow(t, m, se))
        else:
            V0, params, c1 = jensen
            b = math.sqrt(expected_v_bound(t, V0, params) / c1)
            rows.append(NormRow(t, m, se, b, m - SE_SLACK * se <= b * (1 + BOUND_RTOL)))
    return rows


def estimate_mean_norm(sys, Q, pi0, x0, spec: EnsembleSpec, jensen: Optional[tuple] = None) -> list:
    return mean_norm_from_run(run_ensemble(sys, Q, pi0, x0, spec), jensen)


def mean_norm_passed(rows) -> bool:
    cells = [(r.mean - r.jensen_bound * (1 + BOUND_RTOL), r.stderr) for r in rows if r.jensen_bound is not None]
    return statistical_verdict(cells)


def horizon_for(params: BoundParams, V0: float, target: float, t_max: float = 1e4) -> float:
    """Smallest ``T`` (bisection) with ``expected_v_bound(T) < target``; the bound must decay."""
    if expected_v_bound(t_max, V0, params) >= target:
        raise ValueError("bound does not fall below target within t_max")
    lo, hi = 0.0, t_max
    for _ in range(200):
        mid = (lo + hi) / 2
        if expected_v_bound(mid, V0, params) < target:
            hi = mid
        else:
            lo = mid
    return hi

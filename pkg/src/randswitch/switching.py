"""Markov switching signals, switch counts and Poisson-type pmf bounds."""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from randswitch._parallel import chunked, parallel_map

SE_SLACK = 3.0
HARD_SLACK = 5.0
CELL_PASS_FRACTION = 0.99


def rng_for(seed: int, index: int) -> np.random.Generator:
    """Independent stream for trajectory ``index`` under master ``seed``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(index,))))


@dataclass(frozen=True)
class GeneratorMatrix:
    q: np.ndarray

    def __post_init__(self):
        q = np.array(self.q, dtype=float)
        if q.ndim != 2 or q.shape[0] != q.shape[1] or q.shape[0] < 1:
            raise ValueError(f"generator must be a square matrix, got shape {q.shape}")
        off = q - np.diag(np.diag(q))
        if np.any(off < 0):
            raise ValueError("off-diagonal rates must be nonnegative")
        if np.any(np.abs(off.sum(axis=1) + np.diag(q)) > 1e-9):
            raise ValueError("each row of the generator must sum to zero")
        q.setflags(write=False)
        object.__setattr__(self, "q", q)

    @property
    def n_modes(self) -> int:
        return self.q.shape[0]

    def exit_rate(self, i: int) -> float:
        return -self.q[i, i]

    def scaled(self, factor: float) -> "GeneratorMatrix":
        return GeneratorMatrix(self.q * factor)


def as_generator(Q) -> GeneratorMatrix:
    return Q if isinstance(Q, GeneratorMatrix) else GeneratorMatrix(Q)


@dataclass(frozen=True)
class SwitchingSignal:
    """A cadlag mode path: ``modes[i]`` is active on ``[instants[i], instants[i+1])``.

    Modes are 0-based internally.
    """

    instants: tuple
    modes: tuple
    horizon: float

    def __post_init__(self):
        inst = tuple(float(t) for t in self.instants)
        modes = tuple(int(m) for m in self.modes)
        object.__setattr__(self, "instants", inst)
        object.__setattr__(self, "modes", modes)
        if not inst or inst[0] != 0.0:
            raise ValueError("first instant must be 0")
        if len(inst) != len(modes):
            raise ValueError("need exactly one mode per instant")
        if any(b <= a for a, b in zip(inst, inst[1:])):
            raise ValueError("instants must be strictly increasing")
        if any(b == a for a, b in zip(modes, modes[1:])):
            raise ValueError("consecutive modes must differ")
        if not math.isfinite(self.horizon) or inst[-1] > self.horizon:
            raise ValueError("instants must lie in [0, horizon]")
        if min(modes) < 0:
            raise ValueError("mode indices must be nonnegative")

    @property
    def switch_times(self) -> tuple:
        return self.instants[1:]

    def mode_at(self, t: float) -> int:
        return self.modes[bisect.bisect_right(self.instants, t) - 1]

    def count_switches(self, t: float) -> int:
        return count_switches(self, t)


def constant_signal(mode: int, horizon: float) -> SwitchingSignal:
    return SwitchingSignal((0.0,), (mode,), horizon)


@dataclass(frozen=True)
class PmfBoundParams:
    lam_tilde: float
    lam_bar: float
    M: int = 0

    def __post_init__(self):
        if self.lam_tilde < 0 or self.lam_bar < 0:
            raise ValueError("rates must be nonnegative")
        if self.M < 0 or int(self.M) != self.M:
            raise ValueError("M must be a nonnegative integer")


def q_params(Q) -> tuple[float, float]:
    """``(q_bar, q_tilde)``: largest exit rate and largest entry of ``Q``."""
    q = as_generator(Q).q
    return float(np.max(np.abs(np.diag(q)))), float(np.max(q))


def _open_uniform(rng: np.random.Generator) -> float:
    u = rng.random()
    while u == 0.0:
        u = rng.random()
    return u


def _draw_index(rng: np.random.Generator, cdf: np.ndarray) -> int:
    return min(int(np.searchsorted(cdf, rng.random(), side="right")), len(cdf) - 1)


def _validate_distribution(pi0, n: int) -> np.ndarray:
    p = np.asarray(pi0, dtype=float).reshape(-1)
    if p.shape[0] != n:
        raise ValueError(f"initial distribution has {p.shape[0]} entries, expected {n}")
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError("initial distribution must be nonnegative and sum to 1")
    return p


class _CtmcSampler:
    def __init__(self, Q, pi0):
        self.Q = as_generator(Q)
        q = self.Q.q
        n = self.Q.n_modes
        self.pi0_cdf = np.cumsum(_validate_distribution(pi0, n))
        self.rates = -np.diag(q)
        self.jump_cdf = []
        self.jump_targets = []
        for i in range(n):
            targets = [j for j in range(n) if j != i and q[i, j] > 0]
            probs = np.array([q[i, j] for j in targets]) / self.rates[i] if targets else np.array([])
            self.jump_targets.append(targets)
            self.jump_cdf.append(np.cumsum(probs))

    def sample(self, horizon: float, rng: np.random.Generator) -> SwitchingSignal:
        mode = _draw_index(rng, self.pi0_cdf)
        instants = [0.0]
        modes = [mode]
        t = 0.0
        while self.rates[mode] > 0:
            t = t - math.log(_open_uniform(rng)) / self.rates[mode]
            if t > horizon:
                break
            mode = self.jump_targets[mode][_draw_index(rng, self.jump_cdf[mode])]
            instants.append(t)
            modes.append(mode)
        return SwitchingSignal(tuple(instants), tuple(modes), horizon)


def sample_ctmc(Q, pi0, horizon: float, seed: int = 0, *, rng=None) -> SwitchingSignal:
    """Sample one path of the chain ``(pi0, Q)`` on ``[0, horizon]``.

    Holding times are ``-log(U)/rate`` with ``U`` in the open unit interval; a
    mode with zero exit rate is absorbing. Deterministic given ``seed`` (or an
    explicit generator ``rng``).
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if rng is None:
        rng = rng_for(seed, 0)
    return _CtmcSampler(Q, pi0).sample(horizon, rng)


def sample_ensemble(Q, pi0, horizon: float, seed: int, indices) -> list[SwitchingSignal]:
    sampler = _CtmcSampler(Q, pi0)
    return [sampler.sample(horizon, rng_for(seed, int(i))) for i in indices]


def count_switches(s: SwitchingSignal, t: float) -> int:
    """Number of switching instants in ``(0, t]``."""
    if t < 0 or t > s.horizon:
        raise ValueError(f"t={t} outside [0, {s.horizon}]")
    return bisect.bisect_right(s.instants, t) - 1


def log_poisson_kernel(k: int, t: float, lam_tilde: float, lam_bar: float) -> float:
    if lam_bar * t == 0.0:
        return -lam_tilde * t if k == 0 else -math.inf
    return -lam_tilde * t + k * math.log(lam_bar * t) - math.lgamma(k + 1)


def pmf_bound(k: int, t: float, p: PmfBoundParams) -> float:
    """``min(exp(-lam_tilde t) (lam_bar t)^k / k!, 1)`` for ``k >= M``, else 1."""
    if t <= 0:
        raise ValueError("t must be positive")
    if k < p.M:
        return 1.0
    return min(math.exp(min(log_poisson_kernel(k, t, p.lam_tilde, p.lam_bar), 0.0)), 1.0)


# ---------------------------------------------------------------- empirical checks


def _count_chunk(args):
    Q, pi0, times, seed, indices = args
    horizon = max(times)
    sampler = _CtmcSampler(Q, pi0)
    out = np.empty((len(indices), len(times)), dtype=np.int64)
    for r, i in enumerate(indices):
        sig = sampler.sample(horizon, rng_for(seed, int(i)))
        out[r] = [bisect.bisect_right(sig.instants, t) - 1 for t in times]
    return out


def switch_counts(Q, pi0, times: Sequence[float], samples: int, seed: int, workers: int = 1) -> np.ndarray:
    """``N_sigma(t)`` for each sampled path (rows) and time (columns)."""
    Q = as_generator(Q)
    times = [float(t) for t in times]
    if min(times) <= 0:
        raise ValueError("times must be positive")
    jobs = [(Q.q, np.asarray(pi0, dtype=float), times, seed, idx) for idx in chunked(samples)]
    return np.concatenate(parallel_map(_count_chunk, jobs, workers), axis=0)


def _pmf_from_counts(counts: np.ndarray, kmax: int) -> list[tuple[int, float, float]]:
    n = counts.shape[0]
    hist = np.bincount(counts, minlength=kmax + 1)
    rows = []
    for k in range(kmax + 1):
        p = hist[k] / n
        rows.append((k, float(p), math.sqrt(p * (1.0 - p) / n)))
    return rows


def empirical_switch_pmf(Q, pi0, t: float, kmax: int, samples: int, seed: int, workers: int = 1):
    """Fraction of paths with ``N_sigma(t) = k`` and its binomial standard error."""
    if samples < 1000:
        raise ValueError("need at least 1000 samples")
    counts = switch_counts(Q, pi0, [t], samples, seed, workers)[:, 0]
    return _pmf_from_counts(counts, kmax)


@dataclass(frozen=True)
class PmfCell:
    t: float
    k: int
    estimate: float
    stderr: float
    bound: float
    margin: float
    passed: bool


@dataclass
class PmfCheckReport:
    q_bar: float
    q_tilde: float
    samples: int
    cells: list = field(default_factory=list)

    @property
    def fraction_passed(self) -> float:
        return sum(c.passed for c in self.cells) / len(self.cells) if self.cells else 1.0

    @property
    def passed(self) -> bool:
        return statistical_verdict(
            [(c.estimate - c.bound, c.stderr) for c in self.cells]
        )

    def failing(self) -> list:
        return [c for c in self.cells if not c.passed]


def statistical_verdict(excess_and_se, pass_fraction=CELL_PASS_FRACTION) -> bool:
    """Overall verdict over cells given ``(estimate - bound, stderr)`` pairs.

    A cell passes when its excess is at most ``3 stderr``. The run passes when at
    least 99% of cells pass and no excess exceeds ``5 stderr``.
    """
    cells = list(excess_and_se)
    if not cells:
        return True
    ok = [ex <= SE_SLACK * se for ex, se in cells]
    if sum(ok) / len(ok) < pass_fraction:
        return False
    return all(ex <= HARD_SLACK * se for ex, se in cells)


def check_markov_pmf_bound(Q, pi0, times, kmax: int, samples: int, seed: int, workers: int = 1) -> PmfCheckReport:
    """Empirical pmf of the switch count against ``exp(-q~ t)(q- t)^k/k!``."""
    Q = as_generator(Q)
    q_bar, q_tilde = q_params(Q)
    params = PmfBoundParams(q_tilde, q_bar, 0)
    counts = switch_counts(Q, pi0, times, samples, seed, workers)
    report = PmfCheckReport(q_bar, q_tilde, samples)
    for col, t in enumerate(times):
        for k, est, se in _pmf_from_counts(counts[:, col], kmax):
            bound = pmf_bound(k, t, params)
            margin = bound + SE_SLACK * se - est
            report.cells.append(PmfCell(float(t), k, est, se, bound, margin, margin >= 0))
    return report


PMF_CSV_HEADER = ("t", "k", "estimate", "stderr", "bound", "margin", "pass")


def pmf_report_rows(report: PmfCheckReport):
    for c in report.cells:
        yield (c.t, c.k, c.estimate, c.stderr, c.bound, c.margin, int(c.passed))

"""Certificate quantities for multiple Lyapunov functions and the slow-switching gate.

Quadratic families (``V_p(x) = x' P_p x``) with linear modes are handled exactly
through symmetric-definite pencils. Expression families are handled by
sampling, which can only falsify: a sampled decay rate is an upper bound on
the true rate and a sampled ``mu`` is a lower bound on the true ratio.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import cholesky, solve_triangular

from randswitch.dynamics import SwitchedSystem
from randswitch.expr import Expression, gradient_batch, parse
from randswitch.switching import rng_for

EXACT = "exact-quadratic"
SAMPLED = "sampled"
GIVEN = "given"
MU_ONE_PLUS = math.nextafter(1.0, 2.0)


class CertificateError(ValueError):
    pass


class NonPositiveLyapunovError(CertificateError):
    """A candidate ``V_p`` is not positive at a sampled nonzero point."""


def _check_spd(P: np.ndarray, label: str) -> np.ndarray:
    P = np.array(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise CertificateError(f"{label}: not a square matrix")
    if np.max(np.abs(P - P.T)) > 1e-12 * max(1.0, np.max(np.abs(P))):
        raise CertificateError(f"{label}: not symmetric")
    try:
        cholesky(P, lower=True)
    except np.linalg.LinAlgError:
        raise CertificateError(f"{label}: not positive definite") from None
    return (P + P.T) / 2.0


def pencil_eigvals(S: np.ndarray, P: np.ndarray) -> np.ndarray:
    """Eigenvalues of the symmetric pencil ``(S, P)`` with ``P`` SPD, ascending.

    Reduces by congruence with the Cholesky factor: ``L^-1 S L^-T``.
    """
    L = cholesky(P, lower=True)
    Y = solve_triangular(L, S, lower=True)
    C = solve_triangular(L, Y.T, lower=True)
    return np.linalg.eigvalsh((C + C.T) / 2.0)


@dataclass(frozen=True)
class LyapunovFamily:
    """Per-mode Lyapunov candidates: SPD matrices or expressions."""

    matrices: Optional[tuple] = None
    expressions: Optional[tuple] = None

    def __post_init__(self):
        if (self.matrices is None) == (self.expressions is None):
            raise CertificateError("give exactly one of matrices or expressions")
        if self.matrices is not None:
            mats = tuple(_check_spd(P, f"P_{p + 1}") for p, P in enumerate(self.matrices))
            if len({P.shape for P in mats}) != 1:
                raise CertificateError("matrices must share a dimension")
            object.__setattr__(self, "matrices", mats)
        else:
            for p, V in enumerate(self.expressions):
                v0 = V(np.zeros(V.dimension))
                if abs(v0) > 1e-9:
                    raise CertificateError(f"V_{p + 1}(0) = {v0}, expected 0")

    @classmethod
    def quadratic(cls, matrices) -> "LyapunovFamily":
        return cls(matrices=tuple(matrices))

    @classmethod
    def from_sources(cls, sources: Sequence[str], dimension: int) -> "LyapunovFamily":
        return cls(expressions=tuple(parse(s, dimension) for s in sources))

    @property
    def is_quadratic(self) -> bool:
        return self.matrices is not None

    @property
    def n_modes(self) -> int:
        return len(self.matrices if self.is_quadratic else self.expressions)

    @property
    def dimension(self) -> int:
        return self.matrices[0].shape[0] if self.is_quadratic else self.expressions[0].dimension

    def values(self, p: int, X: np.ndarray) -> np.ndarray:
        if self.is_quadratic:
            P = self.matrices[p]
            return np.sum((X @ P) * X, axis=1)
        return self.expressions[p].batch(X)

    def gradients(self, p: int, X: np.ndarray, step: float = 1e-6) -> np.ndarray:
        if self.is_quadratic:
            return 2.0 * X @ self.matrices[p]
        return gradient_batch(self.expressions[p], X, step)

    def value(self, p: int, x) -> float:
        return float(self.values(p, np.asarray(x, dtype=float).reshape(1, -1))[0])

    def __getitem__(self, p: int) -> "LyapunovFamily":
        if self.is_quadratic:
            return LyapunovFamily(matrices=(self.matrices[p],))
        return LyapunovFamily(expressions=(self.expressions[p],))


@dataclass(frozen=True)
class SampleSpec:
    count: int = 10_000
    r_min: float = 1e-3
    r_max: float = 1e3

    def points(self, dimension: int, seed: int) -> np.ndarray:
        """Log-uniform radii, uniform directions; never the origin."""
        if not 0 < self.r_min <= self.r_max:
            raise ValueError("need 0 < r_min <= r_max")
        rng = rng_for(seed, 0)
        d = rng.standard_normal((self.count, dimension))
        norms = np.linalg.norm(d, axis=1, keepdims=True)
        d = d / np.where(norms == 0, 1.0, norms)
        r = np.exp(rng.uniform(math.log(self.r_min), math.log(self.r_max), (self.count, 1)))
        return d * r


# ---------------------------------------------------------------- exact (quadratic)


def decay_rate_quadratic(A_list, P_list) -> float:
    """Largest ``lam`` with ``A'P + PA <= -lam P`` in every mode, minimised over modes."""
    if len(A_list) != len(P_list):
        raise CertificateError("one P per mode is required")
    rates = []
    for p, (A, P) in enumerate(zip(A_list, P_list)):
        P = _check_spd(P, f"P_{p + 1}")
        A = np.asarray(A, dtype=float)
        if A.shape != P.shape:
            raise CertificateError(f"mode {p + 1}: A and P dimensions differ")
        rates.append(-pencil_eigvals(A.T @ P + P @ A, P)[-1])
    return float(min(rates))


def mu_quadratic(P_list) -> float:
    """Smallest ``mu`` with ``P_a <= mu P_b`` for all ordered pairs (at least 1)."""
    mats = [_check_spd(P, f"P_{p + 1}") for p, P in enumerate(P_list)]
    if not mats:
        raise CertificateError("need at least one matrix")
    mu = 1.0
    for a, Pa in enumerate(mats):
        for b, Pb in enumerate(mats):
            if a != b:
                mu = max(mu, float(pencil_eigvals(Pa, Pb)[-1]))
    return mu


def classK_bounds_quadratic(P_list) -> tuple[float, float]:
    """``(c1, c2)`` with ``c1 |x|^2 <= V_p(x) <= c2 |x|^2`` for every mode."""
    mats = [_check_spd(P, f"P_{p + 1}") for p, P in enumerate(P_list)]
    eigs = [np.linalg.eigvalsh(P) for P in mats]
    return float(min(e[0] for e in eigs)), float(max(e[-1] for e in eigs))


# ---------------------------------------------------------------- sampled


def _values_checked(V: LyapunovFamily, p: int, X: np.ndarray) -> np.ndarray:
    v = V.values(p, X)
    if np.any(v <= 0):
        bad = X[np.argmax(v <= 0)]
        raise NonPositiveLyapunovError(f"V_{p + 1} is not positive at x = {bad.tolist()}")
    return v


def decay_ratios(sys: SwitchedSystem, V: LyapunovFamily, X: np.ndarray) -> np.ndarray:
    """``-(grad V_p . f_p)/V_p`` at each row of ``X``, one column per mode."""
    if V.n_modes != sys.n_modes:
        raise CertificateError("Lyapunov family and system have different mode counts")
    cols = []
    for p in range(sys.n_modes):
        v = _values_checked(V, p, X)
        lie = np.sum(V.gradients(p, X) * sys.drift(p, X), axis=1)
        cols.append(-lie / v)
    return np.stack(cols, axis=1)


def decay_rate_sampled(sys: SwitchedSystem, V: LyapunovFamily, spec: SampleSpec = SampleSpec(), seed: int = 0) -> float:
    X = spec.points(sys.dimension, seed)
    return float(np.min(decay_ratios(sys, V, X)))


@dataclass(frozen=True)
class DecayDiagnostics:
    rate: float
    decade_minima: tuple  # (log10 radius lower edge, min ratio) per decade
    no_uniform_rate: bool


def decay_rate_diagnostics(sys, V, spec: SampleSpec = SampleSpec(), seed: int = 0) -> DecayDiagnostics:
    """Sampled decay rate plus a check that it does not vanish as the radius shrinks."""
    X = spec.points(sys.dimension, seed)
    ratios = np.min(decay_ratios(sys, V, X), axis=1)
    logr = np.log10(np.linalg.norm(X, axis=1))
    edges = np.arange(math.floor(math.log10(spec.r_min)), math.ceil(math.log10(spec.r_max)))
    minima = []
    for lo in edges:
        sel = (logr >= lo) & (logr < lo + 1)
        if np.any(sel):
            minima.append((float(lo), float(np.min(ratios[sel]))))
    rate = float(np.min(ratios))
    flag = False
    if len(minima) >= 3 and rate > 0:
        med = float(np.median([m for _, m in minima]))
        flag = minima[0][1] < 1e-2 * med
    return DecayDiagnostics(rate, tuple(minima), flag)


def mu_sampled(V: LyapunovFamily, spec: SampleSpec = SampleSpec(), seed: int = 0) -> float:
    """Largest sampled ``V_a(x)/V_b(x)`` over ordered mode pairs (at least 1)."""
    X = spec.points(V.dimension, seed)
    vals = [_values_checked(V, p, X) for p in range(V.n_modes)]
    mu = 1.0
    for a, va in enumerate(vals):
        for b, vb in enumerate(vals):
            if a != b:
                mu = max(mu, float(np.max(va / vb)))
    return mu


def positivity_sampled(V: LyapunovFamily, spec: SampleSpec = SampleSpec(), seed: int = 0) -> None:
    X = spec.points(V.dimension, seed)
    for p in range(V.n_modes):
        _values_checked(V, p, X)


# ---------------------------------------------------------------- gate


@dataclass
class CertificateReport:
    lam_circ: float
    mu: float
    lam_tilde: float
    lam_bar: float
    M: int
    threshold: float
    verdict: str
    margin: float
    methods: dict = field(default_factory=dict)
    class_k: Optional[tuple] = None
    notes: list = field(default_factory=list)
    markov: bool = False

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    @property
    def advisory(self) -> bool:
        return SAMPLED in self.methods.values()

    @property
    def exit_code(self) -> int:
        if not self.passed:
            return 1
        return 2 if self.advisory else 0

    def to_text(self) -> str:
        rates = ("q_tilde", "q_bar") if self.markov else ("lambda_tilde", "lambda_bar")
        lines = [
            "[certificate]",
            f"lambda_circ = {self.lam_circ!r}  ({self.methods.get('lambda_circ', GIVEN)})",
            f"mu = {self.mu!r}  ({self.methods.get('mu', GIVEN)})",
            f"{rates[0]} = {self.lam_tilde!r}",
            f"{rates[1]} = {self.lam_bar!r}",
            f"M = {self.M}",
            f"threshold = {self.threshold!r}",
            f"margin = {self.margin!r}",
        ]
        if self.class_k is not None:
            lines.append(f"class_k = c1 r^2 .. c2 r^2 with c1 = {self.class_k[0]!r}, c2 = {self.class_k[1]!r}")
        status = self.verdict
        if self.passed and self.advisory:
            status += " (advisory: sampled quantities can only falsify)"
        lines.append(f"verdict = {status}")
        lines += [f"note: {n}" for n in self.notes]
        return "\n".join(lines) + "\n"


def check_slow_switching(mu: float, lam_circ: float, lam_tilde: float, lam_bar: float, M: int = 0, methods=None) -> CertificateReport:
    """Gate ``mu < (lam_circ + lam_tilde)/lam_bar`` with ``lam_circ > 0`` and ``mu >= 1``."""
    if lam_bar < 0:
        raise CertificateError("lambda_bar must be nonnegative")
    if mu < 1.0:
        raise CertificateError("mu must be at least 1")
    notes = []
    if mu == 1.0:
        mu = MU_ONE_PLUS
        notes.append("mu = 1 (common Lyapunov function) is gated as 1 + ulp")
    if lam_bar == 0:
        threshold = math.inf
        notes.append("lambda_bar = 0: the signal never switches, gate is vacuous")
    else:
        threshold = (lam_circ + lam_tilde) / lam_bar
    ok = lam_circ > 0 and mu < threshold
    if lam_circ <= 0:
        notes.append("lambda_circ is not positive: no uniform decay")
    return CertificateReport(
        lam_circ=float(lam_circ),
        mu=float(mu),
        lam_tilde=float(lam_tilde),
        lam_bar=float(lam_bar),
        M=int(M),
        threshold=float(threshold),
        verdict="pass" if ok else "fail",
        margin=float(threshold - mu),
        methods=dict(methods or {}),
        notes=notes,
    )

"""Universal-formula state feedback for control-affine switched systems.

For mode ``p`` with Lyapunov candidate ``V_p`` and target rate ``lam``::

    Wbar  = L_f V + lam V
    Wtil  = sum_i (L_{g_i} V)^2
    k_i   = -L_{g_i} V * phi(Wbar, Wtil)

which gives ``L_f V + sum_i k_i L_{g_i} V = -lam V - sqrt(Wbar^2 + Wtil^2)``
wherever ``Wtil != 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from randswitch.dynamics import SwitchedSystem, Trajectory, integrate_field
from randswitch.expr import Expression, gradient_batch
from randswitch.lyapunov import LyapunovFamily
from randswitch.switching import SwitchingSignal, rng_for

ORIGIN_RADIUS = 1e-9
DECREASE_TOL = 1e-3


def lie_derivative(V: Expression, field: Sequence[Expression], x) -> float:
    """``grad V(x) . field(x)`` with a finite-difference gradient."""
    X = np.asarray(x, dtype=float).reshape(1, -1)
    g = gradient_batch(V, X)[0]
    f = np.array([e.batch(X)[0] for e in field])
    return float(g @ f)


def phi(a, b):
    """``(a + sqrt(a^2 + b^2))/b`` for ``b != 0`` and ``0`` otherwise.

    Works on scalars or arrays. The root is taken after scaling by
    ``max(|a|, |b|)``; for ``a < 0`` the equivalent ``b/(sqrt(a^2+b^2) - a)``
    avoids cancellation.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    scale = np.maximum(np.abs(a), np.abs(b))
    nz = b != 0
    safe = np.where(nz, scale, 1.0)
    root = safe * np.sqrt((a / safe) ** 2 + (b / safe) ** 2)
    bb = np.where(nz, b, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        pos = (a + root) / bb
        neg = bb / (root - a)
    out = np.where(nz, np.where(a >= 0, pos, neg), 0.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class SontagGains:
    w_bar: np.ndarray  # (B,)
    w_tilde: np.ndarray  # (B,)
    lie_f: np.ndarray  # (B,)
    lie_g: np.ndarray  # (B, m)
    k: np.ndarray  # (B, m)


def sontag_gains(sys: SwitchedSystem, V: LyapunovFamily, p: int, lam_circ: float, X: np.ndarray) -> SontagGains:
    X = np.asarray(X, dtype=float)
    grad = V.gradients(p, X)
    lie_f = np.sum(grad * sys.drift(p, X), axis=1)
    lie_g = np.einsum("bmn,bn->bm", sys.control_fields(p, X), grad)
    w_bar = lie_f + lam_circ * V.values(p, X)
    w_tilde = np.sum(lie_g * lie_g, axis=1)
    k = -lie_g * np.asarray(phi(w_bar, w_tilde)).reshape(-1, 1)
    near = np.linalg.norm(X, axis=1) < ORIGIN_RADIUS
    k[near] = 0.0
    return SontagGains(w_bar, w_tilde, lie_f, lie_g, k)


def sontag_feedback(sys: SwitchedSystem, V: LyapunovFamily, p: int, lam_circ: float, x) -> np.ndarray:
    """Feedback ``k_p(x)`` (length ``m``); exactly zero for ``|x| < 1e-9``."""
    return sontag_gains(sys, V, p, lam_circ, np.asarray(x, dtype=float).reshape(1, -1)).k[0]


Feedback = Callable[[int, np.ndarray], np.ndarray]


def sontag_law(sys: SwitchedSystem, V: LyapunovFamily, lam_circ: float) -> Feedback:
    return lambda p, X: sontag_gains(sys, V, p, lam_circ, X).k


def closed_loop_field(sys: SwitchedSystem, feedback: Feedback):
    def field(p, X):
        u = feedback(p, X)
        return sys.drift(p, X) + np.einsum("bmn,bm->bn", sys.control_fields(p, X), u)

    return field


def _require_controls(sys: SwitchedSystem):
    if sys.n_controls == 0:
        raise ValueError("system has no control fields")


def integrate_closed_loop(
    sys: SwitchedSystem,
    sig: SwitchingSignal,
    V: LyapunovFamily,
    lam_circ: float,
    x0,
    h: float,
    T: float,
    feedback: Optional[Feedback] = None,
) -> Trajectory:
    """Closed-loop trajectory with the control and ``V_sigma`` logged per sample.

    ``feedback`` replaces the universal formula (used for negative controls).
    """
    _require_controls(sys)
    law = feedback or sontag_law(sys, V, lam_circ)
    traj = integrate_field(closed_loop_field(sys, law), sig, x0, h, T, sys.dimension)
    m = sys.n_controls
    U = np.zeros((len(traj.times), m))
    Vs = np.zeros(len(traj.times))
    for p in np.unique(traj.modes):
        sel = traj.modes == p
        U[sel] = law(int(p), traj.states[sel])
        Vs[sel] = V.values(int(p), traj.states[sel])
    traj.controls = U
    traj.values = Vs
    return traj


@dataclass
class DecreaseReport:
    checked: int
    violations: int
    worst_margin: float  # min over samples of (-lam V + tol(1+V)) - (L_fV + k.L_gV)
    worst_time: Optional[float]
    passed: bool
    notes: list = field(default_factory=list)

    def to_text(self) -> str:
        lines = [
            "[decrease]",
            f"samples_checked = {self.checked}",
            f"violations = {self.violations}",
            f"worst_margin = {self.worst_margin!r}",
            f"worst_time = {self.worst_time!r}",
            f"verdict = {'pass' if self.passed else 'fail'}",
        ]
        lines += [f"note: {n}" for n in self.notes]
        return "\n".join(lines) + "\n"


def verify_decrease(traj: Trajectory, sys: SwitchedSystem, V: LyapunovFamily, lam_circ: float, tol: float = DECREASE_TOL) -> DecreaseReport:
    """Check ``L_f V + sum k_i L_{g_i} V <= -lam V + tol (1 + V)`` at every logged sample.

    Uses the logged controls, so any feedback law can be audited.
    """
    if traj.controls is None:
        raise ValueError("trajectory carries no control log")
    X = traj.states
    active = np.linalg.norm(X, axis=1) >= ORIGIN_RADIUS
    margins = np.full(len(X), np.inf)
    for p in np.unique(traj.modes):
        sel = (traj.modes == p) & active
        if not np.any(sel):
            continue
        Xs = X[sel]
        grad = V.gradients(int(p), Xs)
        lie_f = np.sum(grad * sys.drift(int(p), Xs), axis=1)
        lie_g = np.einsum("bmn,bn->bm", sys.control_fields(int(p), Xs), grad)
        v = V.values(int(p), Xs)
        lhs = lie_f + np.sum(traj.controls[sel] * lie_g, axis=1)
        margins[sel] = (-lam_circ * v + tol * (1.0 + v)) - lhs
    checked = int(np.sum(active))
    notes = ["the infimum condition on controls is implied at the checked samples when this passes"]
    if checked == 0:
        return DecreaseReport(0, 0, float("inf"), None, True, notes + ["no nonzero samples: vacuous pass"])
    worst = int(np.argmin(margins))
    violations = int(np.sum(margins < 0))
    return DecreaseReport(checked, violations, float(margins[worst]), float(traj.times[worst]), violations == 0, notes)


@dataclass
class SmallControlReport:
    radii: tuple
    sup_norms: tuple
    passed: bool

    def to_text(self) -> str:
        lines = ["[small-control]"]
        lines += [f"r = {r!r}: sup|k| = {s!r}" for r, s in zip(self.radii, self.sup_norms)]
        lines.append(f"verdict = {'pass (advisory)' if self.passed else 'fail: gain does not vanish at the origin'}")
        return "\n".join(lines) + "\n"


def check_small_control_property(
    sys: SwitchedSystem,
    V: LyapunovFamily,
    p: int,
    lam_circ: float,
    radii: Sequence[float] = tuple(10.0 ** -i for i in range(7)),
    samples_per_radius: int = 200,
    seed: int = 0,
) -> SmallControlReport:
    """Sup of ``|k_p(x)|`` over sampled spheres of shrinking radius.

    Passes (advisory) when the sup is nonincreasing as the radius shrinks and
    ends at most 1% of its value at the largest radius.
    """
    _require_controls(sys)
    radii = tuple(sorted((float(r) for r in radii), reverse=True))
    rng = rng_for(seed, 0)
    sups = []
    for r in radii:
        d = rng.standard_normal((samples_per_radius, sys.dimension))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        k = sontag_gains(sys, V, p, lam_circ, r * d).k
        sups.append(float(np.max(np.linalg.norm(k, axis=1))))
    monotone = all(b <= a * (1 + 1e-9) + 1e-300 for a, b in zip(sups, sups[1:]))
    vanishing = sups[0] == 0.0 or sups[-1] <= 1e-2 * sups[0]
    return SmallControlReport(radii, tuple(sups), monotone and vanishing)

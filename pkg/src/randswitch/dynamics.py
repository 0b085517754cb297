"""Switched vector-field families and piecewise-deterministic integration.

The integrator is fixed-step RK4 on a mesh that contains the uniform grid
``{0, h, 2h, ...}`` and every switching instant, so the active mode is constant
within each step. It runs on a batch of trajectories at once: each row has its
own switching signal, and rows whose next switch falls inside the current grid
step take an extra, shorter sub-step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from randswitch.expr import Expression, parse_vector
from randswitch.switching import SwitchingSignal, rng_for

BLOWUP_NORM = 1e12


class BlowUpError(ArithmeticError):
    pass


@dataclass(frozen=True)
class Mode:
    """One subsystem: drift given by a matrix (linear) or by expressions."""

    matrix: Optional[np.ndarray] = None
    drift: Optional[tuple] = None
    controls: tuple = ()  # m control fields, each a tuple of n Expressions

    @property
    def is_linear(self) -> bool:
        return self.matrix is not None


def _linear(A: np.ndarray, X: np.ndarray) -> np.ndarray:
    # explicit column sums (no BLAS) keep results independent of batch layout
    out = np.zeros_like(X)
    for j in range(A.shape[1]):
        out += X[:, j : j + 1] * A[:, j]
    return out


def _fields(exprs: Sequence[Expression], X: np.ndarray) -> np.ndarray:
    return np.stack([e.batch(X) for e in exprs], axis=1)


@dataclass(frozen=True)
class SwitchedSystem:
    dimension: int
    modes: tuple

    def __post_init__(self):
        n = self.dimension
        if n < 1 or not self.modes:
            raise ValueError("need a positive dimension and at least one mode")
        m_counts = {len(m.controls) for m in self.modes}
        if len(m_counts) > 1:
            raise ValueError("every mode must have the same number of control fields")
        zero = np.zeros((1, n))
        for p, mode in enumerate(self.modes):
            if mode.is_linear:
                if mode.matrix.shape != (n, n):
                    raise ValueError(f"mode {p + 1}: matrix must be {n}x{n}")
            else:
                if mode.drift is None or len(mode.drift) != n:
                    raise ValueError(f"mode {p + 1}: need {n} drift expressions")
                if any(e.dimension != n for e in mode.drift):
                    raise ValueError(f"mode {p + 1}: drift dimension mismatch")
                f0 = _fields(mode.drift, zero)[0]
                if np.max(np.abs(f0)) > 1e-9:
                    raise ValueError(f"mode {p + 1}: drift must vanish at the origin, got {f0}")
            for g in mode.controls:
                if len(g) != n or any(e.dimension != n for e in g):
                    raise ValueError(f"mode {p + 1}: control fields need {n} expressions")

    @classmethod
    def linear(cls, matrices) -> "SwitchedSystem":
        mats = [np.array(A, dtype=float) for A in matrices]
        return cls(mats[0].shape[0], tuple(Mode(matrix=A) for A in mats))

    @classmethod
    def from_expressions(cls, dimension: int, drifts, controls=None) -> "SwitchedSystem":
        modes = []
        for p, d in enumerate(drifts):
            g = ()
            if controls is not None:
                g = tuple(parse_vector(col, dimension) for col in controls[p])
            modes.append(Mode(drift=parse_vector(d, dimension), controls=g))
        return cls(dimension, tuple(modes))

    @property
    def n_modes(self) -> int:
        return len(self.modes)

    @property
    def n_controls(self) -> int:
        return len(self.modes[0].controls)

    def drift(self, p: int, X: np.ndarray) -> np.ndarray:
        mode = self.modes[p]
        if mode.is_linear:
            return _linear(mode.matrix, X)
        return _fields(mode.drift, X)

    def control_fields(self, p: int, X: np.ndarray) -> np.ndarray:
        """Shape ``(B, m, n)``: value of each control field at each row."""
        mode = self.modes[p]
        if not mode.controls:
            return np.zeros((X.shape[0], 0, self.dimension))
        return np.stack([_fields(g, X) for g in mode.controls], axis=1)

    def __call__(self, p: int, x) -> np.ndarray:
        return self.drift(p, np.asarray(x, dtype=float).reshape(1, -1))[0]


# ---------------------------------------------------------------- RK4

ModeField = Callable[[int, np.ndarray], np.ndarray]


def _rk4(f, x: np.ndarray, h) -> tuple[np.ndarray, np.ndarray]:
    """One RK4 step on rows of ``x``; returns the update and a per-row blow-up mask.

    ``h`` is a scalar or a column ``(B, 1)`` of per-row steps.
    """
    bad = np.zeros(x.shape[0], dtype=bool)

    def guard(s):
        with np.errstate(over="ignore", invalid="ignore"):
            norms = np.sqrt(np.sum(s * s, axis=1))
        hit = ~(norms <= BLOWUP_NORM)
        if hit.any():
            bad[hit] = True
            s = s.copy()
            s[bad] = 0.0  # keep dead rows finite for the remaining stages
        return s

    k1 = f(x)
    k2 = f(guard(x + h * 0.5 * k1))
    k3 = f(guard(x + h * 0.5 * k2))
    k4 = f(guard(x + h * k3))
    out = x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    guard(out)
    return out, bad


def rk4_step(f, x, h: float) -> np.ndarray:
    """Classical RK4 update of ``x`` under ``dx/dt = f(x)``.

    ``f`` maps an n-vector to an n-vector. Raises :class:`BlowUpError` when a
    stage point leaves the ball of radius 1e12.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    out, bad = _rk4(lambda X: np.atleast_2d(np.asarray(f(X[0]), dtype=float)), x[None, :], h)
    if bad[0]:
        raise BlowUpError("RK4 stage exceeded the blow-up threshold")
    return out[0]


def uniform_grid(h: float, T: float) -> np.ndarray:
    """``{0, h, 2h, ...} ∩ [0, T]`` plus ``T``; points are ``k*h``, not accumulated."""
    if h <= 0 or T <= 0:
        raise ValueError("h and T must be positive")
    K = int(math.floor(T / h + 1e-9))
    grid = np.arange(K + 1) * h
    if grid[-1] >= T - 1e-9 * h:
        grid[-1] = T
    else:
        grid = np.append(grid, T)
    return grid


class Observer:
    """Hook invoked at every mesh point reached by a set of rows."""

    def at_point(self, t, X, modes, rows, is_stop: bool) -> None:  # pragma: no cover - interface
        pass

    def at_blowup(self, rows) -> None:
        pass


def propagate(
    field: ModeField,
    signals: Sequence[SwitchingSignal],
    X0: np.ndarray,
    h: float,
    T: float,
    observer: Observer,
    stops: Sequence[float] = (),
) -> np.ndarray:
    """Integrate a batch of trajectories, one signal per row.

    ``field(p, X)`` is the right-hand side for mode ``p``. ``stops`` are extra
    shared mesh times (observation grid). The observer sees the initial point,
    every mesh point, and each blow-up. Returns the per-row blow-up mask.
    """
    B = len(signals)
    X = np.array(X0, dtype=float).reshape(B, -1).copy()
    mesh = np.union1d(uniform_grid(h, T), np.asarray([s for s in stops if 0 <= s <= T], dtype=float))
    modes = np.array([s.modes[0] for s in signals])
    nxt = np.ones(B, dtype=np.int64)
    switch_lists = [s.instants for s in signals]
    next_switch = np.array([sw[1] if len(sw) > 1 else math.inf for sw in switch_lists])
    cur = np.zeros(B)
    alive = np.ones(B, dtype=bool)
    blown = np.zeros(B, dtype=bool)

    def rhs_for(ms):
        def rhs(Y):
            out = np.empty_like(Y)
            for p in np.unique(ms):
                sel = ms == p
                out[sel] = field(int(p), Y[sel])
            return out

        return rhs

    def advance(rows, target):
        """Step ``rows`` from ``cur[rows]`` to ``target`` (scalar or per-row)."""
        dt = (target - cur[rows])[:, None]
        new, bad = _rk4(rhs_for(modes[rows]), X[rows], dt)
        if np.any(bad):
            dead = rows[bad]
            alive[dead] = False
            blown[dead] = True
            observer.at_blowup(dead)
            rows, new = rows[~bad], new[~bad]
            target = target if np.isscalar(target) else target[~bad]
        X[rows] = new
        cur[rows] = target
        return rows

    def take_switches(rows):
        for r in rows[next_switch[rows] <= cur[rows]]:
            modes[r] = signals[r].modes[nxt[r]]
            nxt[r] += 1
            next_switch[r] = switch_lists[r][nxt[r]] if nxt[r] < len(switch_lists[r]) else math.inf

    all_rows = np.arange(B)
    observer.at_point(0.0, X, modes, all_rows, True)
    for j in range(len(mesh) - 1):
        t_end = mesh[j + 1]
        # switches strictly inside (mesh[j], t_end)
        while True:
            rows = np.flatnonzero(alive & (next_switch < t_end))
            if rows.size == 0:
                break
            targets = next_switch[rows]
            rows = advance(rows, targets)
            if rows.size == 0:
                continue
            times = cur[rows]
            take_switches(rows)
            for t in np.unique(times):
                sel = rows[times == t]
                observer.at_point(float(t), X[sel], modes[sel], sel, False)
        rows = np.flatnonzero(alive)
        if rows.size == 0:
            break
        rows = advance(rows, t_end)
        if rows.size == 0:
            break
        take_switches(rows)
        observer.at_point(float(t_end), X[rows], modes[rows], rows, True)
    return blown


# ---------------------------------------------------------------- trajectories


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    modes: np.ndarray  # 0-based active mode at each sample
    controls: Optional[np.ndarray] = None
    values: Optional[np.ndarray] = None
    blown_up: bool = False

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    def csv_header(self) -> list[str]:
        n = self.states.shape[1]
        head = ["t", "mode"] + [f"x{i + 1}" for i in range(n)]
        if self.controls is not None:
            head += [f"u{i + 1}" for i in range(self.controls.shape[1])]
        if self.values is not None:
            head.append("V")
        return head

    def csv_rows(self):
        for i, t in enumerate(self.times):
            row = [float(t), int(self.modes[i]) + 1] + [float(v) for v in self.states[i]]
            if self.controls is not None:
                row += [float(u) for u in self.controls[i]]
            if self.values is not None:
                row.append(float(self.values[i]))
            yield row


class _Recorder(Observer):
    def __init__(self):
        self.times, self.states, self.modes = [], [], []

    def at_point(self, t, X, modes, rows, is_stop):
        self.times.append(t)
        self.states.append(X[0].copy())
        self.modes.append(int(modes[0]))


def integrate_switched(sys: SwitchedSystem, sig: SwitchingSignal, x0, h: float, T: float) -> Trajectory:
    """Open-loop trajectory of ``dx/dt = f_sigma(x)`` on ``[0, T]``.

    Blow-up truncates the trajectory at the last finite mesh point and sets
    ``blown_up``.
    """
    return integrate_field(sys.drift, sig, x0, h, T, sys.dimension)


def integrate_field(field: ModeField, sig: SwitchingSignal, x0, h: float, T: float, dimension: int) -> Trajectory:
    if T > sig.horizon + 1e-12:
        raise ValueError("T exceeds the signal horizon")
    x0 = np.asarray(x0, dtype=float).reshape(1, -1)
    if x0.shape[1] != dimension:
        raise ValueError(f"x0 must have dimension {dimension}")
    rec = _Recorder()
    blown = propagate(field, [sig], x0, h, T, rec)
    return Trajectory(
        np.array(rec.times), np.array(rec.states), np.array(rec.modes, dtype=np.int64), blown_up=bool(blown[0])
    )


def lipschitz_estimate(sys: SwitchedSystem, radius: float, samples: int, seed: int = 0) -> float:
    """Largest sampled ``|f_p(x) - f_p(y)| / |x - y|`` over pairs in the ball.

    A lower bound on the local Lipschitz constant; diagnostic only.
    """
    if samples < 2:
        raise ValueError("need at least 2 samples")
    rng = rng_for(seed, 0)
    n = sys.dimension

    def ball(k):
        d = rng.standard_normal((k, n))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return d * radius * rng.random((k, 1)) ** (1.0 / n)

    X, Y = ball(samples), ball(samples)
    dist = np.linalg.norm(X - Y, axis=1)
    keep = dist > 0
    best = 0.0
    for p in range(sys.n_modes):
        diff = np.linalg.norm(sys.drift(p, X[keep]) - sys.drift(p, Y[keep]), axis=1)
        best = max(best, float(np.max(diff / dist[keep])))
    return best

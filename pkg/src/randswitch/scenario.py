"""Scenario configuration: a single JSON document describing one experiment.

Example (``mjls2``)::

    {
      "name": "mjls2",
      "dimension": 2,
      "modes": [{"matrix": [[-3, 0], [0, -3]]}, {"matrix": [[-3, 1], [-1, -3]]}],
      "lyapunov": {"matrices": [[[1, 0], [0, 1]], [[1, 0], [0, 1]]]},
      "switching": {"generator": [[-1, 1], [1, -1]], "initial": [1, 0]},
      "x0": [1, 1], "h": 0.001, "T": 3.0, "seed": 0,
      "ensemble": {"trajectories": 10000, "grid_points": 20, "epsilon": [0.001]}
    }

Modes and signal modes are numbered from 1 in configuration files and CSV
output, and from 0 in code.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from randswitch.dynamics import Mode, SwitchedSystem
from randswitch.expr import ExpressionError, parse_vector
from randswitch.lyapunov import CertificateError, LyapunovFamily
from randswitch.switching import GeneratorMatrix, PmfBoundParams, SwitchingSignal

BUNDLED = ("mjls2", "mjls2b", "nl2", "ctrl1", "ctrl2", "fail1")


class ConfigError(ValueError):
    pass


ENSEMBLE_DEFAULTS = {"trajectories": 1000, "grid_points": 20, "epsilon": [1e-3], "min_converged_fraction": 0.99}
CTMC_DEFAULTS = {"times": [0.5, 1.0, 2.0], "kmax": 10, "samples": 100000}
STABILIZE_DEFAULTS = {"small_control": True, "radii": [10.0 ** -i for i in range(7)], "samples_per_radius": 200}


@dataclass
class Scenario:
    name: str
    dimension: int
    system: SwitchedSystem
    raw_modes: list
    lyapunov: Optional[LyapunovFamily] = None
    raw_lyapunov: Optional[dict] = None
    generator: Optional[GeneratorMatrix] = None
    initial: Optional[np.ndarray] = None
    signal: Optional[SwitchingSignal] = None
    bound: Optional[PmfBoundParams] = None
    lambda_circ: Optional[float] = None
    x0: Optional[np.ndarray] = None
    h: float = 1e-3
    T: float = 1.0
    seed: int = 0
    ensemble: dict = field(default_factory=lambda: dict(ENSEMBLE_DEFAULTS))
    ctmc_check: dict = field(default_factory=lambda: dict(CTMC_DEFAULTS))
    stabilize: dict = field(default_factory=lambda: dict(STABILIZE_DEFAULTS))

    @property
    def source_kind(self) -> str:
        if self.generator is not None:
            return "generator"
        return "signal" if self.signal is not None else "bound"

    def require_generator(self, command: str) -> None:
        if self.generator is None:
            raise ConfigError(f"{command} needs a Markov switching source (switching.generator)")

    def require_lyapunov(self, command: str) -> LyapunovFamily:
        if self.lyapunov is None:
            raise ConfigError(f"{command} needs a Lyapunov family")
        return self.lyapunov

    def require_x0(self) -> np.ndarray:
        if self.x0 is None:
            raise ConfigError("x0 is required")
        return self.x0

    def grid(self) -> tuple:
        if "grid" in self.ensemble:
            return tuple(float(t) for t in self.ensemble["grid"])
        return tuple(float(t) for t in np.linspace(0.0, self.T, int(self.ensemble["grid_points"])))

    def to_dict(self) -> dict:
        out = {"name": self.name, "dimension": self.dimension, "modes": copy.deepcopy(self.raw_modes)}
        if self.raw_lyapunov is not None:
            out["lyapunov"] = copy.deepcopy(self.raw_lyapunov)
        if self.generator is not None:
            sw = {"generator": self.generator.q.tolist(), "initial": self.initial.tolist()}
        elif self.signal is not None:
            sw = {
                "signal": {
                    "instants": list(self.signal.instants),
                    "modes": [m + 1 for m in self.signal.modes],
                    "horizon": self.signal.horizon,
                }
            }
        else:
            sw = {"bound": {"lambda_tilde": self.bound.lam_tilde, "lambda_bar": self.bound.lam_bar, "M": self.bound.M}}
        out["switching"] = sw
        if self.lambda_circ is not None:
            out["lambda_circ"] = self.lambda_circ
        if self.x0 is not None:
            out["x0"] = self.x0.tolist()
        out.update(h=self.h, T=self.T, seed=self.seed)
        out["ensemble"] = copy.deepcopy(self.ensemble)
        out["ctmc_check"] = copy.deepcopy(self.ctmc_check)
        out["stabilize"] = copy.deepcopy(self.stabilize)
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _float_matrix(value, label):
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"{label}: not a numeric matrix") from None
    return arr


def _modes(cfg: dict, n: int) -> tuple:
    raw = cfg.get("modes")
    if not isinstance(raw, list) or not raw:
        raise ConfigError("modes must be a nonempty list")
    modes = []
    for p, m in enumerate(raw):
        if not isinstance(m, dict) or ("matrix" in m) == ("drift" in m):
            raise ConfigError(f"mode {p + 1}: give exactly one of 'matrix' or 'drift'")
        controls = tuple(parse_vector(g, n) for g in m.get("controls", []))
        if "matrix" in m:
            modes.append(Mode(matrix=_float_matrix(m["matrix"], f"mode {p + 1}"), controls=controls))
        else:
            modes.append(Mode(drift=parse_vector(m["drift"], n), controls=controls))
    return tuple(modes)


def from_dict(cfg: dict) -> Scenario:
    """Validate and build a scenario; raises :class:`ConfigError` on any problem."""
    try:
        return _from_dict(cfg)
    except (ExpressionError, CertificateError, TypeError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def _from_dict(cfg: dict) -> Scenario:
    if not isinstance(cfg, dict):
        raise ConfigError("configuration must be a JSON object")
    n = int(cfg["dimension"])
    sys = SwitchedSystem(n, _modes(cfg, n))
    N = sys.n_modes
    sc = Scenario(name=str(cfg.get("name", "scenario")), dimension=n, system=sys, raw_modes=copy.deepcopy(cfg["modes"]))

    lyap = cfg.get("lyapunov")
    if lyap is not None:
        if "matrices" in lyap:
            V = LyapunovFamily.quadratic([_float_matrix(P, "lyapunov") for P in lyap["matrices"]])
        elif "expressions" in lyap:
            V = LyapunovFamily.from_sources(lyap["expressions"], n)
        else:
            raise ConfigError("lyapunov needs 'matrices' or 'expressions'")
        if V.n_modes != N or V.dimension != n:
            raise ConfigError(f"lyapunov family must have {N} modes of dimension {n}")
        sc.lyapunov, sc.raw_lyapunov = V, copy.deepcopy(lyap)

    sw = cfg.get("switching")
    if not isinstance(sw, dict):
        raise ConfigError("switching section is required")
    kinds = [k for k in ("generator", "signal", "bound") if k in sw]
    if len(kinds) != 1:
        raise ConfigError("switching needs exactly one of generator, signal, bound")
    if kinds[0] == "generator":
        sc.generator = GeneratorMatrix(_float_matrix(sw["generator"], "generator"))
        if sc.generator.n_modes != N:
            raise ConfigError(f"generator must be {N}x{N}")
        init = sw.get("initial", [1.0] + [0.0] * (N - 1))
        sc.initial = np.array(init, dtype=float)
        if sc.initial.shape != (N,) or np.any(sc.initial < 0) or abs(sc.initial.sum() - 1) > 1e-9:
            raise ConfigError("initial must be a probability vector over the modes")
    elif kinds[0] == "signal":
        s = sw["signal"]
        modes = [int(m) - 1 for m in s["modes"]]
        if any(m < 0 or m >= N for m in modes):
            raise ConfigError(f"signal modes must be in 1..{N}")
        sc.signal = SwitchingSignal(tuple(s["instants"]), tuple(modes), float(s["horizon"]))
    else:
        b = sw["bound"]
        sc.bound = PmfBoundParams(float(b["lambda_tilde"]), float(b["lambda_bar"]), int(b.get("M", 0)))

    if "lambda_circ" in cfg:
        sc.lambda_circ = float(cfg["lambda_circ"])
    if "x0" in cfg:
        sc.x0 = np.array(cfg["x0"], dtype=float)
        if sc.x0.shape != (n,):
            raise ConfigError(f"x0 must have {n} entries")
    sc.h = float(cfg.get("h", 1e-3))
    sc.T = float(cfg.get("T", 1.0))
    if sc.h <= 0 or sc.T <= 0:
        raise ConfigError("h and T must be positive")
    sc.seed = int(cfg.get("seed", 0))
    sc.ensemble = {**ENSEMBLE_DEFAULTS, **cfg.get("ensemble", {})}
    sc.ctmc_check = {**CTMC_DEFAULTS, **cfg.get("ctmc_check", {})}
    sc.stabilize = {**STABILIZE_DEFAULTS, **cfg.get("stabilize", {})}
    return sc


def bundled_path(name: str) -> Path:
    return Path(str(resources.files("randswitch") / "data" / f"{name}.json"))


def load(path_or_name: str) -> Scenario:
    """Load a scenario from a file, or a bundled example by name."""
    path = Path(path_or_name)
    if not path.exists() and path_or_name in BUNDLED:
        path = bundled_path(path_or_name)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path_or_name}: {exc}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path_or_name}: invalid JSON: {exc}") from exc
    return from_dict(cfg)

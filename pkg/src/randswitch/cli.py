"""Command-line entry point: ``randswitch {certify,simulate,mc,ctmc-check,stabilize}``.

Exit codes: 0 pass, 1 fail, 2 advisory pass (some quantity was sampled),
3 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from pathlib import Path

import numpy as np

from randswitch import controller, lyapunov, montecarlo, switching
from randswitch.dynamics import integrate_switched
from randswitch.expr import DomainError
from randswitch.scenario import ConfigError, Scenario, load
from randswitch.svg import emit_svg

log = logging.getLogger("randswitch")

EXIT_PASS, EXIT_FAIL, EXIT_ADVISORY, EXIT_CONFIG = 0, 1, 2, 3


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _signal(sc: Scenario, seed: int):
    if sc.signal is not None:
        if sc.signal.horizon < sc.T:
            raise ConfigError("signal horizon is shorter than T")
        return sc.signal
    sc.require_generator("simulate")
    return switching.sample_ctmc(sc.generator, sc.initial, sc.T, seed)


# ---------------------------------------------------------------- certify


def certificate_for(sc: Scenario, seed: int = 0) -> lyapunov.CertificateReport:
    """Certificate quantities and gate for a scenario (exact where possible)."""
    V = sc.require_lyapunov("certify")
    sys_ = sc.system
    methods = {}
    notes = []
    if sc.generator is not None:
        lam_bar, lam_tilde = switching.q_params(sc.generator)
        M = 0
    elif sc.bound is not None:
        lam_tilde, lam_bar, M = sc.bound.lam_tilde, sc.bound.lam_bar, sc.bound.M
        notes.append("switch-count bound parameters supplied, not verified")
    else:
        raise ConfigError("certify needs a generator or bound parameters (an explicit signal cannot establish the pmf bound)")

    linear = all(m.is_linear for m in sys_.modes)
    if sys_.n_controls and sc.lambda_circ is not None:
        lam_circ = sc.lambda_circ
        methods["lambda_circ"] = lyapunov.GIVEN
        notes.append("closed-loop rate lambda_circ is achieved by the universal-formula feedback")
    elif linear and V.is_quadratic:
        lam_circ = lyapunov.decay_rate_quadratic([m.matrix for m in sys_.modes], V.matrices)
        methods["lambda_circ"] = lyapunov.EXACT
    else:
        diag = lyapunov.decay_rate_diagnostics(sys_, V, lyapunov.SampleSpec(), seed)
        lam_circ = diag.rate
        methods["lambda_circ"] = lyapunov.SAMPLED
        if diag.no_uniform_rate:
            notes.append("no uniform linear rate: sampled decay ratio vanishes at small radii")
    if V.is_quadratic:
        mu = lyapunov.mu_quadratic(V.matrices)
        methods["mu"] = lyapunov.EXACT
    else:
        mu = lyapunov.mu_sampled(V, lyapunov.SampleSpec(), seed)
        methods["mu"] = lyapunov.SAMPLED
    report = lyapunov.check_slow_switching(mu, lam_circ, lam_tilde, lam_bar, M, methods)
    report.markov = sc.generator is not None
    report.notes = notes + report.notes
    if V.is_quadratic:
        report.class_k = lyapunov.classK_bounds_quadratic(V.matrices)
    return report


def _failed_report(sc: Scenario, reason: str) -> lyapunov.CertificateReport:
    r = lyapunov.CertificateReport(math.nan, math.nan, math.nan, math.nan, 0, math.nan, "fail", math.nan)
    r.notes.append(reason)
    return r


def cmd_certify(sc: Scenario, args) -> int:
    try:
        report = certificate_for(sc, args.seed)
    except lyapunov.NonPositiveLyapunovError as exc:
        report = _failed_report(sc, f"V is not positive definite: {exc}")
    text = f"scenario = {sc.name}\n" + report.to_text()
    sys.stdout.write(text)
    (args.out / "certificate.txt").write_text(text)
    return report.exit_code


# ---------------------------------------------------------------- simulate


def cmd_simulate(sc: Scenario, args) -> int:
    x0 = sc.require_x0()
    sig = _signal(sc, args.seed)
    traj = integrate_switched(sc.system, sig, x0, sc.h, sc.T)
    if sc.lyapunov is not None:
        traj.values = np.array([sc.lyapunov.value(int(p), x) for p, x in zip(traj.modes, traj.states)])
    write_csv(args.out / "trajectory.csv", traj.csv_header(), traj.csv_rows())
    if args.svg:
        series = [(f"x{i + 1}", traj.times, traj.states[:, i]) for i in range(sc.dimension)]
        emit_svg(series, args.out / "trajectory.svg", title=f"{sc.name}: trajectory")
    if traj.blown_up:
        log.error("trajectory blew up at t=%s; CSV truncated", traj.times[-1])
        return EXIT_FAIL
    return EXIT_PASS


# ---------------------------------------------------------------- mc


def _ensemble_spec(sc: Scenario, args, horizon: float, grid=()) -> montecarlo.EnsembleSpec:
    count = args.trajectories or int(sc.ensemble["trajectories"])
    return montecarlo.EnsembleSpec(count, horizon, sc.h, args.seed, grid, tuple(sc.ensemble["epsilon"]), args.workers)


def convergence_horizon(params, V0: float, c1: float, eps: float) -> float:
    """``T`` with ``expected_v_bound(T/2) < c1 eps^2 / 100``: the tail sup starts at ``T/2``."""
    return 2.0 * montecarlo.horizon_for(params, V0, c1 * eps * eps * 1e-2)


def cmd_mc(sc: Scenario, args) -> int:
    sc.require_generator("mc")
    V = sc.require_lyapunov("mc")
    x0 = sc.require_x0()
    cert = certificate_for(sc, args.seed)
    params = montecarlo.BoundParams(cert.mu, cert.lam_circ, cert.lam_tilde, cert.lam_bar, cert.M)
    V0 = montecarlo.initial_value(V, x0, sc.initial)
    grid = sc.grid()
    spec = _ensemble_spec(sc, args, sc.T, grid)
    run = montecarlo.run_ensemble(sc.system, sc.generator, sc.initial, x0, spec, V=V)

    lines = [f"scenario = {sc.name}", f"trajectories = {spec.count}", f"seed = {spec.seed}", "confidence: one-sided 3 stderr per grid point", ""]
    lines.append(cert.to_text())
    ok = True
    if cert.lam_circ <= 0 or not cert.passed:
        lines.append("[expected_v]\nskipped: certificate gate failed, the bound does not decay\n")
        ok = False
        ev = None
    else:
        ev = montecarlo.compare_expected_v(run, V0, params)
        write_csv(args.out / "expected_v.csv", ("t", "mean", "stderr", "bound", "pass"), ev.csv_rows())
        lines.append("[expected_v]")
        lines += [f"t = {r.t!r}: mean = {r.mean!r} stderr = {r.stderr!r} bound = {r.bound!r} {'pass' if r.passed else 'FAIL'}" for r in ev.rows]
        lines.append(f"blown_up = {ev.blown}")
        lines.append(f"verdict = {'pass' if ev.passed else 'fail'}\n")
        ok &= ev.passed

    c1 = cert.class_k[0] if cert.class_k else None
    jensen = (V0, params, c1) if (c1 and ev is not None) else None
    rows = montecarlo.mean_norm_from_run(run, jensen)
    write_csv(
        args.out / "mean_norm.csv",
        ("t", "mean", "stderr", "bound", "pass"),
        ((r.t, r.mean, r.stderr, "" if r.jensen_bound is None else r.jensen_bound, "" if r.passed is None else int(r.passed)) for r in rows),
    )
    lines.append("[mean_norm]")
    for r in rows:
        extra = "" if r.jensen_bound is None else f" jensen_bound = {r.jensen_bound!r} {'pass' if r.passed else 'FAIL'}"
        lines.append(f"t = {r.t!r}: mean = {r.mean!r} stderr = {r.stderr!r}{extra}")
    if jensen is not None:
        mn_ok = montecarlo.mean_norm_passed(rows)
        lines.append(f"verdict = {'pass' if mn_ok else 'fail'}")
        ok &= mn_ok
    lines.append("")

    conv_rows = []
    min_frac = float(sc.ensemble.get("min_converged_fraction", 0.99))
    lines.append("[convergence]")
    for eps in spec.epsilons:
        if jensen is not None and "convergence_T" not in sc.ensemble:
            T_conv = convergence_horizon(params, V0, c1, eps)
        else:
            T_conv = float(sc.ensemble.get("convergence_T", sc.T))
        est = montecarlo.estimate_convergence(sc.system, sc.generator, sc.initial, x0, T_conv, eps, spec)
        passed = est.fraction >= min_frac
        ok &= passed
        conv_rows.append((eps, T_conv, est.fraction, est.stderr, est.blown, int(passed)))
        lines.append(
            f"epsilon = {eps!r} T = {T_conv!r}: fraction = {est.fraction!r} stderr = {est.stderr!r} blown_up = {est.blown} "
            f"{'pass' if passed else 'FAIL'} (>= {min_frac})"
        )
    lines.append("note: almost-sure properties are estimated from a finite ensemble; fractions carry the stated stderr")
    write_csv(args.out / "convergence.csv", ("epsilon", "T", "fraction", "stderr", "blown", "pass"), conv_rows)
    text = "\n".join(lines) + "\n"
    (args.out / "mc_report.txt").write_text(text)
    sys.stdout.write(text)
    if args.svg and ev is not None:
        emit_svg(
            [("mean V", grid, [r.mean for r in ev.rows]), ("bound", grid, [r.bound for r in ev.rows])],
            args.out / "expected_v.svg",
            log_y=True,
            title=f"{sc.name}: E[V] vs bound",
        )
    if not ok:
        return EXIT_FAIL
    return EXIT_ADVISORY if cert.advisory else EXIT_PASS


# ---------------------------------------------------------------- ctmc-check


def cmd_ctmc_check(sc: Scenario, args) -> int:
    sc.require_generator("ctmc-check")
    cfg = sc.ctmc_check
    samples = args.trajectories or int(cfg["samples"])
    report = switching.check_markov_pmf_bound(
        sc.generator, sc.initial, cfg["times"], int(cfg["kmax"]), samples, args.seed, args.workers
    )
    write_csv(args.out / "pmf.csv", switching.PMF_CSV_HEADER, switching.pmf_report_rows(report))
    lines = [
        f"scenario = {sc.name}",
        f"q_bar = {report.q_bar!r}",
        f"q_tilde = {report.q_tilde!r}",
        f"samples = {report.samples}",
        f"cells_passed = {sum(c.passed for c in report.cells)}/{len(report.cells)}",
    ]
    lines += [f"flagged: t = {c.t!r} k = {c.k} estimate = {c.estimate!r} bound = {c.bound!r} margin = {c.margin!r}" for c in report.failing()]
    lines.append(f"verdict = {'pass' if report.passed else 'fail'}")
    text = "\n".join(lines) + "\n"
    (args.out / "pmf_report.txt").write_text(text)
    sys.stdout.write(text)
    if args.svg:
        series = []
        for t in cfg["times"]:
            cells = [c for c in report.cells if c.t == float(t)]
            series.append((f"estimate t={t}", [c.k for c in cells], [c.estimate for c in cells]))
            series.append((f"bound t={t}", [c.k for c in cells], [c.bound for c in cells]))
        emit_svg(series, args.out / "pmf.svg", log_y=True, title=f"{sc.name}: switch-count pmf")
    return EXIT_PASS if report.passed else EXIT_FAIL


# ---------------------------------------------------------------- stabilize


def cmd_stabilize(sc: Scenario, args) -> int:
    if sc.system.n_controls == 0:
        raise ConfigError("stabilize needs control fields in every mode")
    V = sc.require_lyapunov("stabilize")
    if sc.lambda_circ is None:
        raise ConfigError("stabilize needs lambda_circ")
    x0 = sc.require_x0()
    lam = sc.lambda_circ
    sig = _signal(sc, args.seed)
    traj = controller.integrate_closed_loop(sc.system, sig, V, lam, x0, sc.h, sc.T)
    write_csv(args.out / "closed_loop.csv", traj.csv_header(), traj.csv_rows())
    dec = controller.verify_decrease(traj, sc.system, V, lam)
    lines = [f"scenario = {sc.name}", f"lambda_circ = {lam!r}", f"blown_up = {traj.blown_up}", dec.to_text()]
    ok = dec.passed and not traj.blown_up
    if sc.stabilize.get("small_control", True):
        for p in range(sc.system.n_modes):
            scp = controller.check_small_control_property(
                sc.system, V, p, lam, sc.stabilize["radii"], int(sc.stabilize["samples_per_radius"]), args.seed
            )
            lines.append(f"mode = {p + 1}")
            lines.append(scp.to_text())
            ok &= scp.passed
    if sc.generator is not None:
        T_conv = float(sc.ensemble.get("convergence_T", sc.T))
        spec = _ensemble_spec(sc, args, T_conv)
        min_frac = float(sc.ensemble.get("min_converged_fraction", 0.99))
        lines.append("[ensemble]")
        for eps in spec.epsilons:
            est = montecarlo.estimate_convergence(sc.system, sc.generator, sc.initial, x0, T_conv, eps, spec, control=(V, lam))
            passed = est.fraction >= min_frac
            ok &= passed
            lines.append(f"epsilon = {eps!r} T = {T_conv!r}: fraction = {est.fraction!r} stderr = {est.stderr!r} blown_up = {est.blown} {'pass' if passed else 'FAIL'}")
    text = "\n".join(lines) + "\n"
    (args.out / "stabilize_report.txt").write_text(text)
    sys.stdout.write(text)
    if args.svg:
        emit_svg(
            [("x1", traj.times, traj.states[:, 0]), ("u1", traj.times, traj.controls[:, 0])],
            args.out / "closed_loop.svg",
            title=f"{sc.name}: closed loop",
        )
    return EXIT_PASS if ok else EXIT_FAIL


COMMANDS = {
    "certify": cmd_certify,
    "simulate": cmd_simulate,
    "mc": cmd_mc,
    "ctmc-check": cmd_ctmc_check,
    "stabilize": cmd_stabilize,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="randswitch", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="scenario JSON file or bundled example name")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", type=Path, default=Path("out"))
        p.add_argument("--trajectories", type=int, default=None)
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--svg", action="store_true")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_PASS
    try:
        sc = load(args.config)
        if args.seed is None:
            args.seed = sc.seed
        args.out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](sc, args)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except DomainError as exc:
        log.error("expression domain error: %s", exc)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())

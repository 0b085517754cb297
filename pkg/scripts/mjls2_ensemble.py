"""Ensemble mean of V against its bound for the two linear examples."""

import argparse
from pathlib import Path

import numpy as np

from randswitch.cli import certificate_for
from randswitch.montecarlo import BoundParams, EnsembleSpec, compare_expected_v, initial_value, run_ensemble
from randswitch.scenario import load
from randswitch.svg import emit_svg


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--trajectories", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", type=Path, default=Path("out/ensemble"))
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    for name in ("mjls2", "mjls2b"):
        sc = load(name)
        cert = certificate_for(sc)
        params = BoundParams(cert.mu, cert.lam_circ, cert.lam_tilde, cert.lam_bar)
        spec = EnsembleSpec(args.trajectories, sc.T, sc.h, args.seed, sc.grid(), workers=args.workers)
        run = run_ensemble(sc.system, sc.generator, sc.initial, sc.x0, spec, V=sc.lyapunov)
        cmp = compare_expected_v(run, initial_value(sc.lyapunov, sc.x0, sc.initial), params)
        ratio = np.array([r.mean / r.bound for r in cmp.rows])
        print(f"{name}: mu={cert.mu:.4g} lam_circ={cert.lam_circ:.6g} verdict={'pass' if cmp.passed else 'fail'}")
        print(f"  mean/bound ranges over [{ratio.min():.4f}, {ratio.max():.4f}]")
        ts = [r.t for r in cmp.rows]
        emit_svg(
            [("mean V", ts, [r.mean for r in cmp.rows]), ("bound", ts, [r.bound for r in cmp.rows])],
            args.out / f"{name}.svg",
            log_y=True,
            title=f"{name}: E[V] and bound",
        )


if __name__ == "__main__":
    main()

"""Bias and RMSE of each estimator as the sample grows.

With a binned covariate the marginality estimator needs participation to be
flat inside each cell.  ``--cells`` reruns it on a model whose hiring curves
are smooth in theta, where the leftover bias shrinks with the cell width but
not with n.

    python3 scripts/consistency_ladder.py --config configs/binned_aligned.toml
    python3 scripts/consistency_ladder.py --config configs/lognormal_logistic.toml --cells
"""
import argparse

from margte import cli, dgp, oracle
from margte.mc import StudyConfig, run_study

PLAN = {
    "omd": {},
    "ipw": {"propensity": "oracle"},
    "psm_post": {"propensity": "oracle"},
    "psm_pre": {"propensity": "oracle"},
    "marginality": {},
}


def ladder(spec, sizes, reps, seed, threads):
    print(f"  {'n':>8s} {'estimator':12s} {'bias':>9s} {'mcse':>8s} {'rmse':>8s} {'fail':>5s}")
    for n in sizes:
        res = run_study(StudyConfig(spec, PLAN, reps, n, seed, threads))
        for r in res.rows:
            print(f"  {n:8d} {r.estimator:12s} {r.bias:9.4f} {r.mcse:8.4f} {r.rmse:8.4f} "
                  f"{r.failures:5d}")


def cell_sweep(spec, counts, n, reps, seed, threads):
    truth = oracle.weighted_ate(spec, "marginality")
    print(f"\n  marginality on binned covariate, tau_dp = {truth:.5f}")
    print(f"  {'cells':>6s} {'bias':>9s} {'mcse':>8s}")
    for k in counts:
        binned = dgp.DGPSpec(spec.distribution, spec.p0, spec.p1, spec.y0, spec.y1,
                             dgp.Binned.from_quantiles(spec.distribution, k))
        res = run_study(StudyConfig(binned, {"marginality": {"cells": k}}, reps, n, seed, threads))
        r = res.row("marginality")
        print(f"  {k:6d} {r.bias:9.5f} {r.mcse:8.5f}")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/two_type.toml")
    ap.add_argument("--sizes", type=int, nargs="+", default=[2_000, 10_000, 50_000])
    ap.add_argument("-R", "--replications", type=int, default=100)
    ap.add_argument("--seed", type=int, default=2)
    ap.add_argument("--threads", type=int, default=4)
    ap.add_argument("--cells", action="store_true", help="sweep the covariate cell count")
    args = ap.parse_args(argv)

    spec = cli.load_config(args.config).spec
    print(args.config)
    ladder(spec, args.sizes, args.replications, args.seed, args.threads)
    if args.cells:
        cell_sweep(spec, (5, 10, 20, 40), max(args.sizes), args.replications, args.seed,
                   args.threads)


if __name__ == "__main__":
    main()

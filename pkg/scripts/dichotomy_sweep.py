"""Threshold split of marginal and inframarginal types across cutoffs.

For each probability cutoff prints the two threshold types, the conditional
effects on either side, and the marginality-weighted effect, which needs no
cutoff at all.

    python3 scripts/dichotomy_sweep.py --config configs/exponential_ratio.toml
"""
import argparse

import numpy as np

from margte import cli, oracle
from margte.errors import MargteError


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/exponential_ratio.toml")
    ap.add_argument("--levels", type=int, default=12)
    args = ap.parse_args(argv)

    spec = cli.load_config(args.config).spec
    top = spec.upper(oracle.DEFAULT_QUADRATURE.truncation)
    lo, hi = float(spec.p1(0.0)), float(spec.p0(top))
    print(f"tau_dp = {oracle.weighted_ate(spec, 'marginality'):.6f}")
    print(f"admissible cutoffs [{lo:.4f}, {hi:.4f}]")
    print(f"  {'cutoff':>7s} {'theta_bbar':>11s} {'theta_bar':>10s} {'tau_mar':>9s} "
          f"{'tau_infra':>10s}")
    for level in np.linspace(lo, hi, args.levels + 2)[1:-1]:
        try:
            r = oracle.dichotomy_analysis(spec, float(level))
        except MargteError as exc:
            print(f"  {level:7.4f}  {exc}")
            continue
        print(f"  {level:7.4f} {r.theta_bbar:11.5f} {r.theta_bar:10.5f} {r.tau_mar:9.5f} "
              f"{r.tau_infra:10.5f}")


if __name__ == "__main__":
    main()

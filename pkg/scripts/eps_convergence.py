"""Nonlocal-to-local comparison: operator probe and solution distances over eps.

The probe needs only FFTs and runs on a fine grid; the solution-level study
integrates one local and one nonlocal trajectory per eps.
"""
import argparse
from pathlib import Path

from nlch.config import load_config
from nlch.kernel import limit_coefficient
from nlch.studies import check_eps_convergence, operator_probe_errors


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=Path(__file__).parent.parent / "configs" / "eps_sweep.cfg")
    ap.add_argument("--eps", type=float, nargs="+", default=[0.2, 0.1, 0.05])
    ap.add_argument("--probe-points", type=int, default=1024)
    ap.add_argument("--probe-dims", type=int, nargs="+", default=[1, 2],
                    help="also report the probe in these dimensions")
    ap.add_argument("--output", default="out/eps_convergence")
    args = ap.parse_args()

    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    rep = check_eps_convergence(load_config(args.config), args.eps, probe_points=args.probe_points)
    rep.write_csv(out / "eps_sweep.csv")
    print(rep.summary())
    for d in args.probe_dims:
        n = args.probe_points if d == 1 else 256
        errs = operator_probe_errors(d, n, args.eps)
        print(f"probe against kappa_{d} = {limit_coefficient(d):.6f} times -Laplacian, d={d}, N={n}: "
              + ", ".join(f"{e:.3e}" for e in errs))


if __name__ == "__main__":
    main()

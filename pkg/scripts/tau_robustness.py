"""Time-integrated estimate quantities over a range of step sizes.

Prints the sweep for smooth data (default config) and, with --broadband,
repeats it with four perturbation modes per axis.
"""
import argparse
from pathlib import Path

from nlch.config import load_config
from nlch.studies import check_tau_uniformity


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=Path(__file__).parent.parent / "configs" / "tau_sweep.cfg")
    ap.add_argument("--tau", type=float, nargs="+", default=[8e-4, 4e-4, 2e-4, 1e-4])
    ap.add_argument("--broadband", action="store_true")
    ap.add_argument("--output", default="out/tau_robustness")
    args = ap.parse_args()

    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    cfg = load_config(args.config)
    cases = [("smooth", cfg)]
    if args.broadband:
        cases.append(("broadband", cfg.with_values("initial", max_mode=4)))
    for name, c in cases:
        rep = check_tau_uniformity(c, args.tau)
        rep.write_csv(out / f"tau_{name}.csv")
        print(name)
        print(rep.summary())


if __name__ == "__main__":
    main()

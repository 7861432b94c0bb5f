"""Observed order of the implicit step against explicit micro-stepping.

Runs the comparison for smooth and broadband initial data so the effect of
high-frequency content on the asymptotic regime is visible side by side.
"""
import argparse
from pathlib import Path

from nlch.config import load_config
from nlch.studies import oracle_compare


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=Path(__file__).parent.parent / "configs" / "oracle.cfg")
    ap.add_argument("--tau", type=float, nargs="+", default=[4e-4, 2e-4, 1e-4])
    ap.add_argument("--max-mode", type=int, nargs="+", default=[1, 4])
    ap.add_argument("--output", default="out/oracle_order")
    args = ap.parse_args()

    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    base = load_config(args.config)
    for m in args.max_mode:
        rep = oracle_compare(base.with_values("initial", max_mode=m), args.tau)
        rep.write_csv(out / f"oracle_max_mode_{m}.csv")
        print(f"max_mode={m}")
        print(rep.summary())


if __name__ == "__main__":
    main()

"""Command-line entry point.

Exit codes: 0 success, 1 validation error, 2 solver failure, 3 self-test
failure.  Every failure prints one ``nlch: <kind>: <message>`` line on
stderr.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, build_grid, initial_state, load_config
from .io import write_diagnostics, write_fields_csv, write_snapshot
from .scheme import SolverError

EXIT_OK, EXIT_VALIDATION, EXIT_SOLVER, EXIT_SELFTEST = 0, 1, 2, 3


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a list of numbers, got {text!r}") from None


def _fail(kind: str, message: str) -> None:
    print(f"nlch: {kind}: {' '.join(str(message).split())}", file=sys.stderr)


def _output_dir(cfg: RunConfig, override) -> Path:
    out = Path(override or cfg.output["directory"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_run(args) -> int:
    from .studies import simulate
    cfg = load_config(args.config)
    out = _output_dir(cfg, args.output)
    every = int(cfg.output["snapshot_every"])

    def snapshot(state, step):
        write_snapshot(state, out / f"snapshot_{step:06d}.bin")
        if args.csv_fields:
            write_fields_csv(state, out / f"fields_{step:06d}.csv")

    def on_step(step, res, prev):
        if every and step % every == 0:
            snapshot(res.state, step)

    with open(out / "header.txt", "w", encoding="utf-8") as fh:
        fh.write(f"config: {Path(args.config).resolve()}\n")
        for section, values in cfg.as_dict().items():
            if section != "warnings":
                fh.write(f"[{section}] {values}\n")
        for note in cfg.warnings:
            fh.write(f"warning: {note}\n")

    state0 = initial_state(cfg, build_grid(cfg))
    snapshot(state0, 0)
    sim = simulate(cfg, callbacks=[on_step], initial=state0)
    steps = len(sim.results)
    if steps and not (every and steps % every == 0):
        snapshot(sim.final, steps)
    write_diagnostics(sim.records, out / "diagnostics.csv", cfg.model["kind"])
    last = sim.records[-1]
    print(f"steps={steps} time={sim.final.time:.6g} energy={last.energy_total:.10g} "
          f"min_u={last.min_u:.4g} simplex_dev={last.simplex_dev:.2e} output={out}")
    return EXIT_OK


def cmd_sweep_eps(args) -> int:
    from .studies import check_eps_convergence
    cfg = load_config(args.config)
    rep = check_eps_convergence(cfg, args.eps, probe_points=args.probe_points,
                                solutions=not args.probe_only)
    rep.write_csv(_output_dir(cfg, args.output) / "sweep_eps.csv")
    print(rep.summary())
    return EXIT_OK


def cmd_sweep_tau(args) -> int:
    from .studies import check_tau_uniformity
    cfg = load_config(args.config)
    rep = check_tau_uniformity(cfg, args.tau)
    rep.write_csv(_output_dir(cfg, args.output) / "sweep_tau.csv")
    print(rep.summary())
    return EXIT_OK


def cmd_oracle(args) -> int:
    from .studies import oracle_compare
    cfg = load_config(args.config)
    taus = args.tau or [4 * cfg.scheme["tau"], 2 * cfg.scheme["tau"], cfg.scheme["tau"]]
    rep = oracle_compare(cfg, taus)
    rep.write_csv(_output_dir(cfg, args.output) / "oracle_compare.csv")
    print(rep.summary())
    return EXIT_OK


def cmd_check(args) -> int:
    from .selftest import run_checks
    if run_checks():
        return EXIT_OK
    _fail("selftest", "one or more properties failed")
    return EXIT_SELFTEST


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nlch", description="Nonlocal multicomponent cross-diffusion simulator.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="time evolution with diagnostics and snapshots")
    p.add_argument("config")
    p.add_argument("--output", help="output directory (overrides the config)")
    p.add_argument("--csv-fields", action="store_true", help="also dump every snapshot as CSV")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep-eps", help="nonlocal-to-local comparison over eps")
    p.add_argument("config")
    p.add_argument("--eps", type=_floats, required=True, help="comma-separated, non-increasing")
    p.add_argument("--probe-points", type=int, help="grid points for the operator probe")
    p.add_argument("--probe-only", action="store_true", help="skip the solution-level runs")
    p.add_argument("--output")
    p.set_defaults(func=cmd_sweep_eps)

    p = sub.add_parser("sweep-tau", help="tau-robustness of the integrated estimates")
    p.add_argument("config")
    p.add_argument("--tau", type=_floats, required=True)
    p.add_argument("--output")
    p.set_defaults(func=cmd_sweep_tau)

    p = sub.add_parser("oracle-compare", help="implicit step versus explicit micro-steps")
    p.add_argument("config")
    p.add_argument("--tau", type=_floats)
    p.add_argument("--output")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("check", help="built-in invariant and oracle self-test")
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        _fail("validation", exc)
        return EXIT_VALIDATION
    except SolverError as exc:
        _fail("solver", exc)
        return EXIT_SOLVER
    except ValueError as exc:
        _fail("validation", exc)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())

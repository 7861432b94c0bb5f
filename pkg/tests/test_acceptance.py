"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py`` (the lines are repeated in the
terminal summary) or directly as ``python3 tests/test_acceptance.py``.
"""
from __future__ import annotations

import filecmp
import functools
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

from nlch import oracles
from nlch.cli import main as cli_main
from nlch.config import parse_config
from nlch.diagnostics import check_energy_monotone
from nlch.grid import TorusGrid
from nlch.initial import make_initial
from nlch.io import read_snapshot, write_snapshot
from nlch.kernel import apply_B, build_operator, make_profile
from nlch.model import ModelParams, State, chemical_potential, energy, interaction_operator
from nlch.scheme import SchemeParams, s2_objective, step_S2
from nlch.studies import check_eps_convergence, check_tau_uniformity, fit_order, oracle_compare, simulate

LINES: list[str] = []


def _cfg(grid, model=None, scheme=None, initial=None, run=None, output=None):
    parts = []
    for name, values in (("grid", grid), ("model", model), ("scheme", scheme), ("initial", initial),
                         ("run", run), ("output", output)):
        if values:
            parts.append(f"[{name}]")
            parts += [f"{k} = {v}" for k, v in values.items()]
    return parse_config("\n".join(parts) + "\n")


def _record(number: int, title: str, ok: bool, detail: str) -> bool:
    line = f"{'PASS' if ok else 'FAIL'} criterion {number:2d} ({title}): {detail}"
    LINES.append(line)
    print(line, flush=True)
    return ok


# invariant runs shared by criteria 1 and 2 ------------------------------------

INVARIANT_CASES = [(n, d, N) for n in (1, 2) for d in (1, 2) for N in (64, 128)]


@functools.lru_cache(maxsize=None)
def invariant_run(n: int, d: int, N: int):
    cfg = _cfg({"d": d, "points": N}, {"species": n + 1, "eps": 0.1}, {"tau": 1e-4},
               {"preset": "perturbed_uniform", "seed": 11, "amplitude": 0.1},
               {"t_final": 1.0, "max_steps": 100})
    t0 = time.perf_counter()
    sim = simulate(cfg)
    return sim, time.perf_counter() - t0, cfg


def criterion_1():
    worst_dev, worst_floor, worst_max, slowest, steps = 0.0, np.inf, 0.0, 0.0, set()
    for case in INVARIANT_CASES:
        sim, secs, _ = invariant_run(*case)
        steps.add(len(sim.results))
        worst_dev = max(worst_dev, max(r.simplex_dev for r in sim.records))
        worst_floor = min(worst_floor, min(r.positivity_floor for r in sim.results),
                          min(r.min_u for r in sim.records))
        worst_max = max(worst_max, max(r.max_u for r in sim.records))
        slowest = max(slowest, secs)
    ok = steps == {100} and worst_dev <= 1e-10 and worst_floor > 0 and worst_max < 1 and slowest <= 120
    return ok, (f"8 runs x {sorted(steps)} steps, max simplex_dev {worst_dev:.2e}, min floor {worst_floor:.4f}, "
                f"max u {worst_max:.4f}, slowest run {slowest:.1f} s")


def criterion_2():
    total, pairs = 0, 0
    for case in INVARIANT_CASES:
        sim, _, cfg = invariant_run(*case)
        res = check_energy_monotone(sim.records, cfg.scheme["outer_tol"])
        total += res.violations
        pairs += len(sim.records) - 1
    return total == 0, f"{total} violations over {pairs} consecutive pairs"


def criterion_3():
    taus = [2e-4, 1e-4, 5e-5]
    means, excess = [], -np.inf
    for tau in taus:
        cfg = _cfg({"d": 1, "points": 64}, {"eps": 0.1}, {"tau": tau},
                   {"preset": "perturbed_uniform", "seed": 3, "amplitude": 0.2, "fractions": "(0.3, 0.7)"},
                   {"t_final": 1.0, "max_steps": 50})
        sim = simulate(cfg)
        recs = sim.records[1:]
        drift = np.array([r.mass_drift_step for r in recs])
        bound = np.array([tau ** 2 * r.mu_l1 for r in recs]) + 10 * cfg.scheme["cg_tol"]
        excess = max(excess, float(np.max(drift - bound)))
        means.append(float(drift.mean()))
    ratios = [means[k] / means[k + 1] for k in range(len(means) - 1)]
    ok = excess <= 0 and all(3.2 <= r <= 4.8 for r in ratios)
    return ok, (f"max(drift - bound) {excess:.2e}, mean drifts {', '.join(f'{m:.3e}' for m in means)}, "
                f"halving ratios {', '.join(f'{r:.3f}' for r in ratios)}")


def criterion_4():
    cfg = _cfg({"d": 1, "points": 128}, {"species": 2, "eps": 0.1}, {"tau": 1e-4},
               {"preset": "perturbed_uniform", "seed": 1, "amplitude": 0.2, "max_mode": 1})
    rep = oracle_compare(cfg, [4e-4, 2e-4, 1e-4])
    order, _ = rep.orders["l2_difference"]
    errs = rep.errors["l2_difference"]
    pair = rep.flags["pairwise_orders"]
    ok = order >= 0.9 and min(pair) >= 0.9
    return ok, (f"L2 differences {', '.join(f'{e:.3e}' for e in errs)}, fitted order {order:.3f}, "
                f"pairwise {', '.join(f'{p:.3f}' for p in pair)}, explicit step {rep.flags['explicit_step']:.2e}")


def criterion_5():
    rng = np.random.default_rng(2024)
    g = TorusGrid(1, 8)
    p = ModelParams.default(2, eps=0.45)
    op = interaction_operator(p, g, min_annulus_cells=1.5)
    scheme = SchemeParams(tau=1e-3, s2_method="softmax", s2_max=20000)
    worst, beaten, trials = 0.0, 0, 0
    instances = 10
    for _ in range(instances):
        mu = 2.0 * rng.standard_normal((2,) + g.shape)
        w = step_S2(p, scheme, mu, op).u
        ref, _, _ = oracles.projected_gradient_S2(p, mu, op)
        worst = max(worst, float(np.max(np.abs(w - ref))))
        best = s2_objective(p, mu, w, op)
        for _ in range(100):
            trials += 1
            beaten += s2_objective(p, mu, oracles.random_simplex_field(rng, 2, g.shape), op) > best
    ok = worst <= 1e-6 and beaten == trials
    return ok, f"{instances} instances: max |softmax - projected gradient| {worst:.2e}, beats {beaten}/{trials} random fields"


def criterion_6():
    rng = np.random.default_rng(77)
    worst, lowest, const = 0.0, np.inf, 0.0
    for d, n in ((1, 8), (1, 16), (2, 8), (2, 16)):
        g = TorusGrid(d, n)
        prof = make_profile(d)
        op = build_operator(g, prof, 0.45, min_annulus_cells=1.5)
        v = rng.standard_normal(g.shape)
        ref = oracles.B_double_sum(g, prof, 0.45, v)
        worst = max(worst, float(np.max(np.abs(apply_B(op, v) - ref)) / np.max(np.abs(ref))))
        for _ in range(100):
            w = rng.standard_normal(g.shape)
            lowest = min(lowest, float(g.inner_l2(apply_B(op, w), w)))
        const = max(const, float(np.max(np.abs(apply_B(op, np.full(g.shape, rng.uniform(-5, 5)))))))
    ok = worst <= 1e-10 and lowest >= -1e-12 and const <= 1e-12
    return ok, f"relative double-sum difference {worst:.2e}, min <Bv,v> {lowest:.3e}, max |B const| {const:.2e}"


def criterion_7():
    t0 = time.perf_counter()
    g = TorusGrid(1, 1024)
    v = np.sin(2 * np.pi * g.coords[0])
    lap = g.laplacian(v)
    errs = []
    for eps in (0.2, 0.1, 0.05):
        op = build_operator(g, make_profile(1), eps)
        errs.append(float(g.norm_l2(apply_B(op, v) + lap) / g.norm_l2(lap)))
    secs = time.perf_counter() - t0
    ok = errs[0] > errs[1] > errs[2] and secs <= 30
    return ok, f"probe errors {', '.join(f'{e:.3e}' for e in errs)}, {secs:.2f} s"


def criterion_8():
    t0 = time.perf_counter()
    cfg = _cfg({"d": 1, "points": 256}, {"species": 2, "eps": 0.1}, {"tau": 1e-5},
               {"preset": "perturbed_uniform", "seed": 3, "amplitude": 0.2, "max_mode": 4},
               {"t_final": 5e-3})
    rep = check_eps_convergence(cfg, [0.2, 0.1, 0.05])
    dist = rep.errors["solution_l2l2"]
    secs = time.perf_counter() - t0
    ok = rep.monotone["solution_l2l2"] and secs <= 600
    return ok, f"L2(0,T;L2) distances {', '.join(f'{x:.3e}' for x in dist)}, {secs:.1f} s"


def criterion_9():
    cfg = _cfg({"d": 1, "points": 128}, {"species": 2, "eps": 0.1}, {"tau": 1e-4},
               {"preset": "perturbed_uniform", "seed": 3, "amplitude": 0.2, "max_mode": 1},
               {"t_final": 8e-3})
    rep = check_tau_uniformity(cfg, [8e-4, 4e-4, 2e-4, 1e-4])
    names = ("fisher", "nonlocal_grad_form", "flux_norm")
    ok = all(rep.flags[f"uniform_{n}"] for n in names) and rep.flags["mu_h2_sq_decreasing"]
    ratios = ", ".join(f"{n} {rep.flags[f'ratio_{n}']:.3f}" for n in names)
    h2 = ", ".join(f"{x:.2e}" for x in rep.errors["mu_h2_sq"])
    return ok, f"max/min ratios {ratios}; tau*|mu|_H2^2 integrals {h2}"


def criterion_10():
    rng = np.random.default_rng(99)
    slopes = []
    for n in (1, 2):
        for d in (1, 2):
            g = TorusGrid(d, 32)
            p = ModelParams.default(n + 1, eps=0.2)
            op = interaction_operator(p, g)
            s = make_initial("perturbed_uniform", g, n + 1, amplitude=0.3, seed=5)
            mu = chemical_potential(p, s, op)
            for _ in range(3):
                delta = rng.standard_normal(s.u.shape)
                delta -= delta.mean(axis=0)
                delta *= 0.05 / np.max(np.abs(delta))
                errs, _ = oracles.fd_energy_errors(lambda u: energy(p, State(g, u), op), s.u, mu, delta,
                                                   g.cell_volume, [0.4, 0.2, 0.1, 0.05])
                slopes.extend(np.log2(errs[:-1] / errs[1:]).tolist())
    ok = min(slopes) >= 1.9
    return ok, f"{len(slopes)} halving slopes in [{min(slopes):.3f}, {max(slopes):.3f}]"


def criterion_11():
    text = ("[grid]\nd = 2\npoints = 32\n[model]\nspecies = 3\neps = 0.2\n[scheme]\ntau = 1e-4\n"
            "[initial]\npreset = dirichlet_random\nseed = 17\n[run]\nt_final = 5e-4\n"
            "[output]\nsnapshot_every = 2\nstrict = true\n")
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        (tmp / "a.cfg").write_text(text)
        codes = [cli_main(["run", str(tmp / "a.cfg"), "--output", str(tmp / name)]) for name in ("r1", "r2")]
        files = sorted(p.name for p in (tmp / "r1").iterdir())
        same, diff, errors = filecmp.cmpfiles(tmp / "r1", tmp / "r2", files, shallow=False)
        state = read_snapshot(tmp / "r1" / files[-1])
        write_snapshot(state, tmp / "copy.bin")
        back = read_snapshot(tmp / "copy.bin")
        exact = (back.time == state.time and back.grid == state.grid and np.array_equal(back.u, state.u)
                 and (tmp / "copy.bin").read_bytes() == (tmp / "r1" / files[-1]).read_bytes())
    ok = codes == [0, 0] and not diff and not errors and len(same) == len(files) and exact
    return ok, f"{len(same)}/{len(files)} output files byte-identical, snapshot round-trip bit-exact: {exact}"


CRITERIA = {
    1: ("simplex and box invariants", criterion_1),
    2: ("energy monotonicity", criterion_2),
    3: ("mass-drift law", criterion_3),
    4: ("oracle equivalence", criterion_4),
    5: ("S2 correctness", criterion_5),
    6: ("operator correctness", criterion_6),
    7: ("nonlocal-to-local, operator", criterion_7),
    8: ("nonlocal-to-local, solution", criterion_8),
    9: ("tau-uniformity of estimates", criterion_9),
    10: ("energy derivative", criterion_10),
    11: ("determinism and format", criterion_11),
}


def evaluate(number: int) -> bool:
    title, fn = CRITERIA[number]
    try:
        ok, detail = fn()
    except Exception as exc:
        ok, detail = False, f"raised {type(exc).__name__}: {exc}"
    return _record(number, title, bool(ok), detail)


@pytest.mark.slow
@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number):
    assert evaluate(number), LINES[-1]


if __name__ == "__main__":
    results = [evaluate(k) for k in sorted(CRITERIA)]
    print(f"{sum(results)}/{len(results)} criteria passed")
    sys.exit(0 if all(results) else 1)

"""Built-in invariant and oracle checks on tiny grids (``nlch check``)."""
from __future__ import annotations

import tempfile
import traceback
from pathlib import Path

import numpy as np

from . import oracles
from .diagnostics import check_energy_monotone
from .grid import TorusGrid
from .initial import make_initial
from .io import read_snapshot, write_snapshot
from .kernel import build_operator, make_profile, sphere_factor
from .model import ModelParams, State, chemical_potential, energy, mobility_at, rhs
from .scheme import SchemeParams, implicit_step, step_S1, step_S2

__all__ = ["CHECKS", "run_checks"]

EPS_TINY = 0.45


def _rng():
    return np.random.default_rng(20240601)


def _tiny(d=1, n=8):
    grid = TorusGrid(d, n)
    profile = make_profile(d)
    op = build_operator(grid, profile, EPS_TINY, min_annulus_cells=1.5)
    return grid, profile, op


def check_transform_roundtrip():
    rng = _rng()
    for d, n in ((1, 16), (2, 8), (3, 4)):
        g = TorusGrid(d, n)
        f = rng.standard_normal(g.shape)
        err = np.max(np.abs(g.inverse_transform(g.forward_transform(f)) - f)) / np.max(np.abs(f))
        if err > 1e-12:
            return False, f"d={d}: round-trip error {err:.2e}"
    return True, "round-trip error <= 1e-12"


def check_div_grad():
    g = TorusGrid(2, 32)
    f = _rng().standard_normal(g.shape)
    err = np.max(np.abs(g.divergence(g.gradient(f)) - g.laplacian(f)))
    return err <= 1e-10 * np.max(np.abs(f)), f"max difference {err:.2e}"


def check_profile_normalization():
    for d in (1, 2, 3):
        p = make_profile(d)
        for eps in (1.0, 0.1, 0.05):
            m = p.radial_moment(d - 1, eps)
            if abs(m - sphere_factor(d)) > 1e-10 * sphere_factor(d):
                return False, f"d={d}, eps={eps}: moment {m!r}"
    return True, "radial moments match the sphere factors"


def check_B_double_sum():
    rng = _rng()
    worst = 0.0
    for d, n in ((1, 16), (2, 8)):
        grid, profile, op = _tiny(d, n)
        v = rng.standard_normal(grid.shape)
        ref = oracles.B_double_sum(grid, profile, EPS_TINY, v)
        worst = max(worst, np.max(np.abs(op.apply(v) - ref)) / np.max(np.abs(ref)))
    return worst <= 1e-10, f"relative difference {worst:.2e}"


def check_B_psd_and_constants():
    rng = _rng()
    grid, _, op = _tiny(1, 16)
    lowest = min(grid.inner_l2(op.apply(v), v) for v in rng.standard_normal((100, 16)))
    const = np.max(np.abs(op.apply(np.full(grid.shape, 3.0))))
    ok = lowest >= -1e-12 and const <= 1e-12 * op.mass * 3.0
    return ok, f"min <Bv,v> = {lowest:.2e}, |B const| = {const:.2e}"


def check_energy_double_sum():
    rng = _rng()
    grid, profile, op = _tiny(1, 8)
    params = ModelParams.default(3, eps=EPS_TINY)
    state = State(grid, oracles.random_simplex_field(rng, 3, grid.shape, alpha=4.0))
    a, b = energy(params, state, op), oracles.energy_double_sum(params, state, profile)
    return abs(a - b) <= 1e-10 * abs(b), f"operator {a!r} vs double sum {b!r}"


def check_chemical_potential():
    rng = _rng()
    grid, profile, op = _tiny(1, 8)
    params = ModelParams.default(2, eps=EPS_TINY)
    state = State(grid, oracles.random_simplex_field(rng, 2, grid.shape, alpha=4.0))
    err = np.max(np.abs(chemical_potential(params, state, op)
                        - oracles.chemical_potential_double_sum(params, state, profile)))
    return err <= 1e-10, f"max difference {err:.2e}"


def check_mobility():
    rng = _rng()
    params = ModelParams.default(4, eps=0.1)
    for _ in range(20):
        u = rng.dirichlet(np.ones(4))
        M = mobility_at(params, u)
        lam = np.linalg.eigvalsh(M)
        if np.max(np.abs(M.sum(axis=0))) > 1e-15 or lam[0] < -1e-12 or lam[-1] > 4 + 1e-12:
            return False, f"u={u}: eigenvalues {lam}"
    return True, "row sums vanish, spectrum inside [0, (n+1) max L]"


def check_rhs_conservation():
    grid = TorusGrid(1, 64)
    params = ModelParams.default(3, eps=0.2)
    state = make_initial("perturbed_uniform", grid, 3, amplitude=0.3, seed=1)
    r = rhs(params, state)
    scale = np.max(np.abs(r))
    err = max(np.max(np.abs(r.sum(axis=0))), np.max(np.abs(grid.integrate(r))))
    return err <= 1e-10 * scale, f"max |sum_i rhs_i|, |int rhs_i| = {err:.2e} (scale {scale:.2e})"


def check_S1_dense():
    rng = _rng()
    grid = TorusGrid(1, 16)
    params = ModelParams.default(2, eps=0.3)
    scheme = SchemeParams(tau=1e-2)
    ut = oracles.random_simplex_field(rng, 2, grid.shape, alpha=5.0)
    up = oracles.random_simplex_field(rng, 2, grid.shape, alpha=5.0)
    mu = step_S1(params, scheme, State(grid, ut), State(grid, up)).mu
    ref = oracles.dense_S1(params, scheme.tau, ut, up)
    err = np.max(np.abs(mu - ref)) / np.max(np.abs(ref))
    return err <= 1e-8, f"relative max difference {err:.2e}"


def check_S2_oracle():
    rng = _rng()
    grid, _, op = _tiny(1, 8)
    params = ModelParams.default(2, eps=EPS_TINY)
    scheme = SchemeParams(tau=1e-3)
    mu = rng.standard_normal((2,) + grid.shape)
    w = step_S2(params, scheme, mu, op).u
    ref, _, _ = oracles.projected_gradient_S2(params, mu, op)
    err = np.max(np.abs(w - ref))
    return err <= 1e-6, f"max difference to projected gradient {err:.2e}"


def check_uniform_fixed_point():
    grid = TorusGrid(1, 32)
    params = ModelParams.default(3, eps=0.2)
    state = make_initial("uniform", grid, 3)
    op = build_operator(grid, make_profile(1), 0.2)
    res = implicit_step(params, SchemeParams(tau=1e-3), state, op)
    err = np.max(np.abs(res.state.u - state.u))
    ok = err <= 1e-14 and res.stats.outer_iterations == 1 and np.ptp(res.mu) <= 1e-14
    return ok, f"change {err:.2e} after {res.stats.outer_iterations} iteration(s)"


def check_energy_decay():
    grid = TorusGrid(1, 64)
    params = ModelParams.default(2, eps=0.2)
    op = build_operator(grid, make_profile(1), 0.2)
    state = make_initial("perturbed_uniform", grid, 2, amplitude=0.3, seed=2)
    scheme = SchemeParams(tau=1e-4)
    energies = [energy(params, state, op)]
    for _ in range(10):
        state = implicit_step(params, scheme, state, op).state
        energies.append(energy(params, state, op))
    res = check_energy_monotone(energies, scheme.outer_tol)
    return res.passed, f"{res.violations} violation(s) over 10 steps"


def check_energy_derivative():
    rng = _rng()
    grid = TorusGrid(1, 32)
    params = ModelParams.default(3, eps=0.2)
    op = build_operator(grid, make_profile(1), 0.2)
    state = make_initial("perturbed_uniform", grid, 3, amplitude=0.3, seed=3)
    mu = chemical_potential(params, state, op)
    delta = rng.standard_normal((3,) + grid.shape)
    delta -= delta.mean(axis=0)
    delta -= delta.mean(axis=1, keepdims=True)
    delta *= 0.05 / np.max(np.abs(delta))
    steps = [0.4, 0.2, 0.1, 0.05]
    errs, _ = oracles.fd_energy_errors(lambda u: energy(params, State(grid, u), op), state.u, mu, delta,
                                       grid.cell_volume, steps)
    slopes = np.log2(errs[:-1] / errs[1:])
    return bool(np.all(slopes >= 1.9)), f"halving slopes {np.round(slopes, 3).tolist()}"


def check_snapshot_roundtrip():
    grid = TorusGrid(2, 8)
    state = make_initial("dirichlet_random", grid, 3, seed=5).replace(time=0.125)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "s.bin"
        write_snapshot(state, path)
        back = read_snapshot(path)
    ok = back.time == state.time and np.array_equal(back.u, state.u) and back.grid == state.grid
    return ok, "bit-exact" if ok else "mismatch"


CHECKS = [
    ("grid.transform_roundtrip", check_transform_roundtrip),
    ("grid.div_grad_is_laplacian", check_div_grad),
    ("kernel.profile_normalization", check_profile_normalization),
    ("kernel.B_matches_double_sum", check_B_double_sum),
    ("kernel.B_psd_and_kills_constants", check_B_psd_and_constants),
    ("model.energy_matches_double_sum", check_energy_double_sum),
    ("model.mu_matches_double_sum", check_chemical_potential),
    ("model.mobility_structure", check_mobility),
    ("model.rhs_conserves", check_rhs_conservation),
    ("scheme.S1_matches_dense_solve", check_S1_dense),
    ("scheme.S2_matches_projected_gradient", check_S2_oracle),
    ("scheme.uniform_is_fixed_point", check_uniform_fixed_point),
    ("scheme.energy_decays", check_energy_decay),
    ("model.energy_derivative_is_mu", check_energy_derivative),
    ("io.snapshot_roundtrip", check_snapshot_roundtrip),
]


def run_checks(out=print) -> bool:
    """Run every check, print one line each, return True when all pass."""
    all_ok = True
    for name, fn in CHECKS:
        try:
            ok, detail = fn()
        except Exception as exc:  # a crash is a failed property, not a crashed suite
            ok, detail = False, f"{type(exc).__name__}: {exc}"
            traceback.print_exc()
        all_ok &= bool(ok)
        out(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return all_ok

"""Whole-run drivers and the parameter sweeps: tau-robustness of the
estimates, the eps -> 0 comparison with the local model, and the
implicit-versus-explicit oracle comparison."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable

import numpy as np

from .config import (RunConfig, build_grid, build_model, build_operator_for, build_scheme,
                     initial_state)
from .grid import TorusGrid
from .diagnostics import DiagnosticsRecord, estimates, initial_record, time_integral
from .kernel import build_operator, limit_coefficient, make_profile
from .model import ModelParams, State
from .scheme import explicit_integrate, explicit_stable_step, implicit_step, run

__all__ = ["Simulation", "SweepReport", "simulate", "fit_order", "check_tau_uniformity",
           "check_eps_convergence", "oracle_compare", "operator_probe_errors"]


@dataclass
class Simulation:
    params: ModelParams
    op: object
    initial: State
    final: State
    records: list[DiagnosticsRecord]
    states: list[State] | None = None
    results: list = field(default_factory=list)


def simulate(cfg: RunConfig, callbacks: Iterable[Callable] = (), keep_states: bool = False,
             params: ModelParams | None = None, initial: State | None = None) -> Simulation:
    """Run the configured time evolution, recording diagnostics at every step."""
    grid = build_grid(cfg)
    params = params or build_model(cfg)
    scheme = build_scheme(cfg)
    op = build_operator_for(cfg, params, grid)
    state0 = initial or initial_state(cfg, grid)
    records = [initial_record(params, state0, op, scheme.tau)]
    states = [state0] if keep_states else None

    def record(step, res, prev):
        records.append(estimates(params, res.state, res.mu, op, res.tau, step=step,
                                 previous=prev, stats=res.stats))
        if keep_states:
            states.append(res.state)

    final, results = run(params, scheme, state0, float(cfg.run["t_final"]), op,
                         callbacks=[record, *callbacks], max_steps=cfg.run["max_steps"])
    return Simulation(params, op, state0, final, records, states, results)


def fit_order(params, errors) -> tuple[float, float]:
    """Least-squares slope of log(error) against log(parameter), and the fit's RMS residual."""
    x, y = np.log(np.asarray(params, float)), np.log(np.asarray(errors, float))
    if len(x) < 2 or np.ptp(x) == 0:
        return np.nan, np.nan
    coef, res, *_ = np.polyfit(x, y, 1, full=True)
    rms = float(np.sqrt(res[0] / len(x))) if len(res) else 0.0
    return float(coef[0]), rms


@dataclass
class SweepReport:
    parameter: str
    values: list
    errors: dict
    orders: dict = field(default_factory=dict)
    monotone: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def rows(self):
        names = list(self.errors)
        yield [self.parameter] + names
        for k, v in enumerate(self.values):
            yield [repr(float(v))] + [repr(float(self.errors[n][k])) for n in names]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            csv.writer(fh, lineterminator="\n").writerows(self.rows())

    def summary(self) -> str:
        lines = [f"sweep over {self.parameter}: {', '.join(f'{v:g}' for v in self.values)}"]
        for name, vals in self.errors.items():
            line = f"  {name}: " + ", ".join(f"{v:.4e}" for v in vals)
            if name in self.orders:
                order, res = self.orders[name]
                line += f"  (order {order:.3f}, fit residual {res:.2e})"
            if name in self.monotone:
                line += f"  monotone={self.monotone[name]}"
            lines.append(line)
        lines += [f"  {k}: {v}" for k, v in self.flags.items()]
        lines += [f"  note: {n}" for n in self.notes]
        return "\n".join(lines)


def _strictly_decreasing(vals) -> bool:
    return bool(np.all(np.diff(np.asarray(vals, float)) < 0))


ESTIMATE_FIELDS = ("fisher", "nonlocal_grad_form", "flux_norm", "mu_h2_sq")


def check_tau_uniformity(cfg: RunConfig, tau_list) -> SweepReport:
    """Time-integrated estimate quantities over [0, t_final] for each tau.

    Flags ``uniform_<name>`` when max/min across the list stays below 2, and
    ``mu_h2_sq_decreasing`` when the tau-weighted H2 quantity falls along with tau.
    """
    taus = [float(t) for t in tau_list]
    integrals = {name: [] for name in ESTIMATE_FIELDS}
    for tau in taus:
        sim = simulate(cfg.with_values("scheme", tau=tau))
        for name in ESTIMATE_FIELDS:
            integrals[name].append(time_integral(sim.records, name))
    rep = SweepReport("tau", taus, integrals)
    if len(taus) < 2:
        rep.notes.append("single tau value: nothing to compare")
        return rep
    for name in ESTIMATE_FIELDS:
        vals = np.asarray(integrals[name])
        rep.orders[name] = fit_order(taus, np.maximum(vals, 1e-300))
        rep.flags[f"ratio_{name}"] = float(vals.max() / vals.min()) if vals.min() > 0 else np.inf
        if name != "mu_h2_sq":
            rep.flags[f"uniform_{name}"] = rep.flags[f"ratio_{name}"] < 2.0
    by_tau = np.asarray(integrals["mu_h2_sq"])[np.argsort(taus)[::-1]]
    rep.flags["mu_h2_sq_decreasing"] = _strictly_decreasing(by_tau)
    return rep


def operator_probe_errors(d: int, n_points: int, eps_list, support=(0.25, 0.75), extent: float = 1.0,
                          min_annulus_cells: float = 3.0) -> list[float]:
    """||B_eps v - kappa_d * (-Laplacian v)|| / ||kappa_d Laplacian v|| for v = sin(2 pi x_1 / extent)."""
    grid = TorusGrid(d, n_points, extent)
    v = np.sin(2 * np.pi * grid.coords[0] / extent)
    target = -limit_coefficient(d) * grid.laplacian(v)
    profile = make_profile(d, support)
    out = []
    for eps in eps_list:
        op = build_operator(grid, profile, eps, min_annulus_cells=min_annulus_cells)
        out.append(float(grid.norm_l2(op.apply(v) - target) / grid.norm_l2(target)))
    return out


def _l2l2(grid, a: list, b: list, dts) -> float:
    total = sum(dt * float(grid.integrate(((ua.u - ub.u) ** 2).sum(axis=0))) for ua, ub, dt in zip(a, b, dts))
    return float(np.sqrt(total))


def check_eps_convergence(cfg: RunConfig, eps_list, probe_points: int | None = None,
                          solutions: bool = True) -> SweepReport:
    """Distance of nonlocal solutions to the local one, and the operator probe, per eps.

    The local reference uses the gradient coefficient kappa_d so that both
    models share the same eps -> 0 limit.  Distances are discrete
    L2(0, T; L2) norms of the piecewise-constant interpolants.
    """
    eps_list = [float(e) for e in eps_list]
    if np.any(np.diff(eps_list) > 0):
        raise ValueError("eps list must be non-increasing")
    g = cfg.grid
    support = tuple(cfg.model["support"])
    cells = float(cfg.model["min_annulus_cells"])
    errors = {"probe": operator_probe_errors(int(g["d"]), probe_points or int(g["points"]), eps_list,
                                             support, float(g["extent"]), cells)}
    if solutions:
        grid = build_grid(cfg)
        ref_cfg = cfg.with_values("model", kind="local", gradient_coefficient=limit_coefficient(grid.d))
        ref = simulate(ref_cfg, keep_states=True)
        dts = [r.tau for r in ref.results]
        dist = []
        for eps in eps_list:
            sim = simulate(cfg.with_values("model", kind="nonlocal", eps=eps), keep_states=True,
                           initial=ref.initial)
            if [r.tau for r in sim.results] != dts:
                raise RuntimeError(f"eps={eps}: time grid differs from the local reference (a step was retried)")
            dist.append(_l2l2(grid, sim.states[1:], ref.states[1:], dts))
        errors["solution_l2l2"] = dist
    rep = SweepReport("eps", eps_list, errors)
    for name, vals in errors.items():
        rep.monotone[name] = _strictly_decreasing(vals)
        if len(set(eps_list)) > 1:
            rep.orders[name] = fit_order(eps_list, vals)
    return rep


def oracle_compare(cfg: RunConfig, tau_list, tau_small: float | None = None) -> SweepReport:
    """One implicit step against forward-Euler micro-steps over the same interval."""
    grid = build_grid(cfg)
    params = build_model(cfg)
    op = build_operator_for(cfg, params, grid)
    state0 = initial_state(cfg, grid)
    scheme = build_scheme(cfg)
    small = tau_small or explicit_stable_step(params, state0, op)
    taus = [float(t) for t in tau_list]
    errs = []
    for tau in taus:
        res = implicit_step(params, replace(scheme, tau=tau), state0, op)
        ref = explicit_integrate(params, state0, op, tau, small)
        errs.append(float(np.sqrt(grid.integrate(((res.state.u - ref.u) ** 2).sum(axis=0)))))
    rep = SweepReport("tau", taus, {"l2_difference": errs})
    rep.orders["l2_difference"] = fit_order(taus, errs)
    rep.monotone["l2_difference"] = _strictly_decreasing(np.asarray(errs)[np.argsort(taus)[::-1]])
    pair = [float(np.log(errs[k] / errs[k + 1]) / np.log(taus[k] / taus[k + 1])) for k in range(len(taus) - 1)]
    rep.flags["pairwise_orders"] = pair
    rep.flags["explicit_step"] = small
    return rep

"""Per-step measurements: energy, masses, bounds and the a-priori estimate
quantities, plus the energy-monotonicity check over a run."""
from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from .model import ModelParams, State, chemical_potential, energy_parts, fluxes

__all__ = ["DiagnosticsRecord", "MonotoneCheck", "estimates", "initial_record",
           "check_energy_monotone", "time_integral", "FISHER_FLOOR"]

FISHER_FLOOR = 1e-12


@dataclass
class DiagnosticsRecord:
    step: int
    time: float
    tau: float
    energy_total: float
    energy_entropy: float
    energy_interaction: float
    mass: np.ndarray
    min_u: float
    max_u: float
    simplex_dev: float
    fisher: np.ndarray
    fisher_floor_hits: int
    nonlocal_grad_form: np.ndarray
    flux_norm: float
    mu_h2_sq: float
    mu_l1: np.ndarray
    mass_drift_step: np.ndarray
    outer_iterations: int = 0
    s2_iterations: int = 0
    linear_iterations: int = 0
    outer_residual: float = np.nan
    s2_residual: float = np.nan
    linear_residual: float = np.nan
    retried: bool = False

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def estimates(params: ModelParams, state: State, mu: np.ndarray, op, tau: float,
              step: int = 0, previous: State | None = None, stats=None) -> DiagnosticsRecord:
    """Measure one step; ``previous`` supplies the per-step mass drift."""
    g = state.grid
    u = state.u
    ent, inter = energy_parts(params, state, op)
    mass = g.integrate(u)

    grad_u = g.gradient(u)
    floor_hits = int(np.count_nonzero(u < FISHER_FLOOR))
    fisher = g.integrate((grad_u ** 2).sum(axis=1) / np.maximum(u, FISHER_FLOOR))
    # sum over axes of <S d_a u_i, d_a u_i>, weighted by c_ii
    grad_form = np.diag(params.C) * g.integrate((op.apply(grad_u) * grad_u).sum(axis=1))

    flux_norm = fluxes(params, state, op).norm_sq(g)
    mu_h2_sq = tau * float(sum(g.norm_h2(m) ** 2 for m in mu))
    drift = np.zeros_like(mass) if previous is None else np.abs(mass - previous.masses())

    rec = DiagnosticsRecord(
        step=step, time=state.time, tau=tau,
        energy_total=ent + inter, energy_entropy=ent, energy_interaction=inter,
        mass=mass, min_u=float(u.min()), max_u=float(u.max()),
        simplex_dev=state.simplex_deviation,
        fisher=fisher, fisher_floor_hits=floor_hits,
        nonlocal_grad_form=grad_form, flux_norm=flux_norm, mu_h2_sq=mu_h2_sq,
        mu_l1=g.integrate(np.abs(mu)), mass_drift_step=drift,
    )
    if stats is not None:
        for name in ("outer_iterations", "s2_iterations", "linear_iterations", "outer_residual",
                     "s2_residual", "linear_residual", "retried"):
            setattr(rec, name, getattr(stats, name))
    return rec


def initial_record(params, state, op, tau) -> DiagnosticsRecord:
    """Record for the initial data, with mu = species-mean-free ln u + q."""
    mu = chemical_potential(params, state, op)
    mu = mu - mu.mean(axis=0, keepdims=True)
    return estimates(params, state, mu, op, tau, step=0)


def time_integral(records, name: str) -> float:
    """sum over steps of tau * value, each step holding its end-of-step value.

    Species-indexed fields are summed over species.  The first record (the
    initial data) carries no time interval and is skipped.
    """
    total = 0.0
    for prev, rec in zip(records[:-1], records[1:]):
        total += (rec.time - prev.time) * float(np.sum(getattr(rec, name)))
    return total


@dataclass
class MonotoneCheck:
    passed: bool
    violations: int = 0
    index: int | None = None
    energy_before: float | None = None
    energy_after: float | None = None
    excess: float | None = None
    slack: float | None = None
    detail: list = field(default_factory=list)

    def __bool__(self):
        return self.passed


def check_energy_monotone(records, outer_tol: float = 1e-9) -> MonotoneCheck:
    """E(t_{p+1}) <= E(t_p) + 10 * outer_tol * (1 + |E(t_p)|) for consecutive records.

    Accepts DiagnosticsRecords or plain energy values.
    """
    energies = [getattr(r, "energy_total", r) for r in records]
    if len(energies) < 2:
        raise ValueError("need at least two records")
    out = MonotoneCheck(passed=True)
    for p, (e0, e1) in enumerate(zip(energies[:-1], energies[1:])):
        slack = 10 * outer_tol * (1 + abs(e0))
        if e1 > e0 + slack:
            out.detail.append((p + 1, e0, e1))
            if out.passed:
                out.passed = False
                out.index, out.energy_before, out.energy_after = p + 1, e0, e1
                out.excess, out.slack = e1 - e0, slack
    out.violations = len(out.detail)
    return out

"""Species state, parameter matrices, mobility, energy, chemical potentials
and fluxes of the multicomponent system.

Fields carry the species index on axis 0, so a state on a d-dimensional
grid is an array of shape ``(n+1, N, ..., N)``.  Both the nonlocal and the
local model are written against an *interaction operator* ``S`` exposing
``apply`` and ``symbol``: ``B_eps`` for the nonlocal model and
``-kappa * Laplacian`` for the local one.  With that,

    mu_i = ln u_i + sum_k c_ik S(u_k),
    E    = sum_i int (u_i ln u_i - u_i + 1) + 1/2 sum_ij c_ij <S u_j, u_i>.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import xlogy

from .grid import TorusGrid
from .kernel import (DEFAULT_MIN_ANNULUS_CELLS, DEFAULT_SUPPORT, LocalOperator,
                     NonlocalOperator, build_operator, make_profile)

__all__ = [
    "ModelParams", "State", "Flux", "PositivityError", "InteractionWarning",
    "mobility_at", "mobility_field", "apply_mobility", "entropy", "energy", "energy_parts",
    "chemical_potential", "q_fields", "fluxes", "rhs", "interaction_operator",
]

LOG_FLOOR = 1e-300
PSD_TOL = 1e-10


class PositivityError(ValueError):
    """A field that must be strictly positive is not."""


class InteractionWarning(UserWarning):
    """Off-diagonal interactions are not small against the diagonal ones."""


def _as_matrix(a, name: str) -> np.ndarray:
    a = np.array(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 2:
        raise ValueError(f"{name} must be a square matrix of size >= 2, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Parameters of the (n+1)-species system.

    kind : "nonlocal" needs ``eps``; "local" uses ``gradient_coefficient``
    as the factor kappa in front of the Laplacian (1 reproduces the plain
    Dirichlet energy).
    """

    L: np.ndarray
    C: np.ndarray
    kind: str = "nonlocal"
    eps: float | None = None
    support: tuple[float, float] = DEFAULT_SUPPORT
    gradient_coefficient: float = 1.0
    warnings: tuple[str, ...] = field(default=(), init=False)

    def __post_init__(self):
        L = _as_matrix(self.L, "L")
        C = _as_matrix(self.C, "C")
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "C", C)
        if C.shape != L.shape:
            raise ValueError(f"L is {L.shape} but C is {C.shape}")
        off = ~np.eye(L.shape[0], dtype=bool)
        if not np.array_equal(L, L.T):
            raise ValueError("L must be symmetric")
        if np.any(L[off] <= 0):
            raise ValueError("off-diagonal entries of L must be positive")
        if not np.array_equal(C, C.T):
            raise ValueError("C must be symmetric")
        lam = np.linalg.eigvalsh(C)
        if lam[0] < -PSD_TOL:
            raise ValueError(f"C is not positive semidefinite: eigenvalue {lam[0]:.6g}")
        if np.any(np.diag(C) <= 0):
            raise ValueError("diagonal entries of C must be positive")
        if self.kind not in ("nonlocal", "local"):
            raise ValueError(f"kind must be 'nonlocal' or 'local', got {self.kind!r}")
        if self.kind == "nonlocal" and not (self.eps is not None and self.eps > 0):
            raise ValueError("nonlocal model needs eps > 0")
        if not self.gradient_coefficient > 0:
            raise ValueError("gradient_coefficient must be positive")

        n = L.shape[0] - 1
        ratio_lhs = (n - 1) * np.max(np.abs(C[off]))
        notes = []
        if ratio_lhs >= 0.5 * np.min(np.diag(C)):
            notes.append(f"off-diagonal interaction {ratio_lhs:.4g} >= half the smallest "
                         f"self-interaction {np.min(np.diag(C)):.4g}")
            warnings.warn(notes[-1], InteractionWarning, stacklevel=3)
        object.__setattr__(self, "warnings", tuple(notes))

    @property
    def n(self) -> int:
        return self.L.shape[0] - 1

    @property
    def species(self) -> int:
        return self.L.shape[0]

    @property
    def off_diagonal_L(self) -> np.ndarray:
        return self.L * (1 - np.eye(self.species))

    @classmethod
    def default(cls, species: int = 2, **kw) -> "ModelParams":
        """L = 1 off the diagonal, C = identity."""
        kw.setdefault("L", np.ones((species, species)))
        kw.setdefault("C", np.eye(species))
        return cls(**kw)


@dataclass(frozen=True, eq=False)
class State:
    """Volume fractions ``u`` of shape (n+1, *grid.shape) at ``time``."""

    grid: TorusGrid
    u: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        u = np.array(self.u, dtype=float)
        self.grid.check(u)
        if u.ndim != self.grid.d + 1 or u.shape[0] < 2:
            raise ValueError(f"state needs shape (species, {self.grid.shape}), got {u.shape}")
        if not np.all(np.isfinite(u)):
            raise ValueError("state has non-finite values")
        if self.time < 0:
            raise ValueError("time must be nonnegative")
        u.setflags(write=False)
        object.__setattr__(self, "u", u)

    @property
    def species(self) -> int:
        return self.u.shape[0]

    @property
    def simplex_deviation(self) -> float:
        return float(np.max(np.abs(self.u.sum(axis=0) - 1.0)))

    @property
    def floor(self) -> float:
        return float(self.u.min())

    def masses(self) -> np.ndarray:
        return self.grid.integrate(self.u)

    def validate(self, box_tol: float = 1e-12, simplex_tol: float = 1e-10) -> "State":
        if self.u.min() < -box_tol or self.u.max() > 1 + box_tol:
            raise ValueError(f"state leaves [0, 1]: range [{self.u.min():.3g}, {self.u.max():.3g}]")
        if self.simplex_deviation > simplex_tol:
            raise ValueError(f"species do not sum to one: deviation {self.simplex_deviation:.3g}")
        return self

    def replace(self, u=None, time=None) -> "State":
        return State(self.grid, self.u if u is None else u, self.time if time is None else time)


def interaction_operator(params: ModelParams, grid: TorusGrid,
                         min_annulus_cells: float = DEFAULT_MIN_ANNULUS_CELLS):
    """B_eps for nonlocal models, -kappa * Laplacian for local ones."""
    if params.kind == "local":
        return LocalOperator(grid, params.gradient_coefficient)
    return build_operator(grid, make_profile(grid.d, params.support), params.eps,
                          min_annulus_cells=min_annulus_cells)


def _operator(params, state, op):
    if op is None:
        return interaction_operator(params, state.grid)
    if params.kind == "local" and isinstance(op, NonlocalOperator):
        raise ValueError("local model given a nonlocal operator")
    if params.kind == "nonlocal" and not isinstance(op, NonlocalOperator):
        raise ValueError("nonlocal model needs a NonlocalOperator")
    if op.grid != state.grid:
        raise ValueError("operator and state live on different grids")
    return op


# mobility -------------------------------------------------------------------

def mobility_at(params: ModelParams, u_point) -> np.ndarray:
    """Mobility matrix at one point."""
    u = np.asarray(u_point, dtype=float)
    if u.shape != (params.species,):
        raise ValueError(f"expected {params.species} fractions, got shape {u.shape}")
    if np.any(u < 0) or np.any(u > 1):
        raise ValueError(f"fractions must lie in [0, 1], got {u}")
    return mobility_field(params.L, u)


def mobility_field(L: np.ndarray, u: np.ndarray) -> np.ndarray:
    """M(u) of shape (n+1, n+1, *grid) for fields u of shape (n+1, *grid)."""
    Lz = L * (1 - np.eye(L.shape[0]))
    Lz = Lz.reshape(Lz.shape + (1,) * (u.ndim - 1))
    M = -Lz * u[:, None] * u[None, :]
    idx = np.arange(L.shape[0])
    M[idx, idx] = -M.sum(axis=1)
    return M


def _pair_product(Lz, a, b, g):
    # a_i sum_j Lz_ij b_j (g_i - g_j), g carrying a component axis after species
    weight = np.einsum("ij,j...->i...", Lz, b)[:, None]
    cross = np.einsum("ij,j...->i...", Lz, b[:, None] * g)
    return a[:, None] * (weight * g - cross)


def apply_mobility(L: np.ndarray, u: np.ndarray, g: np.ndarray, du: np.ndarray | None = None) -> np.ndarray:
    """(M(u) g)_i = sum_j L_ij u_i u_j (g_i - g_j) for g of shape (n+1, d, *grid).

    With ``du`` given, returns the directional derivative (dM(u)[du]) g instead.
    """
    Lz = L * (1 - np.eye(L.shape[0]))
    if du is None:
        return _pair_product(Lz, u, u, g)
    return _pair_product(Lz, du, u, g) + _pair_product(Lz, u, du, g)


# energy ---------------------------------------------------------------------

def entropy(state: State) -> float:
    """sum_i int (u_i ln u_i - u_i + 1), with 0 ln 0 = 0."""
    u = state.u
    return float(state.grid.integrate((xlogy(u, u) - u + 1.0).sum(axis=0)))


def interaction_energy(params: ModelParams, state: State, op=None) -> float:
    """1/2 sum_ij c_ij <S u_j, u_i>."""
    op = _operator(params, state, op)
    CSu = np.einsum("ij,j...->i...", params.C, op.apply(state.u))
    return 0.5 * float(np.sum(state.u * CSu) * state.grid.cell_volume)


def energy_parts(params: ModelParams, state: State, op=None) -> tuple[float, float]:
    """(entropy, interaction part) of the energy."""
    return entropy(state), interaction_energy(params, state, op)


def energy(params: ModelParams, state: State, op=None) -> float:
    s, w = energy_parts(params, state, op)
    return s + w


# chemical potential and fluxes ----------------------------------------------

def q_fields(params: ModelParams, state: State, op=None) -> np.ndarray:
    """q_i = sum_k c_ik S(u_k)."""
    op = _operator(params, state, op)
    return np.einsum("ik,k...->i...", params.C, op.apply(state.u))


def require_positive(u: np.ndarray, what: str = "state"):
    if u.min() > 0:
        return
    flat = int(np.argmin(u))
    loc = np.unravel_index(flat, u.shape)
    raise PositivityError(f"{what} not strictly positive: species {loc[0]} at index "
                          f"{tuple(int(i) for i in loc[1:])} has value {u.flat[flat]:.6g}")


def chemical_potential(params: ModelParams, state: State, op=None) -> np.ndarray:
    """mu_i = ln u_i + q_i."""
    require_positive(state.u)
    return np.log(np.maximum(state.u, LOG_FLOOR)) + q_fields(params, state, op)


class Flux:
    """Pair fluxes J_ij for i < j; ``flux[i, j]`` returns -J_ji when i > j."""

    def __init__(self, species: int, pairs: dict):
        self.species = species
        self._pairs = pairs

    def __getitem__(self, key):
        i, j = key
        if i == j or not (0 <= i < self.species and 0 <= j < self.species):
            raise KeyError(key)
        return self._pairs[(i, j)] if i < j else -self._pairs[(j, i)]

    def pairs(self):
        return self._pairs.items()

    def norm_sq(self, grid: TorusGrid) -> float:
        """sum over ordered pairs i != j of ||J_ij||_2^2."""
        return 2.0 * sum(float(grid.integrate((J ** 2).sum(axis=0))) for J in self._pairs.values())


def fluxes(params: ModelParams, state: State, op=None) -> Flux:
    """J_ij = u_i u_j grad(q_i - q_j)."""
    g = state.grid
    grad_q = g.gradient(q_fields(params, state, op))
    u = state.u
    pairs = {}
    for i in range(state.species):
        for j in range(i + 1, state.species):
            pairs[(i, j)] = g.truncate(u[i] * u[j] * (grad_q[i] - grad_q[j]))
    return Flux(state.species, pairs)


def rhs(params: ModelParams, state: State, op=None) -> np.ndarray:
    """div sum_{j != i} L_ij [u_j grad u_i - u_i grad u_j + J_ij] for every species."""
    g = state.grid
    u = state.u
    grad_u = g.gradient(u)
    J = fluxes(params, state, op)
    flux_sum = np.zeros_like(grad_u)
    for (i, j), Jij in J.pairs():
        pair = params.L[i, j] * (g.truncate(u[j] * grad_u[i] - u[i] * grad_u[j]) + Jij)
        flux_sum[i] += pair
        flux_sum[j] -= pair
    return g.divergence(flux_sum)

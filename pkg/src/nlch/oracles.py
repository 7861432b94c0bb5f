"""Slow reference implementations used to cross-check the spectral code.

Everything here is O(N^(2d)) or dense and meant for tiny grids only.  The
kernel is re-evaluated from the profile at explicit point differences, so
none of these routines shares code with the FFT path.
"""
from __future__ import annotations

import numpy as np
from scipy.special import xlogy

from .grid import TorusGrid
from .kernel import KernelProfile
from .model import ModelParams, State, mobility_field

__all__ = [
    "pair_kernel", "B_double_sum", "dirichlet_double_sum", "energy_double_sum",
    "chemical_potential_double_sum", "gradient_form_double_sum", "derivative_matrix",
    "dense_S1", "project_simplex", "projected_gradient_S2", "random_simplex_field",
    "fd_energy_errors",
]


def _points(grid: TorusGrid) -> np.ndarray:
    return np.stack([c.ravel() for c in grid.coords], axis=-1)


def pair_kernel(grid: TorusGrid, profile: KernelProfile, eps: float) -> np.ndarray:
    """Matrix k(x - y) over all point pairs, minimum-image distance."""
    x = _points(grid)
    diff = x[:, None, :] - x[None, :, :]
    diff -= grid.extent * np.round(diff / grid.extent)
    r = np.sqrt((diff ** 2).sum(axis=-1))
    k = np.zeros_like(r)
    pos = r > 0
    k[pos] = profile.rho_eps(r[pos], eps) / r[pos] ** 2
    return k


def B_double_sum(grid, profile, eps, v) -> np.ndarray:
    """B v(x) = sum_y k(x - y) (v(x) - v(y)) h^d."""
    k = pair_kernel(grid, profile, eps)
    f = np.asarray(v).reshape(-1)
    out = (k * (f[:, None] - f[None, :])).sum(axis=1) * grid.cell_volume
    return out.reshape(grid.shape)


def dirichlet_double_sum(grid, profile, eps, v, w=None) -> float:
    """1/2 sum_x sum_y k(x - y) (v(x) - v(y)) (w(x) - w(y)) h^(2d)."""
    k = pair_kernel(grid, profile, eps)
    f = np.asarray(v).reshape(-1)
    g = f if w is None else np.asarray(w).reshape(-1)
    dv = f[:, None] - f[None, :]
    dw = g[:, None] - g[None, :]
    return 0.5 * float((k * dv * dw).sum()) * grid.cell_volume ** 2


def energy_double_sum(params: ModelParams, state: State, profile: KernelProfile) -> float:
    """Entropy plus 1/4 sum_ij c_ij double integral of K (u_i(x)-u_i(y))(u_j(x)-u_j(y))."""
    g = state.grid
    u = state.u
    ent = sum(float((xlogy(ui, ui) - ui + 1).sum()) for ui in u) * g.cell_volume
    inter = 0.0
    for i in range(state.species):
        for j in range(state.species):
            inter += 0.5 * params.C[i, j] * dirichlet_double_sum(g, profile, params.eps, u[i], u[j])
    return float(ent + inter)


def chemical_potential_double_sum(params: ModelParams, state: State, profile: KernelProfile) -> np.ndarray:
    g = state.grid
    Bu = np.stack([B_double_sum(g, profile, params.eps, ui) for ui in state.u])
    return np.log(state.u) + np.einsum("ik,k...->i...", params.C, Bu)


def gradient_form_double_sum(grid, profile, eps, v) -> float:
    """1/2 double integral of k |grad v(x) - grad v(y)|^2 (spectral gradient)."""
    grad = grid.gradient(v)
    return sum(dirichlet_double_sum(grid, profile, eps, ga) for ga in grad)


def derivative_matrix(n: int, extent: float = 1.0) -> np.ndarray:
    """Dense periodic spectral differentiation matrix (even n, Nyquist mode annihilated)."""
    if n % 2:
        raise ValueError("even n required")
    i = np.arange(n)
    diff = i[:, None] - i[None, :]
    D = np.zeros((n, n))
    off = diff != 0
    D[off] = 0.5 * (-1.0) ** diff[off] / np.tan(diff[off] * np.pi / n)
    return D * (2 * np.pi / extent)


def dense_S1(params: ModelParams, tau: float, u_tilde: np.ndarray, u_prev: np.ndarray, extent: float = 1.0) -> np.ndarray:
    """Direct solve of -div(M grad mu) + tau H2 mu = -(u_tilde - u_prev)/tau in d = 1."""
    S, n = u_tilde.shape
    D = derivative_matrix(n, extent)
    D2 = D @ D
    H2 = np.eye(n) - D2 + D2 @ D2
    M = mobility_field(params.L, u_tilde)
    A = np.zeros((S * n, S * n))
    for i in range(S):
        for j in range(S):
            A[i * n:(i + 1) * n, j * n:(j + 1) * n] = -D @ (M[i, j][:, None] * D)
        A[i * n:(i + 1) * n, i * n:(i + 1) * n] += tau * H2
    b = -(u_tilde - u_prev).ravel() / tau
    return np.linalg.solve(A, b).reshape(S, n)


def project_simplex(v: np.ndarray, lower: float = 0.0) -> np.ndarray:
    """Euclidean projection of each column of v onto {w >= lower, sum w = 1} (sort-based)."""
    S = v.shape[0]
    z = 1.0 - S * lower
    y = (v - lower).reshape(S, -1)
    s = -np.sort(-y, axis=0)
    css = np.cumsum(s, axis=0) - z
    ind = np.arange(1, S + 1)[:, None]
    cond = s - css / ind > 0
    rho = S - 1 - np.argmax(cond[::-1], axis=0)
    theta = css[rho, np.arange(y.shape[1])] / (rho + 1)
    return (np.maximum(y - theta, 0) + lower).reshape(v.shape)


def projected_gradient_S2(params: ModelParams, mu: np.ndarray, op, tol: float = 1e-14,
                          max_iter: int = 200_000, lower: float = 1e-12):
    """Minimize the S2 objective by projected gradient descent with backtracking.

    Works with the pointwise gradient (objective divided by the cell volume)
    and stops when a step moves no value by more than ``tol``.
    """
    C = params.C
    h = op.grid.cell_volume

    def obj(w):
        CSw = np.einsum("ik,k...->i...", C, op.apply(w))
        return float((xlogy(w, w) + 0.5 * w * CSw - mu * w).sum())

    def grad(w):
        return np.log(w) + 1 + np.einsum("ik,k...->i...", C, op.apply(w)) - mu

    w = np.full_like(mu, 1.0 / mu.shape[0])
    f = obj(w)
    step = 1.0
    for it in range(max_iter):
        g = grad(w)
        while True:
            w_new = project_simplex(w - step * g, lower)
            f_new = obj(w_new)
            d = w_new - w
            if f_new <= f + float((g * d).sum()) + float((d ** 2).sum()) / (2 * step) or step < 1e-12:
                break
            step *= 0.5
        change = float(np.max(np.abs(d)))
        w, f = w_new, f_new
        step *= 1.5
        if change <= tol:
            break
    return w, f * h, it + 1


def random_simplex_field(rng: np.random.Generator, species: int, shape, alpha: float = 1.0) -> np.ndarray:
    """Independent Dirichlet(alpha) sample at every point, species axis first."""
    return np.moveaxis(rng.dirichlet(np.full(species, alpha), size=shape), -1, 0)


def fd_energy_errors(energy_fn, u: np.ndarray, mu: np.ndarray, delta: np.ndarray, cell_volume: float, steps):
    """|central difference of E along delta - <mu, delta>| for each step size."""
    exact = float((mu * delta).sum()) * cell_volume
    errors = []
    for s in steps:
        fd = (energy_fn(u + s * delta) - energy_fn(u - s * delta)) / (2 * s)
        errors.append(abs(fd - exact))
    return np.array(errors), exact

"""Implicit time stepping: the linear solve for mu (S1), the constrained
entropy minimization for u (S2), their fixed point, and the time loop.

One step from ``u_prev`` looks for (u, mu) with

    (u - u_prev)/tau = div(M(u) grad mu) - tau * H2 mu,
    ln u_i + sum_k c_ik S(u_k) - mu_i = lambda(x)        (u on the simplex),

where H2 is the multiplier 1 + |k|^2 + |k|^4.  Summing the first equation
over species shows sum_i mu_i = 0, so mu is the species-mean-free part of
ln u + C S u and the step reduces to a nonlinear equation for u alone:

    F(u) = (u - u_prev)/tau - div(M(u) grad mu(u)) + tau * H2 mu(u) = 0.

``method="newton"`` solves F(u) = 0 by Newton-GMRES on the tangent space
of the simplex.  ``method="picard"`` runs the plain composition
u <- S2(S1(u)); it only contracts for large tau and is kept for comparison.
"""
from __future__ import annotations

import logging
import time as _time
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg, gmres
from scipy.special import softmax, xlogy

from .model import ModelParams, State, apply_mobility, mobility_field, rhs

__all__ = [
    "SchemeParams", "StepStats", "StepResult", "S1Result", "S2Result", "SolverError",
    "step_S1", "step_S2", "implicit_step", "explicit_oracle_step", "explicit_integrate",
    "explicit_stable_step", "run", "s2_objective", "s1_operator",
]

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """An iterative solve did not converge."""

    def __init__(self, message: str, history=None):
        super().__init__(message)
        self.history = list(history or [])


@dataclass(frozen=True)
class SchemeParams:
    tau: float
    outer_tol: float = 1e-9
    outer_max: int = 200
    s2_tol: float = 1e-11
    s2_max: int = 500
    s2_damping: float = 0.7
    cg_tol: float = 1e-10
    cg_max: int = 2000
    method: str = "newton"
    s2_method: str = "newton"
    outer_damping: float = 1.0
    retry: bool = True
    gmres_restart: int = 60

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        for name in ("outer_tol", "s2_tol", "cg_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("outer_max", "s2_max", "cg_max", "gmres_restart"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if not 0 < self.s2_damping <= 1 or not 0 < self.outer_damping <= 1:
            raise ValueError("damping factors must lie in (0, 1]")
        if self.method not in ("newton", "picard"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.s2_method not in ("newton", "softmax"):
            raise ValueError(f"unknown s2_method {self.s2_method!r}")


@dataclass
class StepStats:
    outer_iterations: int = 0
    s2_iterations: int = 0
    linear_iterations: int = 0
    outer_residual: float = np.nan
    s2_residual: float = np.nan
    linear_residual: float = np.nan
    retried: bool = False
    seconds: float = 0.0


@dataclass(frozen=True, eq=False)
class StepResult:
    state: State
    mu: np.ndarray
    stats: StepStats
    positivity_floor: float
    tau: float


@dataclass(frozen=True, eq=False)
class S1Result:
    mu: np.ndarray
    iterations: int
    residuals: list


@dataclass(frozen=True, eq=False)
class S2Result:
    u: np.ndarray
    iterations: int
    spread: float
    floor: float


# tangent-space coordinates ----------------------------------------------------
# A tangent field v (sum_i v_i = 0) is stored by its species 1..n; species 0
# is recovered as minus their sum.

def _lift(z):
    return np.concatenate([-z.sum(axis=0, keepdims=True), z])


def _restrict(r):
    """Transpose of _lift."""
    return r[1:] - r[:1]


def _species_mean_free(a):
    return a - a.mean(axis=0, keepdims=True)


def _fraction_to_boundary(u, du, keep=0.99):
    neg = du < 0
    if not np.any(neg):
        return 1.0
    return min(1.0, keep * float(np.min(-u[neg] / du[neg])))


# S1 -------------------------------------------------------------------------

def s1_operator(params: ModelParams, scheme: SchemeParams, u_tilde: np.ndarray, grid):
    """mu -> -div(M(u_tilde) grad mu) + tau * H2 mu on fields of shape (n+1, *grid)."""
    def apply(mu):
        flux = apply_mobility(params.L, u_tilde, grid.gradient(mu))
        return -grid.divergence(flux) + scheme.tau * grid.apply_symbol(mu, grid.h2_symbol)
    return apply


def step_S1(params: ModelParams, scheme: SchemeParams, u_tilde: State, u_prev: State) -> S1Result:
    """Solve the regularized linear problem for mu by preconditioned CG."""
    grid = u_tilde.grid
    if u_prev.grid != grid or u_prev.u.shape != u_tilde.u.shape:
        raise ValueError("u_tilde and u_prev must share grid and species count")
    shape = u_tilde.u.shape
    size = int(np.prod(shape))
    apply = s1_operator(params, scheme, u_tilde.u, grid)
    inv_reg = 1.0 / (scheme.tau * grid.h2_symbol)

    A = LinearOperator((size, size), matvec=lambda x: apply(x.reshape(shape)).ravel(), dtype=float)
    P = LinearOperator((size, size), dtype=float,
                       matvec=lambda x: grid.apply_symbol(x.reshape(shape), inv_reg).ravel())
    b = (-(u_tilde.u - u_prev.u) / scheme.tau).ravel()
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return S1Result(np.zeros(shape), 0, [0.0])

    history = []

    def record(xk):
        history.append(float(np.linalg.norm(b - A.matvec(xk)) / bnorm))

    x, info = cg(A, b, rtol=scheme.cg_tol, atol=0.0, maxiter=scheme.cg_max, M=P, callback=record)
    if info != 0:
        raise SolverError(f"S1 conjugate gradients did not converge in {scheme.cg_max} iterations "
                          f"(relative residual {history[-1] if history else np.nan:.3g})", history)
    return S1Result(x.reshape(shape), len(history), history)


# S2 -------------------------------------------------------------------------

def s2_objective(params: ModelParams, mu: np.ndarray, w: np.ndarray, op) -> float:
    """sum_i int w_i ln w_i + 1/2 sum_ik c_ik <S w_k, w_i> - <mu_i, w_i>."""
    CSw = np.einsum("ik,k...->i...", params.C, op.apply(w))
    dens = xlogy(w, w) + 0.5 * w * CSw - mu * w
    return float(dens.sum() * op.grid.cell_volume)


def _multiplier_spread(params, mu, w, op):
    r = np.log(w) + np.einsum("ik,k...->i...", params.C, op.apply(w)) - mu
    return float(np.max(r.max(axis=0) - r.min(axis=0)))


def _s2_softmax(params, mu, w, op, tol, max_iter, theta):
    # the softmax Jacobian has norm <= 1/2, so the linearized map has real
    # eigenvalues in [0, lam]; damping above 2 / (2 + lam) would diverge
    lam = 0.5 * float(np.linalg.norm(params.C, 2)) * float(np.max(op.symbol))
    theta = min(theta, 2.0 / (2.0 + lam))
    for it in range(1, max_iter + 1):
        scores = mu - np.einsum("ik,k...->i...", params.C, op.apply(w))
        w_new = (1 - theta) * w + theta * softmax(scores, axis=0)
        change = float(np.max(np.abs(w_new - w)))
        w = w_new
        if change <= tol:
            return w, it
        if not np.isfinite(change):
            break
    raise SolverError(f"softmax iteration did not converge in {max_iter} iterations (theta={theta})")


def _s2_newton(params, mu, w, op, tol, max_iter, cg_max):
    grid = op.grid
    C = params.C
    h = grid.cell_volume
    shape = (w.shape[0] - 1,) + w.shape[1:]
    size = int(np.prod(shape))
    obj = s2_objective(params, mu, w, op)
    change = np.inf
    for it in range(1, max_iter + 1):
        g = np.log(w) + 1.0 + np.einsum("ik,k...->i...", C, op.apply(w)) - mu
        spread = float(np.max(g.max(axis=0) - g.min(axis=0)))
        if change <= tol and spread <= 10 * tol:
            return w, it - 1
        g_red = _restrict(g)

        def hess(x, w=w):
            v = _lift(x.reshape(shape))
            return _restrict(v / w + np.einsum("ik,k...->i...", C, op.apply(v))).ravel()

        def precond(x, w=w):
            r = x.reshape(shape)
            wr = w[1:] * r
            return (wr - w[1:] * wr.sum(axis=0)).ravel()

        gnorm = float(np.max(np.abs(g_red)))
        A = LinearOperator((size, size), matvec=hess, dtype=float)
        P = LinearOperator((size, size), matvec=precond, dtype=float)
        z, _ = cg(A, -g_red.ravel(), rtol=min(1e-2, max(gnorm, 1e-14)), atol=0.0, maxiter=cg_max, M=P)
        dw = _lift(z.reshape(shape))

        step = _fraction_to_boundary(w, dw)
        slope = float(np.sum(g * dw)) * h
        for _ in range(40):
            w_try = w + step * dw
            obj_try = s2_objective(params, mu, w_try, op)
            # near the minimizer the decrease drops below round-off; take the full step
            if obj_try <= obj + 1e-4 * step * slope or abs(slope) <= 1e-13 * (1 + abs(obj)):
                break
            step *= 0.5
        change = float(step * np.max(np.abs(dw)))
        w, obj = w_try, obj_try
    raise SolverError(f"S2 Newton iteration did not converge in {max_iter} iterations")


def step_S2(params: ModelParams, scheme: SchemeParams, mu: np.ndarray, op, w0: np.ndarray | None = None) -> S2Result:
    """Minimize the entropy-plus-interaction functional shifted by mu over the simplex.

    Starts from ``w0`` or, by default, from softmax(mu) (the exact minimizer
    without interactions).
    """
    mu = np.asarray(mu, dtype=float)
    if not np.all(np.isfinite(mu)):
        raise ValueError("chemical potential has non-finite values")
    w = softmax(mu, axis=0) if w0 is None else np.array(w0, dtype=float)
    if scheme.s2_method == "newton":
        w, its = _s2_newton(params, mu, w, op, scheme.s2_tol, scheme.s2_max, scheme.cg_max)
    else:
        try:
            w, its = _s2_softmax(params, mu, w, op, scheme.s2_tol, scheme.s2_max, scheme.s2_damping)
        except SolverError:
            w, its = _s2_softmax(params, mu, w, op, scheme.s2_tol, scheme.s2_max, scheme.s2_damping / 2)
    return S2Result(w, its, _multiplier_spread(params, mu, w, op), float(w.min()))


# outer solve ------------------------------------------------------------------

def _residual(params, scheme, u, u_prev, mu, grid):
    return (u - u_prev) / scheme.tau + s1_operator(params, scheme, u, grid)(mu)


def _frozen_preconditioner(params, scheme, u, op, inv_dt=None):
    """Per-wavenumber inverse of the logit-coordinate Jacobian with spatially averaged coefficients."""
    grid = op.grid
    S = u.shape[0]
    ax = tuple(range(2, u.ndim + 1))
    Mbar = mobility_field(params.L, u).mean(axis=ax)
    flat = u.reshape(S, -1)
    Wbar = np.diag(flat.mean(axis=1)) - flat @ flat.T / flat.shape[1]
    P = np.eye(S) - 1.0 / S
    Z = np.vstack([-np.ones((1, S - 1)), np.eye(S - 1)])
    R = np.hstack([np.zeros((S - 1, 1)), np.eye(S - 1)])

    k2 = grid.k2[..., None, None]
    sym = op.symbol[..., None, None]
    h2 = grid.h2_symbol[..., None, None]
    CW = params.C @ Wbar
    inv_dt = 1.0 / scheme.tau if inv_dt is None else inv_dt
    J = (Wbar * inv_dt + k2 * (Mbar + sym * (Mbar @ CW))
         + scheme.tau * h2 * (P + sym * (P @ CW)))
    inv = np.linalg.inv(R @ J @ Z)

    def apply(x):
        r = grid.rfft(x.reshape((S - 1,) + grid.shape))
        out = np.einsum("...ij,j...->i...", inv, r)
        return grid.irfft(out).ravel()
    return apply


def _softmax_tangent(u, ds):
    """Derivative of softmax at logits with value u, applied to ds: u * (ds - sum_j u_j ds_j)."""
    return u * (ds - (u * ds).sum(axis=0, keepdims=True))


def _newton_step(params, scheme, u_prev: State, op, stats: StepStats):
    # Unknowns are sum-free logits s with u = softmax(s), so every iterate is
    # strictly positive and sums to one, and ln u = s - logsumexp(s) is linear
    # in s.  Plain Newton first; once a full step fails to lower the residual
    # the iteration switches to pseudo-transient continuation, where the
    # Newton matrix carries an extra mass term W ds / delta and delta grows as
    # the residual falls.  The solution F = 0 is the same either way.
    grid = u_prev.grid
    S = u_prev.species
    shape = (S - 1,) + grid.shape
    size = int(np.prod(shape))
    tau = scheme.tau
    C = params.C

    def mu_from(s, u):
        return _species_mean_free(s + np.einsum("ik,k...->i...", C, op.apply(u)))

    s = _species_mean_free(np.log(u_prev.u))
    u = softmax(s, axis=0)
    mu = mu_from(s, u)
    F = _residual(params, scheme, u, u_prev.u, mu, grid)
    F0 = np.linalg.norm(F)
    if F0 == 0:
        stats.outer_iterations = 1
        stats.outer_residual = 0.0
        return u, mu
    Fn = F0
    delta = np.inf
    for it in range(1, scheme.outer_max + 1):
        inv_dt = 1.0 / tau + 1.0 / delta
        grad_mu = grid.gradient(mu)
        apply_A = s1_operator(params, scheme, u, grid)

        def jac(x, u=u, grad_mu=grad_mu, apply_A=apply_A, inv_dt=inv_dt):
            ds = _lift(x.reshape(shape))
            v = _softmax_tangent(u, ds)
            dmu = _species_mean_free(ds + np.einsum("ik,k...->i...", C, op.apply(v)))
            dflux = apply_mobility(params.L, u, grad_mu, du=v)
            out = v * inv_dt + apply_A(dmu) - grid.divergence(dflux)
            return out[1:].ravel()

        J = LinearOperator((size, size), matvec=jac, dtype=float)
        Pc = LinearOperator((size, size), matvec=_frozen_preconditioner(params, scheme, u, op, inv_dt),
                            dtype=float)
        eta = min(1e-2, max(Fn / F0, 1e-3) * 1e-2)
        history = []
        z, info = gmres(J, -F[1:].ravel(), rtol=eta, atol=0.0, restart=scheme.gmres_restart,
                        maxiter=max(1, scheme.cg_max // scheme.gmres_restart), M=Pc,
                        callback=history.append, callback_type="pr_norm")
        stats.linear_iterations += len(history)
        stats.linear_residual = float(history[-1]) if history else 0.0
        ds = _lift(z.reshape(shape))

        if np.isinf(delta):
            s_try = s + ds
            u_try = softmax(s_try, axis=0)
            mu_try = mu_from(s_try, u_try)
            F_try = _residual(params, scheme, u_try, u_prev.u, mu_try, grid)
            Fn_try = np.linalg.norm(F_try)
            stats.outer_iterations = it
            # at round-off level the residual may stall while the step is already tiny
            if not Fn_try < Fn and np.linalg.norm(u_try - u) > scheme.outer_tol * np.linalg.norm(u):
                delta = tau  # reject the step and continue with continuation
                continue
        else:
            # full steps unless the residual blows up
            step = 1.0
            for _ in range(30):
                s_try = s + step * ds
                u_try = softmax(s_try, axis=0)
                mu_try = mu_from(s_try, u_try)
                F_try = _residual(params, scheme, u_try, u_prev.u, mu_try, grid)
                Fn_try = np.linalg.norm(F_try)
                if Fn_try <= 2.0 * Fn:
                    break
                step *= 0.5
            if step < 1.0:
                delta = max(delta / 4, 1e-6 * tau)
            else:
                delta *= Fn / max(Fn_try, 1e-300)
                if delta >= 1e6 * tau:
                    delta = np.inf
        change = np.linalg.norm(u_try - u) / np.linalg.norm(u)
        s, u, mu, F, Fn = s_try, u_try, mu_try, F_try, Fn_try
        stats.outer_iterations = it
        stats.outer_residual = float(change)
        if change <= scheme.outer_tol and np.isinf(delta):
            return u, mu
    raise SolverError(f"Newton iteration did not converge in {scheme.outer_max} iterations "
                      f"(last relative change {stats.outer_residual:.3g}, residual ratio {Fn / F0:.3g})")


def _picard_step(params, scheme, u_prev: State, op, stats: StepStats):
    u = np.array(u_prev.u)
    theta = scheme.outer_damping
    for it in range(1, scheme.outer_max + 1):
        s1 = step_S1(params, scheme, u_prev.replace(u=u), u_prev)
        s2 = step_S2(params, scheme, s1.mu, op, w0=u)
        stats.linear_iterations += s1.iterations
        stats.s2_iterations += s2.iterations
        stats.s2_residual = s2.spread
        u_new = (1 - theta) * u + theta * s2.u
        change = float(np.linalg.norm(u_new - u) / np.linalg.norm(u))
        u = u_new
        stats.outer_iterations = it
        stats.outer_residual = change
        if change <= scheme.outer_tol:
            return u, s1.mu
        if not np.isfinite(change):
            break
    raise SolverError(f"Picard iteration did not converge in {scheme.outer_max} iterations "
                      f"(last relative change {stats.outer_residual:.3g})")


def implicit_step(params: ModelParams, scheme: SchemeParams, u_prev: State, op) -> StepResult:
    """Advance ``u_prev`` by one implicit step of length ``scheme.tau``."""
    t0 = _time.perf_counter()
    stats = StepStats()
    solve = _newton_step if scheme.method == "newton" else _picard_step
    u, mu = solve(params, scheme, u_prev, op, stats)
    if u.min() <= 0:
        raise SolverError(f"step produced a non-positive fraction {u.min():.3g}")
    stats.s2_residual = _multiplier_spread(params, mu, u, op)
    stats.seconds = _time.perf_counter() - t0
    state = State(u_prev.grid, u, u_prev.time + scheme.tau)
    return StepResult(state, mu, stats, float(u.min()), scheme.tau)


# explicit oracle --------------------------------------------------------------

def explicit_oracle_step(params: ModelParams, state: State, op, tau_small: float) -> State:
    """Forward Euler u + tau_small * rhs(u), without renormalization."""
    return State(state.grid, state.u + tau_small * rhs(params, state, op), state.time + tau_small)


def explicit_stable_step(params: ModelParams, state: State, op, safety: float = 1.0) -> float:
    """A forward-Euler step below the linear stability limit at ``state``.

    Bounds the largest decay rate by |k|^2 (diffusion part + largest mobility
    eigenvalue * largest eigenvalue of C * interaction symbol) over all
    resolved wavenumbers.
    """
    u = state.u
    Lz = params.off_diagonal_L
    diffusion = float(np.max(Lz.sum(axis=1)))
    M = mobility_field(params.L, u)
    idx = np.arange(u.shape[0])
    m_max = 2.0 * float(M[idx, idx].max())
    c_max = float(np.linalg.eigvalsh(params.C)[-1])
    rate = np.max(state.grid.k2 * (diffusion + m_max * c_max * op.symbol))
    return safety / rate


def explicit_integrate(params: ModelParams, state: State, op, duration: float, tau_small: float | None = None) -> State:
    """Forward Euler micro-steps covering ``duration`` exactly."""
    if tau_small is None:
        tau_small = explicit_stable_step(params, state, op)
    steps = max(1, int(np.ceil(duration / tau_small)))
    dt = duration / steps
    for _ in range(steps):
        state = explicit_oracle_step(params, state, op, dt)
    return state


# time loop ------------------------------------------------------------------

def run(params: ModelParams, scheme: SchemeParams, initial: State, t_final: float, op,
        callbacks: Iterable[Callable] = (), max_steps: int | None = None):
    """Iterate implicit steps until ``t_final``.

    Each accepted step is passed as ``callback(step_index, result, previous_state)``.
    A failed step is retried once with half the step size; the step size
    then returns to ``scheme.tau``.  A retried step covers only tau/2, so
    the run simply takes more steps.  Returns the final state and the list of
    step results.
    """
    initial.validate()
    state = initial
    results = []
    callbacks = list(callbacks)
    # steps stop once the remaining time is below a tiny fraction of tau
    guard = 1e-9 * scheme.tau
    while t_final - state.time > guard:
        if max_steps is not None and len(results) >= max_steps:
            break
        # the last step is shortened so the run ends on t_final
        step = scheme if t_final - state.time >= scheme.tau else replace(scheme, tau=t_final - state.time)
        try:
            res = implicit_step(params, step, state, op)
        except SolverError as exc:
            if not scheme.retry:
                raise
            log.warning("step at t=%g failed (%s); retrying with tau/2", state.time, exc)
            half = replace(step, tau=step.tau / 2)
            res = implicit_step(params, half, state, op)
            res.stats.retried = True
        res.state.validate()
        results.append(res)
        for cb in callbacks:
            cb(len(results), res, state)
        state = res.state
    return state, results

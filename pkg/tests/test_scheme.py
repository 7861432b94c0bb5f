import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nlch import oracles
from nlch.diagnostics import check_energy_monotone
from nlch.grid import TorusGrid
from nlch.initial import make_initial
from nlch.model import ModelParams, State, energy, interaction_operator, rhs
from nlch.scheme import (SchemeParams, SolverError, explicit_integrate, explicit_stable_step,
                         implicit_step, run, s1_operator, s2_objective, step_S1, step_S2)


@pytest.fixture
def small():
    g = TorusGrid(1, 8)
    p = ModelParams.default(2, eps=0.45)
    return g, p, interaction_operator(p, g, min_annulus_cells=1.5)


def test_scheme_params_validation():
    with pytest.raises(ValueError):
        SchemeParams(tau=0)
    with pytest.raises(ValueError):
        SchemeParams(tau=1e-3, method="rk4")
    with pytest.raises(ValueError):
        SchemeParams(tau=1e-3, s2_damping=0)


@pytest.mark.parametrize("tau", [1e-3, 1e-1])
def test_S1_matches_dense_solve(tau, rng):
    g = TorusGrid(1, 16)
    p = ModelParams.default(3, eps=0.3)
    ut = oracles.random_simplex_field(rng, 3, g.shape, alpha=5.0)
    up = oracles.random_simplex_field(rng, 3, g.shape, alpha=5.0)
    res = step_S1(p, SchemeParams(tau=tau), State(g, ut), State(g, up))
    ref = oracles.dense_S1(p, tau, ut, up)
    assert np.max(np.abs(res.mu - ref)) <= 1e-8 * np.max(np.abs(ref))
    assert res.iterations == len(res.residuals) > 0


def test_S1_operator_is_symmetric(rng):
    g = TorusGrid(1, 32)
    p = ModelParams.default(2, eps=0.2)
    ut = oracles.random_simplex_field(rng, 2, g.shape, alpha=5.0)
    A = s1_operator(p, SchemeParams(tau=1e-2), ut, g)
    x, y = rng.standard_normal((2, 2) + g.shape)
    assert np.sum(A(x) * y) == pytest.approx(np.sum(x * A(y)), rel=1e-10)


@pytest.mark.parametrize("method", ["newton", "softmax"])
def test_S2_matches_projected_gradient(method, small, rng):
    g, p, op = small
    mu = 2 * rng.standard_normal((2,) + g.shape)
    res = step_S2(p, SchemeParams(tau=1e-3, s2_method=method, s2_max=20000), mu, op)
    ref, fref, _ = oracles.projected_gradient_S2(p, mu, op)
    assert np.max(np.abs(res.u - ref)) <= 1e-6
    assert s2_objective(p, mu, res.u, op) <= fref + 1e-12
    assert res.floor > 0 and np.allclose(res.u.sum(axis=0), 1, atol=1e-14)


def test_S2_without_interaction_is_softmax(small, rng):
    g, _, op = small
    p = ModelParams(L=np.ones((3, 3)), C=1e-14 * np.eye(3), eps=0.45)
    mu = rng.standard_normal((3,) + g.shape)
    res = step_S2(p, SchemeParams(tau=1e-3), mu, op)
    e = np.exp(mu)
    assert np.allclose(res.u, e / e.sum(axis=0), atol=1e-10)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_S2_beats_random_simplex_fields(seed):
    r = np.random.default_rng(seed)
    g = TorusGrid(1, 8)
    p = ModelParams.default(2, eps=0.45)
    op = interaction_operator(p, g, min_annulus_cells=1.5)
    mu = r.standard_normal((2,) + g.shape)
    w = step_S2(p, SchemeParams(tau=1e-3), mu, op).u
    best = s2_objective(p, mu, w, op)
    for _ in range(20):
        assert s2_objective(p, mu, oracles.random_simplex_field(r, 2, g.shape), op) > best


def test_equal_fractions_are_a_fixed_point():
    g = TorusGrid(2, 32)
    p = ModelParams.default(3, eps=0.2)
    s = make_initial("uniform", g, 3)
    res = implicit_step(p, SchemeParams(tau=1e-3), s, interaction_operator(p, g))
    assert np.max(np.abs(res.state.u - s.u)) <= 1e-14


def test_unequal_constant_state_drifts_by_regularizer_leak():
    # constant u is steady for the PDE; the scheme's tau * H2 term moves it by O(tau^2 |mu|)
    g = TorusGrid(1, 32)
    p = ModelParams.default(3, eps=0.2)
    s = make_initial("uniform", g, 3, fractions=(0.2, 0.3, 0.5))
    op = interaction_operator(p, g)
    drifts = []
    for tau in (1e-3, 5e-4):
        res = implicit_step(p, SchemeParams(tau=tau), s, op)
        drift = np.abs(res.state.masses() - s.masses())
        assert np.all(drift <= tau ** 2 * g.integrate(np.abs(res.mu)) + 1e-9)
        assert np.ptp(res.state.u, axis=1).max() <= 1e-14
        drifts.append(drift.max())
    assert drifts[0] / drifts[1] == pytest.approx(4.0, rel=0.05)


def test_step_keeps_invariants_and_lowers_energy():
    g = TorusGrid(1, 64)
    p = ModelParams.default(3, eps=0.2)
    op = interaction_operator(p, g)
    s = make_initial("perturbed_uniform", g, 3, amplitude=0.4, seed=8)
    res = implicit_step(p, SchemeParams(tau=1e-3), s, op)
    u = res.state.u
    assert res.positivity_floor > 0 and u.max() < 1
    assert np.max(np.abs(u.sum(axis=0) - 1)) <= 1e-12
    assert energy(p, res.state, op) < energy(p, s, op)
    assert res.state.time == pytest.approx(1e-3)


def test_picard_agrees_with_newton_at_large_tau():
    g = TorusGrid(1, 64)
    p = ModelParams.default(2, eps=0.2)
    op = interaction_operator(p, g)
    s = make_initial("perturbed_uniform", g, 2, amplitude=0.3, seed=2, fractions=(0.3, 0.7))
    a = implicit_step(p, SchemeParams(tau=1.0), s, op)
    b = implicit_step(p, SchemeParams(tau=1.0, method="picard", outer_max=100), s, op)
    assert np.max(np.abs(a.state.u - b.state.u)) <= 1e-8


def test_explicit_reference_converges_to_implicit_step():
    g = TorusGrid(1, 64)
    p = ModelParams.default(2, eps=0.2)
    op = interaction_operator(p, g)
    s = make_initial("perturbed_uniform", g, 2, amplitude=0.2, seed=1, max_mode=1)
    dt = explicit_stable_step(p, s, op)
    errs = []
    for tau in (2e-4, 1e-4):
        imp = implicit_step(p, SchemeParams(tau=tau), s, op).state.u
        exp = explicit_integrate(p, s, op, tau, dt).u
        errs.append(np.sqrt(g.integrate(((imp - exp) ** 2).sum(axis=0))))
    assert errs[1] < errs[0]


def test_explicit_step_is_stable():
    g = TorusGrid(1, 64)
    p = ModelParams.default(2, eps=0.2)
    op = interaction_operator(p, g)
    s = make_initial("perturbed_uniform", g, 2, amplitude=0.2, seed=1)
    out = explicit_integrate(p, s, op, 200 * explicit_stable_step(p, s, op))
    assert np.all(np.isfinite(out.u)) and out.u.min() > 0
    assert np.allclose(g.integrate(out.u), g.integrate(s.u), atol=1e-12)


def test_run_ends_on_final_time_and_calls_back():
    g = TorusGrid(1, 32)
    p = ModelParams.default(2, eps=0.2)
    op = interaction_operator(p, g)
    s = make_initial("perturbed_uniform", g, 2, seed=4)
    seen = []
    final, results = run(p, SchemeParams(tau=1e-3), s, 2.5e-3, op,
                         callbacks=[lambda k, r, prev: seen.append((k, prev.time))])
    assert final.time == pytest.approx(2.5e-3, abs=1e-15)
    assert [k for k, _ in seen] == [1, 2, 3]
    assert results[-1].tau == pytest.approx(5e-4)
    energies = [energy(p, s, op)] + [energy(p, r.state, op) for r in results]
    assert check_energy_monotone(energies, 1e-9).passed


def test_run_retries_failed_step_with_half_tau(monkeypatch):
    from nlch import scheme as mod
    g = TorusGrid(1, 32)
    p = ModelParams.default(2, eps=0.2)
    op = interaction_operator(p, g)
    s = make_initial("perturbed_uniform", g, 2, seed=4)
    real = mod.implicit_step
    calls = []

    def flaky(params, sch, prev, op_):
        calls.append(sch.tau)
        if len(calls) == 1:
            raise SolverError("forced")
        return real(params, sch, prev, op_)

    monkeypatch.setattr(mod, "implicit_step", flaky)
    _, results = run(p, SchemeParams(tau=1e-3), s, 1.5e-3, op)
    assert calls[:2] == [1e-3, 5e-4]
    assert results[0].stats.retried and results[0].tau == 5e-4
    with pytest.raises(SolverError):
        calls.clear()
        run(p, SchemeParams(tau=1e-3, retry=False), s, 1e-3, op)


def test_nonpositive_initial_state_is_rejected():
    g = TorusGrid(1, 32)
    p = ModelParams.default(2, eps=0.2)
    u = np.stack([np.full(32, 1.2), np.full(32, -0.2)])
    with pytest.raises(ValueError):
        run(p, SchemeParams(tau=1e-3), State(g, u), 1e-3, interaction_operator(p, g))


def test_S1_uniform_gives_zero_potential():
    g = TorusGrid(1, 32)
    s = make_initial("uniform", g, 2)
    res = step_S1(ModelParams.default(2, eps=0.2), SchemeParams(tau=1e-3), s, s)
    assert np.all(res.mu == 0)


def test_S2_softmax_closed_form(small):
    g, _, op = small
    p = ModelParams(L=np.ones((2, 2)), C=1e-14 * np.eye(2), eps=0.45)
    mu = np.zeros((2,) + g.shape)
    mu[0] = np.log(3.0)
    res = step_S2(p, SchemeParams(tau=1e-3, s2_method="softmax"), mu, op)
    assert np.allclose(res.u[0], 0.75, atol=1e-12)
    assert res.spread <= 10 * 1e-11


def test_explicit_step_keeps_simplex_and_uniform():
    g = TorusGrid(1, 64)
    p = ModelParams.default(3, eps=0.2)
    op = interaction_operator(p, g)
    from nlch.scheme import explicit_oracle_step
    uni = make_initial("uniform", g, 3)
    assert np.array_equal(explicit_oracle_step(p, uni, op, 1e-6).u, uni.u)
    s = make_initial("perturbed_uniform", g, 3, amplitude=0.3, seed=2)
    out = explicit_oracle_step(p, s, op, explicit_stable_step(p, s, op))
    assert out.simplex_deviation <= 1e-12


def test_run_with_zero_final_time():
    g = TorusGrid(1, 32)
    p = ModelParams.default(2, eps=0.2)
    s = make_initial("perturbed_uniform", g, 2, seed=4)
    final, results = run(p, SchemeParams(tau=1e-3), s, 0.0, interaction_operator(p, g))
    assert final is s and results == []

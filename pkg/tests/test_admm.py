import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import minimize

from duet.admm import (
    AdmmConfig,
    AdmmState,
    EdgeIncidence,
    adapt_rho,
    augmented_lagrangian,
    eta_bound,
    incidence_adjoint,
    incidence_apply,
    init_state,
    majorizer,
    omega_update,
    residuals,
    solve_theta,
    theta_block_update,
    write_trace,
)
from duet.poisson import SpotLosses
from duet.weights import FusionGraph
from oracles import dense_incidence


def random_graph(rng, n, p=0.5):
    edges = {(a, a + 1) for a in range(n - 1)}
    edges |= {(a, b) for a in range(n) for b in range(a + 2, n) if rng.random() < p}
    edges = sorted(edges)
    return FusionGraph(np.array([e[0] for e in edges], dtype=np.int64),
                       np.array([e[1] for e in edges], dtype=np.int64),
                       rng.uniform(0.1, 1, size=len(edges)), n)


def random_losses(rng, n, K=3, G=8):
    B = rng.uniform(0.2, 5, size=(G, K))
    theta = rng.dirichlet(np.ones(K), size=n)
    s = rng.uniform(2, 10, size=n)
    X = rng.poisson(s[:, None] * theta @ B.T)
    X[:, 0] += 1
    return SpotLosses(X, B, s)


def random_state(rng, n, E, K=3):
    return AdmmState(rng.dirichlet(np.ones(K), size=n), rng.normal(size=(E, K)) * 0.3,
                     rng.normal(size=(E, K)) * 0.3, float(rng.uniform(0.1, 5)), 0.0)


def test_incidence_examples():
    inc = EdgeIncidence([0], [1], 2)
    np.testing.assert_array_equal(incidence_apply(inc, np.array([[0.5, 0.5], [0.5, 0.5]])), [[0, 0]])
    np.testing.assert_array_equal(incidence_apply(inc, np.eye(2)), [[1, -1]])


@given(st.integers(0, 2**31 - 1), st.integers(2, 6))
def test_incidence_matches_dense_and_adjoint(seed, n):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, n)
    edges = list(zip(g.i.tolist(), g.j.tolist()))[:8]
    inc = EdgeIncidence([e[0] for e in edges], [e[1] for e in edges], n)
    A = dense_incidence(edges, n)
    T = rng.normal(size=(n, 3))
    M = rng.normal(size=(len(edges), 3))
    np.testing.assert_allclose(incidence_apply(inc, T), A @ T, atol=1e-12)
    np.testing.assert_allclose(incidence_adjoint(inc, M), A.T @ M, atol=1e-12)
    assert abs(np.sum(incidence_apply(inc, T) * M) - np.sum(T * incidence_adjoint(inc, M))) <= 1e-12


@pytest.mark.parametrize("i, j, n, top", [([0, 1], [1, 2], 3, 3.0), ([0], [1], 2, 2.0)])
def test_eta_examples(i, j, n, top):
    A = dense_incidence(list(zip(i, j)), n)
    assert np.linalg.eigvalsh(A.T @ A).max() == pytest.approx(top)
    assert eta_bound(EdgeIncidence(i, j, n)) == pytest.approx(1.01 * top, rel=1e-5)


@given(st.integers(0, 2**31 - 1), st.integers(2, 9))
def test_eta_bound_against_dense_eigensolve(seed, n):
    g = random_graph(np.random.default_rng(seed), n)
    inc = EdgeIncidence.from_graph(g)
    A = dense_incidence(list(zip(g.i, g.j)), n)
    top = np.linalg.eigvalsh(A.T @ A).max()
    eta = eta_bound(inc)
    # exact eigenvalue times the 1% safety margin
    assert top <= eta <= 1.01 * top * (1 + 1e-5)
    assert eta <= 1.01 * 2 * g.degrees().max() + 1e-12


@given(st.integers(0, 2**31 - 1), st.integers(1, 5))
def test_majorizer_certificate(seed, n):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, max(n, 2))
    n = g.n
    inc = EdgeIncidence.from_graph(g)
    losses = random_losses(rng, n)
    state = random_state(rng, n, g.n_edges)
    state.eta = eta_bound(inc)
    lam = float(rng.uniform(0, 2))
    anchor = state.Theta
    m0 = majorizer(anchor, state, losses, lam, g.w, inc)
    l0 = augmented_lagrangian(anchor, state, losses, lam, g.w, inc)
    assert abs(m0 - l0) <= 1e-10 * max(1.0, abs(l0))
    for T in rng.dirichlet(np.ones(3), size=(20, n)):
        gap = majorizer(T, state, losses, lam, g.w, inc) - augmented_lagrangian(T, state, losses, lam, g.w, inc)
        assert gap >= -1e-10 * max(1.0, abs(l0))
    new = theta_block_update(state, losses, inc)
    assert np.allclose(new.sum(axis=1), 1) and new.min() >= 0
    # the block update minimizes the surrogate, so it is no worse than the anchor
    assert majorizer(new, state, losses, lam, g.w, inc) <= m0 + 1e-10


def test_block_update_with_huge_prox_stays_put():
    rng = np.random.default_rng(0)
    g = random_graph(rng, 4)
    inc = EdgeIncidence.from_graph(g)
    losses = random_losses(rng, 4)
    state = init_state(rng.dirichlet(np.ones(3), size=4), inc, 1e9)
    np.testing.assert_allclose(theta_block_update(state, losses, inc), state.Theta, atol=1e-6)


def test_omega_examples():
    inc = EdgeIncidence([0], [1], 2)
    T = np.array([[0.6, 0.4], [0.2, 0.8]])
    G = np.array([[0.1, -0.3]])
    np.testing.assert_allclose(omega_update(T, G, 2.0, 0.0, [1.0], inc), [[0.4 - 0.05, -0.4 + 0.15]])
    same = np.array([[0.5, 0.5], [0.5, 0.5]])
    assert np.all(omega_update(same, np.zeros((1, 2)), 1.0, 1.0, [1.0], inc) == 0.0)
    # ||d - G/rho|| = ||[0.35, -0.25]|| ~ 0.43 <= lam*gamma/rho = 0.5
    assert np.all(omega_update(T, G, 2.0, 1.0, [1.0], inc) == 0.0)


def _dense_residuals(prev, state, A, cfg):
    AT = A @ state.Theta
    primal = np.linalg.norm(AT - state.Omega)
    dT = state.Theta - prev.Theta
    lin = state.eta * dT - A.T @ (A @ dT)
    dual = state.rho * np.linalg.norm(A.T @ (state.Omega - prev.Omega) + lin)
    E, K = state.Omega.shape
    n = state.Theta.shape[0]
    eps_pri = np.sqrt(E * K) * cfg.eps_abs + cfg.eps_rel * max(np.linalg.norm(AT), np.linalg.norm(state.Omega))
    eps_dual = np.sqrt(n * K) * cfg.eps_abs + cfg.eps_rel * np.linalg.norm(A.T @ state.Gamma)
    return primal, dual, eps_pri, eps_dual


@given(st.integers(0, 2**31 - 1), st.integers(2, 6))
def test_residuals_match_dense(seed, n):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, n)
    inc = EdgeIncidence.from_graph(g)
    A = dense_incidence(list(zip(g.i, g.j)), n)
    prev = random_state(rng, n, g.n_edges)
    cur = random_state(rng, n, g.n_edges)
    prev.eta = cur.eta = eta_bound(inc)
    cfg = AdmmConfig()
    np.testing.assert_allclose(residuals(prev, cur, inc, cfg), _dense_residuals(prev, cur, A, cfg),
                               rtol=1e-12, atol=1e-12)


def test_residuals_zero_at_fixed_point():
    rng = np.random.default_rng(1)
    g = random_graph(rng, 4)
    inc = EdgeIncidence.from_graph(g)
    st_ = init_state(rng.dirichlet(np.ones(3), size=4), inc, 1.0)
    primal, dual, _, _ = residuals(st_, st_.copy(), inc)
    assert primal == 0.0 and dual == 0.0


def test_adapt_rho():
    assert adapt_rho(1.0, 3.0, 3.0) == 1.0
    assert adapt_rho(1.0, 20.0, 1.0, 2.0, 10.0) == 2.0
    assert adapt_rho(1.0, 1.0, 20.0, 2.0, 10.0) == 0.5
    assert adapt_rho(1e6, 100.0, 1.0) == 1e6


def _fixed_s_oracle(losses, i):
    K = losses.B.shape[1]
    x, s = losses.X[i], losses.s[i]

    def f(t):
        mu = s * losses.B @ t
        return float(np.sum(mu - x * np.log(np.maximum(mu, 1e-300))))

    r = minimize(f, np.full(K, 1 / K), method="SLSQP", bounds=[(0, 1)] * K,
                 constraints=[{"type": "eq", "fun": lambda t: t.sum() - 1}],
                 options={"ftol": 1e-15, "maxiter": 2000})
    return r.x


def test_lambda_zero_gives_spotwise_at_fixed_s():
    rng = np.random.default_rng(3)
    g = random_graph(rng, 6)
    losses = random_losses(rng, 6, G=15)
    res = solve_theta(np.full((6, 3), 1 / 3), losses.s, 0.0, g, losses)
    assert res.converged
    for i in range(6):
        np.testing.assert_allclose(res.Theta[i], _fixed_s_oracle(losses, i), atol=1e-4)


def test_huge_lambda_fuses_everything():
    rng = np.random.default_rng(4)
    g = random_graph(rng, 6)
    losses = random_losses(rng, 6)
    lam = 1e6 * g.w.mean()
    res = solve_theta(np.full((6, 3), 1 / 3), losses.s, lam, g, losses)
    assert np.max(np.abs(res.Theta - res.Theta[0])) <= 1e-4


def test_warm_start_at_solution_is_immediate():
    rng = np.random.default_rng(5)
    g = random_graph(rng, 5)
    losses = random_losses(rng, 5)
    first = solve_theta(np.full((5, 3), 1 / 3), losses.s, 0.05, g, losses)
    inc = EdgeIncidence.from_graph(g)
    warm = AdmmState(first.Theta, first.Omega, first.Gamma, first.rho, first.eta)
    again = solve_theta(first.Theta, losses.s, 0.05, g, losses, state=warm, inc=inc)
    assert again.converged and again.iterations <= 2


def test_iterates_feasible_and_trace(tmp_path):
    rng = np.random.default_rng(6)
    g = random_graph(rng, 5)
    losses = random_losses(rng, 5)
    trace = []
    res = solve_theta(np.full((5, 3), 1 / 3), losses.s, 0.1, g, losses, trace=trace)
    assert len(trace) == res.iterations
    assert np.all(res.Theta >= 0) and np.allclose(res.Theta.sum(axis=1), 1)
    write_trace(trace, tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "iter,objective,primal,dual,rho,n_fused_edges"
    assert len(lines) == len(trace) + 1


def test_max_iters_reported_not_raised():
    rng = np.random.default_rng(7)
    g = random_graph(rng, 5)
    losses = random_losses(rng, 5)
    res = solve_theta(np.full((5, 3), 1 / 3), losses.s, 0.1, g, losses, AdmmConfig(max_iters=1))
    assert not res.converged and res.iterations == 1


def test_config_validation():
    with pytest.raises(ValueError):
        AdmmConfig(tau=1.0)
    with pytest.raises(ValueError):
        AdmmConfig(max_iters=0)

import numpy as np
import pytest
from scipy.optimize import minimize

from duet.poisson import SpotLosses, spotwise_deconvolve
from duet.solver import (
    LambdaGrid,
    Problem,
    SolverConfig,
    find_lambda_max,
    fit,
    fit_approx,
    fit_path,
    fusion_bound,
    pooled_fit,
)
from duet.weights import WeightConfig, build_fusion_graph


@pytest.fixture(scope="module")
def prob(grid5):
    expr, ref, _, _ = grid5
    return Problem(expr, ref, build_fusion_graph(expr, ref, WeightConfig(k_star=7, k_dstar=6)))


@pytest.fixture(scope="module")
def pilot(prob):
    return spotwise_deconvolve(prob.expr, prob.ref)


def test_lambda_zero_equals_spotwise(prob, pilot):
    res = fit(prob, None, None, 0.0)
    np.testing.assert_allclose(res.theta, pilot[0], atol=1e-4, rtol=0)
    np.testing.assert_allclose(res.s, pilot[1], rtol=1e-4)
    assert res.converged


def test_lambda_zero_is_fully_split(prob):
    res = fit(prob, None, None, 0.0, SolverConfig(fuse_tol=0.0))
    assert res.n_clusters == prob.n


def test_fixed_point_returns_immediately(prob):
    first = fit(prob, None, None, 0.01)
    again = fit(prob, None, None, 0.01, warm=first)
    assert again.converged and again.iterations == 1


def _pooled_oracle(prob):
    X, B = prob.losses.X, prob.losses.B
    K = B.shape[1]

    def total(t):
        rates = B @ t
        s = X.sum(axis=1) / rates.sum()
        mu = s[:, None] * rates[None, :]
        return float(np.sum(mu - X * np.log(mu)))

    r = minimize(total, np.full(K, 1 / K), method="SLSQP", bounds=[(0, 1)] * K,
                 constraints=[{"type": "eq", "fun": lambda t: t.sum() - 1}],
                 options={"ftol": 1e-15, "maxiter": 2000})
    return r.x


def test_lambda_max_fuses_to_pooled_mle(prob, pilot):
    lam, res = find_lambda_max(prob, None, None, pilot=pilot)
    assert res.n_clusters == 1 and lam >= fusion_bound(prob, None, None) * 0.999
    np.testing.assert_allclose(res.clusters.centroids[0], _pooled_oracle(prob), atol=1e-3)
    theta, _ = pooled_fit(prob.expr, prob.ref)
    np.testing.assert_allclose(theta[0], _pooled_oracle(prob), atol=1e-4)


def test_monotone_outer_trace(prob):
    for lam in (0.003, 0.03, 0.3):
        res = fit(prob, None, None, lam)
        assert np.all(np.diff(res.objective_trace) <= 1e-8)


def test_approx_at_zero_is_spotwise(prob, pilot):
    res = fit_approx(prob, None, None, 0.0)
    np.testing.assert_allclose(res.theta, pilot[0], atol=1e-4)
    np.testing.assert_array_equal(res.s, SpotLosses.from_data(prob.expr, prob.ref).size_factors(pilot[0]))


def test_full_fit_no_worse_than_approx(prob, pilot):
    for lam in (0.01, 0.1):
        a = fit_approx(prob, None, None, lam, pilot=pilot)
        f = fit(prob, None, None, lam, pilot=pilot)
        assert f.objective <= a.objective + 1e-6


def test_approx_is_deterministic(prob):
    a = fit_approx(prob, None, None, 0.05)
    b = fit_approx(prob, None, None, 0.05)
    assert a.theta.tobytes() == b.theta.tobytes()


def test_path_endpoints(prob, pilot):
    lam, start = find_lambda_max(prob, None, None, pilot=pilot)
    grid = LambdaGrid.log_spaced(lam, 5, 4)
    path = fit_path(prob, None, None, grid, warm=start)
    assert [r.lam for r in path] == list(grid.values)
    assert path[0].n_clusters == 1
    assert path[-1].n_clusters > 1


def test_singleton_path_equals_fit(prob):
    grid = LambdaGrid((0.02,))
    assert fit_path(prob, None, None, grid)[0].theta.tobytes() == \
        fit(prob, None, None, 0.02).theta.tobytes()


def test_threads_do_not_change_results(prob):
    a = fit(prob, None, None, 0.05, threads=1)
    b = fit(prob, None, None, 0.05, threads=3)
    assert a.theta.tobytes() == b.theta.tobytes() and a.s.tobytes() == b.s.tobytes()


def test_permutation_equivariance(grid5):
    expr, ref, _, _ = grid5
    graph = build_fusion_graph(expr, ref)
    perm = np.random.default_rng(1).permutation(expr.n_spots)
    a = fit(expr, ref, graph, 0.05)
    b = fit(expr.subset(spots=perm), ref, graph.permuted(perm), 0.05)
    np.testing.assert_allclose(b.theta, a.theta[perm], atol=1e-5)
    same = a.clusters.labels[perm]
    assert all((b.clusters.labels[x] == b.clusters.labels[y]) == (same[x] == same[y])
               for x in range(len(perm)) for y in range(len(perm)))


def test_grid_and_config_validation():
    with pytest.raises(ValueError):
        LambdaGrid((1.0, 2.0))
    with pytest.raises(ValueError):
        LambdaGrid(())
    with pytest.raises(ValueError):
        SolverConfig(outer_tol=0)
    g = LambdaGrid.log_spaced(100.0, 5, 4, include_zero=True)
    assert g.n_points == 6 and g.values[0] == pytest.approx(100) and g.values[-1] == 0.0
    assert SolverConfig().resolved_fuse_tol(4) == pytest.approx(2e-3)


def test_rejects_bad_inputs(grid5, prob):
    with pytest.raises(ValueError):
        fit(prob, None, None, -1.0)
    expr, ref, _, _ = grid5
    with pytest.raises(ValueError):
        Problem(expr.subset(spots=np.arange(5)), ref, prob.graph)

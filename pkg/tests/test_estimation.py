import numpy as np
import pytest

from empref.errors import ConfigError
from empref.estimation import (
    SolverConfig,
    _mirror_ascent,
    _Objective,
    em_npmle,
    fit_batch,
    objective_and_gradient,
    solve_mple,
)
from empref.grid import (
    GridDensity,
    make_uniform_grid,
    normalize,
    tv_distance,
    uniform_density,
)
from empref.information import PenaltySpec, jeffreys_prior
from empref.models import Dataset, GaussianLocationModel, log_likelihood_matrix, log_marginal_likelihood

KINDS = ["none", "tikhonov", "neg_entropy", "missing_info"]


def _interior(g, rng):
    return normalize(rng.gamma(2.0, size=g.size) + 0.05, g)


class TestObjective:
    @pytest.mark.parametrize("kind", KINDS)
    def test_gradient_matches_finite_differences(self, kind, grid200, gauss03, data100):
        rng = np.random.default_rng(123)
        pen = PenaltySpec(kind)
        for _ in range(20):
            p = _interior(grid200, rng)
            d = rng.standard_normal(200)
            d *= 0.5 * p.values.min() / np.abs(d).max()
            val, grad = objective_and_gradient(gauss03, data100, p, pen, 0.7)
            h = 1e-3
            fp, _ = objective_and_gradient(gauss03, data100, p.values + h * d, pen, 0.7, grid200)
            fm, _ = objective_and_gradient(gauss03, data100, p.values - h * d, pen, 0.7, grid200)
            fd = (fp - fm) / (2 * h)
            assert abs(fd - grad @ d) <= 1e-5 * abs(grad @ d)

    def test_value_decomposes(self, grid200, gauss03, data100, bimodal):
        val, _ = objective_and_gradient(gauss03, data100, bimodal, PenaltySpec("tikhonov"), 2.0)
        ll = log_marginal_likelihood(gauss03, bimodal, data100)
        assert val == pytest.approx(ll - 2.0 * np.sum(bimodal.values**2 * grid200.weights), rel=1e-12)

    def test_missing_info_at_reference(self, grid200, gauss03, data100):
        ref = jeffreys_prior(gauss03, grid200)
        pen = PenaltySpec("missing_info")
        _, g0 = objective_and_gradient(gauss03, data100, ref, pen, 0.0)
        _, g3 = objective_and_gradient(gauss03, data100, ref, pen, 3.0)
        assert np.allclose((g0 - g3) / 3.0, grid200.weights, rtol=1e-9)

    def test_tikhonov_on_uniform(self, grid200, gauss03, data100):
        u = uniform_density(grid200)
        pen = PenaltySpec("tikhonov")
        assert pen.value(u) == pytest.approx(0.25)
        v0, g0 = objective_and_gradient(gauss03, data100, u, pen, 0.0)
        v1, g1 = objective_and_gradient(gauss03, data100, u, pen, 1.0)
        assert v0 - v1 == pytest.approx(0.25)
        assert np.allclose(g0 - g1, 0.5 * grid200.weights, rtol=1e-12)

    def test_shift_invariance_of_gap(self, grid200, gauss03, data100):
        logA = log_likelihood_matrix(gauss03, data100.points, grid200.nodes)
        pen = PenaltySpec("missing_info").resolve(gauss03, grid200)
        m = uniform_density(grid200).masses[None, :]
        a = _Objective(logA, np.ones((1, 100)), grid200, pen, 1.0)
        b = _Objective(logA + 5.0, np.ones((1, 100)), grid200, pen, 1.0)
        _, ga, _ = a.value_and_grad(m)
        _, gb, _ = b.value_and_grad(m)
        assert a.gap(m, ga)[0] == pytest.approx(b.gap(m, gb)[0], rel=1e-9)
        assert a.gap(m, ga)[0] > 0

    @pytest.mark.parametrize("kind", ["none", "neg_entropy", "missing_info"])
    def test_concave_along_segments(self, kind, grid200, gauss03, data100):
        rng = np.random.default_rng(7)
        pen = PenaltySpec(kind)
        for _ in range(20):
            p, q = _interior(grid200, rng), _interior(grid200, rng)
            f = lambda a: objective_and_gradient(
                gauss03, data100, GridDensity(grid200, a * p.values + (1 - a) * q.values), pen, 1.0)[0]
            for a in (0.25, 0.5, 0.75):
                h = 0.2
                assert f(a + h * min(a, 1 - a)) - 2 * f(a) + f(a - h * min(a, 1 - a)) <= 1e-8

    def test_positive_density_required(self, grid200, gauss03, data100):
        v = np.ones(200)
        v[5] = 0
        p = normalize(v, grid200)
        with pytest.raises(ConfigError):
            objective_and_gradient(gauss03, data100, p, PenaltySpec("neg_entropy"), 1.0)


class TestEM:
    def test_single_observation_point_mass(self):
        g = make_uniform_grid(0, 4, 11)
        model = GaussianLocationModel(0.3)
        x = 1.37
        res = em_npmle(model, Dataset([x]), g)
        brute = max(range(11), key=lambda j: (model.log_density(x, g.nodes[j]), -j))
        assert int(np.argmax(res.prior.masses)) == brute
        assert res.prior.masses[brute] > 1 - 1e-6

    def test_vertex_is_fixed_point(self, grid200, gauss03, data100):
        v = np.zeros(200)
        v[37] = 1
        start = normalize(v, grid200)
        res = em_npmle(gauss03, data100, grid200, SolverConfig(max_iters=3), init=start)
        assert np.array_equal(res.prior.values, start.values)
        assert res.converged

    def test_bimodal_data_discrete_and_monotone(self, grid200, gauss03, data100):
        res = em_npmle(gauss03, data100, grid200)
        assert np.all(np.diff(res.objective_trace) >= -1e-10)
        assert np.count_nonzero(res.prior.masses > 1e-3) <= 200
        # EM's trace is the log-likelihood itself
        assert res.objective == pytest.approx(log_marginal_likelihood(gauss03, res.prior, data100))

    def test_gamma_zero_delegates(self, grid200, gauss03, data100):
        a = solve_mple(gauss03, data100, grid200, PenaltySpec("missing_info"), 0.0,
                       SolverConfig(max_iters=50))
        b = em_npmle(gauss03, data100, grid200, SolverConfig(max_iters=50))
        assert a.method == "em"
        assert np.array_equal(a.prior.values, b.prior.values)


class TestSolveMple:
    def test_large_gamma_gives_reference(self, grid200, gauss03, data100):
        res = solve_mple(gauss03, data100, grid200, PenaltySpec("missing_info"), 1e6)
        assert tv_distance(res.prior, jeffreys_prior(gauss03, grid200)) <= 1e-2

    def test_two_node_agrees_with_em(self):
        g = make_uniform_grid(0, 1, 2)
        model = GaussianLocationModel(0.3)
        data = Dataset([0.3])
        em = em_npmle(model, data, g)
        logA = log_likelihood_matrix(model, data.points, g.nodes)
        obj = _Objective(logA, np.ones((1, 1)), g, PenaltySpec("none"), 0.0)
        out = _mirror_ascent(obj, uniform_density(g).masses[None, :], SolverConfig())
        mirror = normalize(out.masses[0] / g.weights, g)
        assert tv_distance(em.prior, mirror) <= 1e-6

    def test_ascent_from_any_start(self, grid200, gauss03, data100):
        pen = PenaltySpec("missing_info")
        ref = jeffreys_prior(gauss03, grid200)
        res = solve_mple(gauss03, data100, grid200, pen, 1.0)
        for start in (uniform_density(grid200), ref):
            f0, _ = objective_and_gradient(gauss03, data100, start, pen, 1.0)
            assert res.objective >= f0
            from_start = solve_mple(gauss03, data100, grid200, pen, 1.0, init=start)
            assert from_start.objective >= f0

    @pytest.mark.parametrize("gamma", [0.1, 1.0, 10.0])
    def test_solution_independent_of_start(self, gamma, grid200, gauss03, data100):
        pen = PenaltySpec("missing_info")
        rng = np.random.default_rng(5)
        ref = jeffreys_prior(gauss03, grid200)
        perturbed = normalize(ref.values * np.exp(0.5 * rng.standard_normal(200)), grid200)
        a = solve_mple(gauss03, data100, grid200, pen, gamma)
        b = solve_mple(gauss03, data100, grid200, pen, gamma, init=perturbed)
        assert a.converged and b.converged
        assert tv_distance(a.prior, b.prior) <= 1e-3

    @pytest.mark.parametrize("kind", ["neg_entropy", "missing_info"])
    def test_strictly_positive(self, kind, grid200, gauss03, data100):
        res = solve_mple(gauss03, data100, grid200, PenaltySpec(kind), 0.1)
        assert res.prior.values.min() > 0

    def test_trace_non_decreasing(self, grid200, gauss03, data100):
        res = solve_mple(gauss03, data100, grid200, PenaltySpec("tikhonov"), 1.0)
        assert np.all(np.diff(res.objective_trace) >= -1e-9 * abs(res.objective))
        assert res.iterations == len(res.objective_trace) - 1
        assert res.loglik - 1.0 * res.penalty_value == pytest.approx(res.objective, rel=1e-12)

    def test_fixed_step_rule(self, grid200, gauss03, data100):
        cfg = SolverConfig(step_rule="fixed", eta0=0.002, max_iters=200)
        res = solve_mple(gauss03, data100, grid200, PenaltySpec("missing_info"), 1.0, cfg)
        f0, _ = objective_and_gradient(gauss03, data100, uniform_density(grid200),
                                       PenaltySpec("missing_info"), 1.0)
        assert res.objective > f0
        assert res.status in ("converged", "max-iters")

    def test_max_iters_reported(self, grid200, gauss03, data100):
        res = solve_mple(gauss03, data100, grid200, PenaltySpec("missing_info"), 0.1,
                         SolverConfig(max_iters=5))
        assert not res.converged and res.status == "max-iters" and res.iterations == 5
        assert res.gap > 0

    def test_rejects_bad_input(self, grid200, gauss03, data100):
        with pytest.raises(ConfigError):
            solve_mple(gauss03, data100, grid200, PenaltySpec("missing_info"), -1.0)
        with pytest.raises(ConfigError):
            solve_mple(gauss03, Dataset([]), grid200, PenaltySpec("missing_info"), 1.0)
        other = uniform_density(make_uniform_grid(0, 1, 5))
        with pytest.raises(ConfigError):
            solve_mple(gauss03, data100, grid200, PenaltySpec("missing_info"), 1.0, init=other)

    def test_write(self, tmp_path, grid200, gauss03, data100):
        res = solve_mple(gauss03, data100, grid200, PenaltySpec("missing_info"), 10.0)
        res.write(tmp_path)
        prior = (tmp_path / "prior.csv").read_text().splitlines()
        trace = (tmp_path / "trace.csv").read_text().splitlines()
        assert prior[0] == "theta,density" and len(prior) == 201
        assert trace[0] == "iter,objective" and len(trace) == res.iterations + 2


class TestBatch:
    def test_rows_match_separate_fits(self, grid200, gauss03, data100):
        pen = PenaltySpec("missing_info")
        weights = np.ones((3, 100))
        weights[1, 4] = 0
        weights[2, :50] = 0
        masses, status = fit_batch(gauss03, data100, grid200, pen, 1.0, weights)
        assert status == ["converged"] * 3
        subsets = [data100, data100.without(4), Dataset(data100.points[50:])]
        for m, d in zip(masses, subsets):
            single = solve_mple(gauss03, d, grid200, pen, 1.0)
            assert tv_distance(normalize(m / grid200.weights, grid200), single.prior) <= 1e-6

    def test_em_batch(self, grid200, gauss03, data100):
        weights = np.ones((2, 100))
        weights[1, 0] = 0
        masses, _ = fit_batch(gauss03, data100, grid200, PenaltySpec("none"), 0.0, weights,
                              SolverConfig(max_iters=40))
        single = em_npmle(gauss03, data100.without(0), grid200, SolverConfig(max_iters=40))
        assert np.allclose(masses[1], single.prior.masses, atol=1e-12)


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(max_iters=0), dict(tol=0), dict(step_rule="newton"),
                                    dict(eta0=-1), dict(shrink=1.0), dict(growth=0.5),
                                    dict(floor=-1)])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            SolverConfig(**kw)

    def test_defaults(self):
        c = SolverConfig()
        assert (c.max_iters, c.tol, c.step_rule, c.eta0, c.floor) == (5000, 1e-9, "backtracking", 1.0, 1e-300)

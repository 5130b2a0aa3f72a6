import math

import numpy as np
import pytest

from empref.errors import ConfigError
from empref.estimation import solve_mple
from empref.grid import make_uniform_grid, pushforward_density, uniform_density
from empref.information import PenaltySpec
from empref.models import (
    Dataset,
    Diffeomorphism,
    GaussianLocationModel,
    bimodal_truth,
    log_marginal_likelihood,
    sample_dataset,
    transform_dataset,
    transform_model,
)
from empref.selection import DEFAULT_GAMMAS, CrossValReport, choose_gamma, loo_cross_validate

MI = PenaltySpec("missing_info")


@pytest.fixture(scope="module")
def small():
    g = make_uniform_grid(0, 4, 60)
    model = GaussianLocationModel(0.3)
    data = sample_dataset(model, bimodal_truth(g), 25, seed=4)
    return g, model, data


def test_default_gammas():
    assert len(DEFAULT_GAMMAS) == 9
    assert DEFAULT_GAMMAS[0] == pytest.approx(1e-2) and DEFAULT_GAMMAS[-1] == pytest.approx(1e2)
    assert np.allclose(np.diff(np.log10(DEFAULT_GAMMAS)), 0.5)


def test_two_identical_points(small):
    g, model, _ = small
    rep = loo_cross_validate(model, Dataset([1.5, 1.5]), g, MI, [0.1, 1.0])
    assert np.array_equal(rep.per_fold[0], rep.per_fold[1])


def test_singleton_gamma(small):
    g, model, data = small
    rep = loo_cross_validate(model, data, g, MI, [3.0])
    assert rep.chosen == 3.0
    assert rep.scores.shape == (1,)


def test_ties_go_to_largest_gamma():
    assert choose_gamma([0.1, 1.0, 10.0], [-5.0, -3.0, -3.0]) == 10.0
    assert choose_gamma([10.0, 1.0, 0.1], [-3.0, -3.0, -5.0]) == 10.0
    assert choose_gamma([0.1, 1.0], [-1.0, -2.0]) == 0.1


def test_matches_sequential_refits(small):
    g, model, data = small
    rep = loo_cross_validate(model, data, g, MI, [0.3, 3.0])
    assert rep.per_fold.shape == (25, 2)
    for k, gam in enumerate([0.3, 3.0]):
        for m in (0, 11, 24):
            fit = solve_mple(model, data.without(m), g, MI, gam)
            direct = log_marginal_likelihood(model, fit.prior, Dataset(data.points[m:m + 1]))
            assert rep.per_fold[m, k] == pytest.approx(direct, abs=1e-7)
    assert np.allclose(rep.scores, rep.per_fold.sum(axis=0))
    assert rep.scores[rep.chosen_index] == rep.scores.max()


def test_unpenalized_candidate(small):
    g, model, data = small
    rep = loo_cross_validate(model, data, g, MI, [0.0, 1.0])
    assert np.all(np.isfinite(rep.per_fold))


def test_validation(small):
    g, model, data = small
    with pytest.raises(ConfigError):
        loo_cross_validate(model, Dataset([1.0]), g, MI, [1.0])
    with pytest.raises(ConfigError):
        loo_cross_validate(model, data, g, MI, [])
    with pytest.raises(ConfigError):
        loo_cross_validate(model, data, g, MI, [1.0, -0.5])


def test_csv(tmp_path):
    rep = CrossValReport(np.array([0.1, 1.0]), np.array([-10.5, -9.25]), 1.0)
    rep.write_csv(tmp_path / "cv.csv")
    lines = (tmp_path / "cv.csv").read_text().splitlines()
    assert lines == ["# chosen=1", "gamma,loo_score", "0.10000000000000001,-10.5", "1,-9.25"]


def test_measurement_map_shifts_all_scores(small):
    g, model, data = small
    gammas = [0.1, 1.0, 10.0]
    psi = Diffeomorphism.affine(2.0, 1.0)
    m2, d2 = transform_dataset(model, psi, data)
    a = loo_cross_validate(model, data, g, MI, gammas)
    b = loo_cross_validate(m2, d2, g, MI, gammas)
    shift = b.scores - a.scores
    assert np.ptp(shift) <= 1e-6
    assert shift[0] == pytest.approx(-25 * math.log(2), abs=1e-6)
    assert a.chosen == b.chosen


def test_reparametrization_keeps_choice(small):
    g, model, data = small
    phi = Diffeomorphism.exp()
    tg = pushforward_density(uniform_density(g), phi).grid
    gammas = [0.1, 1.0, 10.0, 100.0]
    a = loo_cross_validate(model, data, g, MI, gammas)
    b = loo_cross_validate(transform_model(model, phi), data, tg, MI, gammas)
    assert a.chosen == b.chosen


def test_duplicating_data_moves_fit_toward_likelihood(small):
    g, model, data = small
    twice = Dataset(np.concatenate([data.points, data.points]))
    one = solve_mple(model, data, g, MI, 5.0)
    two = solve_mple(model, twice, g, MI, 5.0)
    # log L doubles for any fixed prior, so the penalty's relative weight halves
    assert log_marginal_likelihood(model, one.prior, twice) == pytest.approx(2 * one.loglik)
    assert two.penalty_value > one.penalty_value
    assert two.loglik / 2 > one.loglik

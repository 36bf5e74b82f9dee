import msgspec
import numpy as np
import pytest

from core.errors import DataError
from core.estimation.nuisance import (
    NuisanceOptions,
    Sample,
    fit_nuisance,
    predict_mu,
    predict_pi,
)
from core.estimation.penalized_regression import DesignMatrix, bch_penalty_level, null_penalty_threshold
from core.simulation.dgp import gen_dgp1


class TestSample:
    def test_rejects_non_binary_treatment(self):
        with pytest.raises(DataError):
            Sample.build(np.zeros(4), [0, 1, 2, 1], np.ones((4, 2)), (0,))

    def test_rejects_single_arm(self):
        with pytest.raises(DataError):
            Sample.build(np.zeros(4), np.ones(4), np.ones((4, 2)), (0,))

    def test_rejects_bad_conditioning_columns(self):
        with pytest.raises(DataError):
            Sample.build(np.zeros(4), [0, 1, 0, 1], np.ones((4, 2)), (2,))
        with pytest.raises(DataError):
            Sample.build(np.zeros(4), [0, 1, 0, 1], np.ones((4, 5)), (0, 1, 2, 3))

    def test_x1_view(self):
        x = np.arange(12.0).reshape(4, 3)
        sample = Sample.build(np.zeros(4), [0, 1, 0, 1], x, (2, 0))
        assert sample.x1.tolist() == x[:, [2, 0]].tolist()


class TestFitNuisance:
    def test_fits_and_selects_true_terms(self, dgp1_small):
        fit = fit_nuisance(dgp1_small.sample, np.arange(dgp1_small.sample.n))
        selected = fit.selected()
        assert set(range(4)) <= set(selected["mu1"])
        assert fit.fit_mu1.refit and fit.fit_pi.refit
        assert fit.fit_mu1.coefficients[:4] == pytest.approx(np.ones(4), abs=0.25)

    def test_outcome_penalty_uses_arm_size(self, dgp1_small):
        sample = dgp1_small.sample
        fit = fit_nuisance(sample, np.arange(sample.n), NuisanceOptions(post_lasso=False))
        treated = int(sample.d.sum())
        assert fit.fit_mu1.lam == pytest.approx(bch_penalty_level(treated, sample.p, "outcome"))
        assert fit.fit_pi.lam == pytest.approx(bch_penalty_level(sample.n, sample.p, "propensity"))

    def test_small_arm_names_the_fold(self, dgp1_small):
        sample = dgp1_small.sample
        treated = np.flatnonzero(sample.d == 1)[:3]
        control = np.flatnonzero(sample.d == 0)[:20]
        with pytest.raises(DataError, match="complement of fold 2"):
            fit_nuisance(sample, np.concatenate([treated, control]), fold=2)

    def test_row_order_does_not_matter(self, dgp1_small):
        sample = dgp1_small.sample
        order = np.random.default_rng(5).permutation(sample.n)
        shuffled = Sample.build(sample.y[order], sample.d[order], sample.x[order], sample.x1_cols)
        a = fit_nuisance(sample, np.arange(sample.n))
        b = fit_nuisance(shuffled, np.arange(sample.n))
        for name in ("fit_mu0", "fit_mu1", "fit_pi"):
            assert np.array_equal(getattr(a, name).coefficients, getattr(b, name).coefficients)
            assert getattr(a, name).intercept == getattr(b, name).intercept

    def test_zero_outcome_gives_zero_outcome_models(self, dgp1_small):
        sample = dgp1_small.sample
        zeroed = Sample.build(np.zeros(sample.n), sample.d, sample.x, sample.x1_cols)
        fit = fit_nuisance(zeroed, np.arange(sample.n))
        for model in (fit.fit_mu0, fit.fit_mu1):
            assert model.intercept == 0.0
            assert model.support == ()
        assert np.all(predict_mu(fit, 0, sample.x) == 0.0)
        assert np.all(predict_mu(fit, 1, sample.x) == 0.0)

    def test_unrelated_treatment_selects_nothing(self):
        rng = np.random.default_rng(17)
        n, p = 1000, 50
        x = rng.normal(size=(n, p))
        d = (rng.uniform(size=n) < 0.5).astype(float)
        sample = Sample.build(rng.normal(size=n), d, x, (0,))
        threshold = null_penalty_threshold(DesignMatrix.from_array(x), d, "logistic")
        assert threshold < bch_penalty_level(n, p, "propensity")
        assert fit_nuisance(sample, np.arange(n)).fit_pi.support == ()

    def test_invalid_trim(self, dgp1_small):
        with pytest.raises(ValueError):
            fit_nuisance(dgp1_small.sample, np.arange(50), NuisanceOptions(trim_eps=0.5))


class TestPredict:
    def test_propensity_is_clamped(self, dgp1_small):
        sample = dgp1_small.sample
        fit = fit_nuisance(sample, np.arange(sample.n), NuisanceOptions(trim_eps=0.05))
        values = [
            predict_pi(
                msgspec.structs.replace(
                    fit, fit_pi=msgspec.structs.replace(fit.fit_pi, intercept=shift)
                ),
                sample.x[0],
            )
            for shift in (100.0, -100.0)
        ]
        assert values == pytest.approx([0.95, 0.05])
        inside = predict_pi(fit, sample.x)
        assert inside.min() >= 0.05 and inside.max() <= 0.95

    def test_single_row_returns_float(self, dgp1_small):
        sample = dgp1_small.sample
        fit = fit_nuisance(sample, np.arange(sample.n))
        assert isinstance(predict_mu(fit, 1, sample.x[0]), float)
        assert isinstance(predict_pi(fit, sample.x[0]), float)
        assert predict_mu(fit, 0, sample.x[:3]).shape == (3,)

    def test_invalid_arm(self, dgp1_small):
        fit = fit_nuisance(dgp1_small.sample, np.arange(dgp1_small.sample.n))
        with pytest.raises(ValueError):
            predict_mu(fit, 2, dgp1_small.sample.x[0])


def test_fit_ignores_rows_outside_the_training_set(dgp1_small):
    sample = dgp1_small.sample
    train = np.arange(200, sample.n)
    rng = np.random.default_rng(4)
    x = sample.x.copy()
    y = sample.y.copy()
    x[:200] = rng.normal(size=(200, sample.p))
    y[:200] = rng.normal(size=200)
    altered = Sample.build(y, sample.d, x, sample.x1_cols)
    a = fit_nuisance(sample, train, fold=0)
    b = fit_nuisance(altered, train, fold=0)
    for name in ("fit_mu0", "fit_mu1", "fit_pi"):
        assert np.array_equal(getattr(a, name).coefficients, getattr(b, name).coefficients)


def test_treated_outcome_support_finds_the_active_terms():
    active = set(range(4))
    hits, extras = 0, []
    for seed in range(50):
        sample = gen_dgp1(500, 100, seed).sample
        support = set(fit_nuisance(sample, np.arange(sample.n)).fit_mu1.support)
        hits += active <= support
        extras.append(len(support - active))
    assert hits >= 45
    assert np.mean(extras) <= 1.0

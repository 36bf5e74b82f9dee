import numpy as np
import pytest
from scipy.special import expit

from core.estimation.nuisance import fit_nuisance
from core.estimation.score import dr_score, score_vector
from core.simulation.dgp import gen_dgp1


def test_score_by_hand():
    assert dr_score(3.0, 1, 1.0, 2.0, 0.5) == pytest.approx(2.0 * (3.0 - 2.0) + 2.0 - 1.0)
    assert dr_score(0.5, 0, 1.0, 2.0, 0.25) == pytest.approx(2.0 - (0.5 - 1.0) / 0.75 - 1.0)


def test_correct_outcome_models_cancel_weights():
    y = np.array([1.0, 4.0, 2.0])
    d = np.array([1, 0, 1])
    mu0, mu1 = np.array([0.2, 4.0, 0.1]), np.array([1.0, 3.0, 2.0])
    for pi in (0.1, 0.5, 0.9):
        psi = dr_score(y, d, mu0, mu1, np.full(3, pi))
        assert psi == pytest.approx(mu1 - mu0)


def test_score_vector_uses_requested_rows(dgp1_small):
    sample = dgp1_small.sample
    fit = fit_nuisance(sample, np.arange(sample.n))
    rows = np.array([5, 1, 9])
    scores = score_vector(sample, rows, fit)
    assert scores.eval_indices.tolist() == [5, 1, 9]
    full = score_vector(sample, np.arange(sample.n), fit)
    assert scores.values == pytest.approx(full.values[rows])


def test_score_vector_rejects_out_of_range(dgp1_small):
    fit = fit_nuisance(dgp1_small.sample, np.arange(dgp1_small.sample.n))
    with pytest.raises(ValueError):
        score_vector(dgp1_small.sample, [dgp1_small.sample.n], fit)


class TestDoubleRobustness:
    @pytest.fixture(scope="class")
    def large(self):
        return gen_dgp1(n=100_000, p=20, seed=2024)

    @staticmethod
    def _within_four_se(psi, target):
        se = psi.std(ddof=1) / np.sqrt(psi.size)
        assert abs(psi.mean() - target) <= 4 * se

    def test_true_outcomes_wrong_propensity(self, large):
        s = large.sample
        mu1 = s.x @ large.beta + 10.0
        mu0 = np.zeros(s.n)
        wrong_pi = np.clip(expit(-0.8 * s.x[:, 5] + 0.3), 0.01, 0.99)
        self._within_four_se(dr_score(s.y, s.d, mu0, mu1, wrong_pi), 10.0)

    def test_true_propensity_wrong_outcomes(self, large):
        s = large.sample
        pi = np.clip(expit(s.x @ large.gamma), 0.01, 0.99)
        wrong_mu1 = 3.0 + 0.5 * s.x[:, 6]
        wrong_mu0 = -1.0 + s.x[:, 7]
        self._within_four_se(dr_score(s.y, s.d, wrong_mu0, wrong_mu1, pi), 10.0)


def test_score_is_linear_in_outcome(rng):
    d = rng.integers(0, 2, size=20)
    mu0, mu1 = rng.normal(size=20), rng.normal(size=20)
    pi = rng.uniform(0.1, 0.9, size=20)
    y1, y2 = rng.normal(size=20), rng.normal(size=20)
    base = dr_score(np.zeros(20), d, mu0, mu1, pi)
    combined = dr_score(2.0 * y1 - 3.0 * y2, d, mu0, mu1, pi)
    parts = 2.0 * (dr_score(y1, d, mu0, mu1, pi) - base) - 3.0 * (dr_score(y2, d, mu0, mu1, pi) - base)
    assert combined - base == pytest.approx(parts, abs=1e-10)

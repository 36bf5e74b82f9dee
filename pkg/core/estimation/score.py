"""Doubly-robust (Neyman-orthogonal) score of the treatment effect."""

from typing import Sequence

import msgspec
import numpy as np

from core.estimation.nuisance import NuisanceFit, Sample, predict_mu, predict_pi


class ScoreVector(msgspec.Struct, frozen=True):
    values: np.ndarray
    eval_indices: np.ndarray
    source_fit: NuisanceFit


def dr_score(y, d, mu0, mu1, pi):
    """
    psi = d (y - mu1) / pi + mu1 - (1 - d)(y - mu0) / (1 - pi) - mu0

    Works elementwise on scalars or arrays; pi must already lie inside (0, 1).
    """
    return d * (y - mu1) / pi + mu1 - (1 - d) * (y - mu0) / (1 - pi) - mu0


def score_vector(
    sample: Sample, eval_indices: Sequence[int] | np.ndarray, fit: NuisanceFit
) -> ScoreVector:
    """Scores of the rows in eval_indices under one set of fitted nuisances."""
    rows = np.asarray(eval_indices, dtype=np.intp)
    if rows.size and (rows.min() < 0 or rows.max() >= sample.n):
        raise ValueError(f"eval indices out of range for n={sample.n}")
    x = sample.x[rows]
    values = dr_score(
        sample.y[rows],
        sample.d[rows],
        predict_mu(fit, 0, x),
        predict_mu(fit, 1, x),
        predict_pi(fit, x),
    )
    return ScoreVector(values=np.asarray(values, dtype=np.float64), eval_indices=rows, source_fit=fit)

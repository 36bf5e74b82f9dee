"""
Multiplier bootstrap of the second stage and confidence bands.

Each draw reweights the held-out scores by i.i.d. N(1, 1) multipliers and
re-runs only the local regression (same fits, scores, fold assignment,
bandwidth and grid). The sup over the grid of the standardized deviation gives
one bootstrap statistic; its empirical quantile is the uniform critical value.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from typing import Literal

import msgspec
import numpy as np
from scipy.special import ndtri

from config import logger
from core.errors import NumericalError
from core.estimation.estimator import CateCurve, EvalGrid
from core.estimation.local_regression import LocalDesign
from core.estimation.nuisance import Sample
from core.utils.rng import stream

WeightLaw = Literal["normal_mean1_var1"]
Side = Literal["two", "left", "right"]
Scope = Literal["pointwise", "uniform"]

_RANK_SLACK = 1e-9


class BootstrapDraws(msgspec.Struct, frozen=True, kw_only=True):
    B: int
    sup_one_sided: np.ndarray
    sup_two_sided: np.ndarray
    seed: int
    weight_law: WeightLaw = "normal_mean1_var1"

    def critical_value(self, alpha: float, side: Side = "two") -> float:
        draws = self.sup_two_sided if side == "two" else self.sup_one_sided
        return critical_value(draws, alpha)


class ConfidenceBand(msgspec.Struct, frozen=True, kw_only=True):
    grid: EvalGrid
    lower: np.ndarray
    upper: np.ndarray
    alpha: float
    side: Side
    critical_value: float
    scope: Scope

    def contains(self, values: np.ndarray) -> bool:
        """
        Whether values lie inside the band at every grid point where the band is defined.

        Points with a NaN bound (degenerate or low-density points) are skipped.
        """
        values = np.asarray(values, dtype=np.float64)
        defined = ~(np.isnan(self.lower) | np.isnan(self.upper))
        inside = (self.lower <= values) & (values <= self.upper)
        return bool(np.all(inside[defined]))


def draw_multipliers(n: int, rng: np.random.Generator) -> np.ndarray:
    """n i.i.d. N(1, 1) multipliers."""
    if n < 1:
        raise ValueError(f"need at least one multiplier, got n={n}")
    return rng.normal(loc=1.0, scale=1.0, size=n)


def _valid_points(curve: CateCurve) -> np.ndarray:
    valid = ~curve.degenerate & np.isfinite(curve.sigma) & (curve.sigma > 0)
    if not valid.any():
        raise NumericalError("no grid point has a positive finite standard deviation")
    return valid


def bootstrap_curves(
    sample: Sample,
    curve: CateCurve,
    B: int,
    seed: int,
    multipliers: np.ndarray | None = None,
    workers: int = 1,
) -> BootstrapDraws:
    """
    Sup statistics of B multiplier-bootstrap replicates of the curve.

    Draw b uses multipliers from stream(seed, "bootstrap", b), so the draws do
    not depend on the order or the thread they run in.

    Args:
        sample: Sample the curve was estimated on
        curve: Estimated curve, carrying its fold fits and scores
        B: Number of draws
        seed: Root seed of the multiplier streams
        multipliers: Fixed multipliers to use instead of random ones, an (n,)
            vector reused by every draw or a (B, n) matrix
        workers: Threads running draws

    Returns:
        BootstrapDraws

    Raises:
        NumericalError: If sigma is not positive and finite anywhere on the grid
    """
    if B < 1:
        raise ValueError(f"B must be at least 1, got {B}")
    if multipliers is not None:
        multipliers = np.broadcast_to(np.asarray(multipliers, dtype=np.float64), (B, sample.n))

    valid = _valid_points(curve)
    tau = curve.tau[valid]
    se = curve.standard_errors()[valid]
    designs = [
        LocalDesign(sample.x1[scores.eval_indices], curve.grid.points, curve.kernel)
        for scores in curve.fold_scores
    ]

    def run_draw(b: int) -> tuple[float, float]:
        xi = (
            draw_multipliers(sample.n, stream(seed, "bootstrap", b))
            if multipliers is None
            else multipliers[b]
        )
        fold_tau = np.stack(
            [
                design.fit(scores.values, xi[scores.eval_indices], curve.second_stage)[0]
                for design, scores in zip(designs, curve.fold_scores)
            ]
        )
        deviation = (np.mean(fold_tau, axis=0)[valid] - tau) / se
        with np.errstate(invalid="ignore"):
            return float(np.nanmax(deviation)), float(np.nanmax(np.abs(deviation)))

    if workers <= 1:
        stats = [run_draw(b) for b in range(B)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            stats = list(pool.map(run_draw, range(B)))

    sup_one_sided = np.array([s[0] for s in stats])
    sup_two_sided = np.array([s[1] for s in stats])
    logger.debug(
        f"Bootstrap: B={B}, median two-sided sup {float(np.median(sup_two_sided)):.4f}"
    )
    return BootstrapDraws(
        B=B, sup_one_sided=sup_one_sided, sup_two_sided=sup_two_sided, seed=seed
    )


def critical_value(draws: np.ndarray, alpha: float) -> float:
    """
    Order statistic of rank ceil(B(1 - alpha)) of the draws.

    Raises:
        ValueError: If there are no draws or alpha is outside (0, 1)
    """
    draws = np.sort(np.asarray(draws, dtype=np.float64).ravel())
    if draws.size == 0:
        raise ValueError("critical value needs at least one draw")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    rank = math.ceil(draws.size * (1.0 - alpha) - _RANK_SLACK)
    rank = min(max(rank, 1), draws.size)
    return float(draws[rank - 1])


def _band(curve: CateCurve, C: float, alpha: float, side: Side, scope: Scope) -> ConfidenceBand:
    half_width = C * curve.standard_errors()
    if side == "two":
        lower, upper = curve.tau - half_width, curve.tau + half_width
    elif side == "left":
        lower, upper = curve.tau - half_width, np.full_like(curve.tau, np.inf)
    elif side == "right":
        lower, upper = np.full_like(curve.tau, -np.inf), curve.tau + half_width
    else:
        raise ValueError(f"unknown band side {side!r}")
    return ConfidenceBand(
        grid=curve.grid,
        lower=lower,
        upper=upper,
        alpha=alpha,
        side=side,
        critical_value=float(C),
        scope=scope,
    )


def uniform_band(curve: CateCurve, C: float, alpha: float, side: Side = "two") -> ConfidenceBand:
    """tau -/+ C * sigma / sqrt(N h^d); one-sided bands are open on the other side."""
    if not C >= 0:
        raise ValueError(f"critical value must be non-negative, got {C}")
    return _band(curve, C, alpha, side, "uniform")


def pointwise_band(curve: CateCurve, alpha: float, side: Side = "two") -> ConfidenceBand:
    """Band with the standard normal quantile z_(1-alpha/2) (two-sided) or z_(1-alpha) in place of C."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    z = float(ndtri(1.0 - alpha / 2.0)) if side == "two" else float(ndtri(1.0 - alpha))
    return _band(curve, z, alpha, side, "pointwise")

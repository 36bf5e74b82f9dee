"""
Full-sample and K-fold cross-fitting CATE estimators on an evaluation grid.

Both estimators share one second stage: score the held-out rows with the fitted
nuisances, run a kernel-weighted local regression of the scores on X1 at every
grid point, and estimate the variance of the intercept there. The cross-fitting
curve is the average of the K fold curves.
"""

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Literal, Sequence, TypeVar

import msgspec
import numpy as np

from config import logger
from core.errors import NumericalError
from core.estimation.local_regression import (
    KernelSpec,
    LocalDesign,
    SecondStage,
    rot_bandwidth,
)
from core.estimation.nuisance import NuisanceFit, NuisanceOptions, Sample, fit_nuisance
from core.estimation.score import ScoreVector, score_vector
from core.utils.rng import stream

Method = Literal["full_sample", "cross_fit"]

DEFAULT_GRID_SIZE = {1: 201, 2: 21, 3: 11}
DEFAULT_PERCENTILES = (2.0, 98.0)

T = TypeVar("T")
R = TypeVar("R")


class EvalGrid(msgspec.Struct, frozen=True):
    """Evaluation points (G, d) inside a box of per-coordinate closed intervals."""

    points: np.ndarray
    bounds: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if self.points.ndim != 2 or self.points.shape[1] != len(self.bounds):
            raise ValueError(
                f"grid points of shape {self.points.shape} do not match {len(self.bounds)} bounds"
            )
        lower = np.array([b[0] for b in self.bounds])
        upper = np.array([b[1] for b in self.bounds])
        if np.any(self.points < lower) or np.any(self.points > upper):
            raise ValueError("grid points must lie within the grid bounds")

    @classmethod
    def linspace(cls, lower: float, upper: float, num: int = 201) -> "EvalGrid":
        return cls.product([(lower, upper)], num)

    @classmethod
    def product(cls, bounds: Sequence[tuple[float, float]], num: int) -> "EvalGrid":
        """Cartesian product of `num` equally spaced points per coordinate."""
        if num < 1:
            raise ValueError(f"grid needs at least one point per axis, got {num}")
        bounds = tuple((float(lo), float(hi)) for lo, hi in bounds)
        if any(lo > hi for lo, hi in bounds):
            raise ValueError(f"grid bounds must be ordered, got {bounds}")
        axes = [np.linspace(lo, hi, num) for lo, hi in bounds]
        mesh = np.meshgrid(*axes, indexing="ij")
        return cls(points=np.column_stack([m.ravel() for m in mesh]), bounds=bounds)

    @classmethod
    def from_points(cls, points: np.ndarray) -> "EvalGrid":
        points = np.asarray(points, dtype=np.float64)
        if points.ndim == 1:
            points = points[:, None]
        bounds = tuple(
            (float(lo), float(hi)) for lo, hi in zip(points.min(axis=0), points.max(axis=0))
        )
        return cls(points=points, bounds=bounds)

    @classmethod
    def default(cls, x1: np.ndarray, num: int | None = None) -> "EvalGrid":
        """Equally spaced points between the 2nd and 98th percentiles of each coordinate."""
        x1 = np.asarray(x1, dtype=np.float64)
        if x1.ndim == 1:
            x1 = x1[:, None]
        num = num or DEFAULT_GRID_SIZE[x1.shape[1]]
        lower, upper = np.percentile(x1, DEFAULT_PERCENTILES, axis=0)
        return cls.product(list(zip(lower, upper)), num)

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dimension(self) -> int:
        return self.points.shape[1]


class EstimatorOptions(msgspec.Struct, frozen=True, kw_only=True):
    nuisance: NuisanceOptions = msgspec.field(default_factory=NuisanceOptions)
    second_stage: SecondStage = "local_linear"
    density_floor: float = 1e-6
    workers: int = 1


class CateCurve(msgspec.Struct, frozen=True, kw_only=True):
    """
    Estimated CATE curve with everything the bootstrap needs to redo the second stage.

    sigma is on the standard-deviation scale; the standard error of tau at a
    point is sigma / sqrt(n * prod(h)).
    """

    grid: EvalGrid
    tau: np.ndarray
    slope: np.ndarray
    sigma: np.ndarray
    kernel: KernelSpec
    n: int
    method: Method
    folds: int
    fold_fits: tuple[NuisanceFit, ...]
    fold_scores: tuple[ScoreVector, ...]
    fold_tau: np.ndarray
    degenerate: np.ndarray
    second_stage: SecondStage = "local_linear"
    fold_assignment: np.ndarray | None = None

    @property
    def h(self) -> np.ndarray:
        return np.asarray(self.kernel.bandwidths)

    @property
    def scale(self) -> float:
        """sqrt(N h^d)."""
        return float(np.sqrt(self.n * self.kernel.volume))

    def standard_errors(self) -> np.ndarray:
        return self.sigma / self.scale


def _map(func: Callable[[T], R], items: Iterable[T], workers: int) -> list[R]:
    if workers <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))


def _kernel_for(sample: Sample, h: Sequence[float] | None) -> KernelSpec:
    if h is None:
        h = rot_bandwidth(sample.x1)
    h = tuple(float(v) for v in np.atleast_1d(h))
    if len(h) != len(sample.x1_cols):
        raise ValueError(
            f"{len(h)} bandwidths given for {len(sample.x1_cols)} conditioning coordinates"
        )
    return KernelSpec(bandwidths=h)


def _check_grid(sample: Sample, grid: EvalGrid) -> None:
    if grid.dimension != len(sample.x1_cols):
        raise ValueError(
            f"grid has dimension {grid.dimension}, sample conditions on {len(sample.x1_cols)} coordinate(s)"
        )
    x1 = sample.x1
    outside = (grid.points < x1.min(axis=0)) | (grid.points > x1.max(axis=0))
    if outside.any():
        logger.warning(
            f"Estimator: {int(outside.any(axis=1).sum())} grid point(s) lie outside the data range"
        )


def second_stage(
    x1: np.ndarray,
    scores: np.ndarray,
    grid: EvalGrid,
    kernel: KernelSpec,
    kind: SecondStage = "local_linear",
    multipliers: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Local regression of scores on X1 at every grid point: (tau, slope, degenerate)."""
    tau, slope, _, degenerate = LocalDesign(x1, grid.points, kernel).fit(scores, multipliers, kind)
    return tau, slope, degenerate


def variance_from_scores(
    x1: np.ndarray,
    scores: np.ndarray,
    center: np.ndarray,
    grid: EvalGrid,
    kernel: KernelSpec,
    density_floor: float = 1e-6,
) -> tuple[np.ndarray, np.ndarray]:
    """
    sigma^2(x) = (n h^d f(x)^2)^-1 * sum_i (psi_i - center(x))^2 K_h(X1_i - x)^2

    with n the number of rows given and f their kernel density estimate.

    Returns:
        (variance, low_density): variance is NaN where the density is below the floor
    """
    design = LocalDesign(x1, grid.points, kernel)
    density = design.density()
    residual = (np.asarray(scores)[:, None] - np.asarray(center)[None, :]) * design.weights
    total = np.einsum("ig,ig->g", residual, residual)
    low_density = ~(density >= density_floor)
    with np.errstate(divide="ignore", invalid="ignore"):
        variance = total / (design.rows * kernel.volume * density**2)
    variance[low_density] = np.nan
    return variance, low_density


def variance_full(
    sample: Sample,
    scores: ScoreVector,
    tau: np.ndarray,
    grid: EvalGrid,
    kernel: KernelSpec,
    density_floor: float = 1e-6,
) -> tuple[np.ndarray, np.ndarray]:
    """
    Standard deviation sigma_N(x) of the full-sample estimator at every grid point.

    Returns:
        (sigma, low_density)

    Raises:
        NumericalError: If the density vanishes at every grid point
    """
    variance, low = variance_from_scores(
        sample.x1[scores.eval_indices], scores.values, tau, grid, kernel, density_floor
    )
    if low.all():
        raise NumericalError("kernel density vanishes on the whole grid")
    return np.sqrt(variance), low


def variance_cross_fit(
    sample: Sample,
    fold_scores: Sequence[ScoreVector],
    fold_tau: np.ndarray,
    grid: EvalGrid,
    kernel: KernelSpec,
    density_floor: float = 1e-6,
) -> tuple[np.ndarray, np.ndarray]:
    """
    Cross-fitting standard deviation: the square root of the mean of the K fold
    variances, each using its fold's rows, scores, density and fold estimate.

    Raises:
        NumericalError: If the density vanishes at every grid point in some fold
    """
    variances = []
    low = np.zeros(grid.size, dtype=bool)
    for k, scores in enumerate(fold_scores):
        variance, fold_low = variance_from_scores(
            sample.x1[scores.eval_indices], scores.values, fold_tau[k], grid, kernel, density_floor
        )
        if fold_low.all():
            raise NumericalError(f"kernel density vanishes on the whole grid in fold {k}")
        variances.append(variance)
        low |= fold_low
    return np.sqrt(np.mean(variances, axis=0)), low


def partition_folds(n: int, folds: int, seed: int) -> np.ndarray:
    """
    Uniformly random partition of range(n) into `folds` groups whose sizes differ by at most one.

    Returns:
        Fold label per row
    """
    if folds < 2:
        raise ValueError(f"cross-fitting needs at least 2 folds, got {folds}")
    if n < 2 * folds:
        raise ValueError(f"n={n} is too small for {folds} folds")
    order = stream(seed, "folds").permutation(n)
    labels = np.empty(n, dtype=np.intp)
    labels[order] = np.arange(n) % folds
    return labels


def _assemble(
    sample: Sample,
    grid: EvalGrid,
    kernel: KernelSpec,
    fits: Sequence[NuisanceFit],
    scores: Sequence[ScoreVector],
    method: Method,
    options: EstimatorOptions,
    assignment: np.ndarray | None,
) -> CateCurve:
    fold_curves = [
        second_stage(sample.x1[s.eval_indices], s.values, grid, kernel, options.second_stage)
        for s in scores
    ]
    fold_tau = np.stack([c[0] for c in fold_curves])
    tau = np.mean(fold_tau, axis=0)
    slope = np.mean(np.stack([c[1] for c in fold_curves]), axis=0)
    degenerate = np.logical_or.reduce([c[2] for c in fold_curves])

    if method == "full_sample":
        sigma, low = variance_full(sample, scores[0], fold_tau[0], grid, kernel, options.density_floor)
    else:
        sigma, low = variance_cross_fit(sample, scores, fold_tau, grid, kernel, options.density_floor)
    degenerate = degenerate | low
    if degenerate.any():
        logger.warning(
            f"Estimator: {int(degenerate.sum())} of {grid.size} grid point(s) are degenerate"
        )

    return CateCurve(
        grid=grid,
        tau=tau,
        slope=slope,
        sigma=sigma,
        kernel=kernel,
        n=sample.n,
        method=method,
        folds=len(fits),
        fold_fits=tuple(fits),
        fold_scores=tuple(scores),
        fold_tau=fold_tau,
        degenerate=degenerate,
        second_stage=options.second_stage,
        fold_assignment=assignment,
    )


def cate_full_sample(
    sample: Sample,
    grid: EvalGrid | None = None,
    h: Sequence[float] | None = None,
    options: EstimatorOptions | None = None,
) -> CateCurve:
    """
    Full-sample estimator: nuisances fitted and scores evaluated on all rows.

    Args:
        sample: Data
        grid: Evaluation grid, EvalGrid.default(sample.x1) when omitted
        h: Bandwidths, the undersmoothed rule of thumb when omitted
        options: First-stage and second-stage settings

    Returns:
        CateCurve with method "full_sample"
    """
    options = options if options is not None else EstimatorOptions()
    kernel = _kernel_for(sample, h)
    grid = grid if grid is not None else EvalGrid.default(sample.x1)
    _check_grid(sample, grid)

    rows = np.arange(sample.n)
    fit = fit_nuisance(sample, rows, options.nuisance)
    scores = score_vector(sample, rows, fit)
    logger.info(f"FullSample: n={sample.n}, p={sample.p}, h={kernel.bandwidths}")
    return _assemble(sample, grid, kernel, [fit], [scores], "full_sample", options, None)


def cate_cross_fit(
    sample: Sample,
    folds: int = 4,
    grid: EvalGrid | None = None,
    h: Sequence[float] | None = None,
    seed: int = 0,
    options: EstimatorOptions | None = None,
) -> CateCurve:
    """
    K-fold cross-fitting estimator.

    Fold k's scores use nuisances fitted on the other folds; its local
    regression uses fold k's rows only. The curve is the mean of the K fold
    curves. The bandwidth is shared by all folds.

    Args:
        sample: Data
        folds: Number of folds K
        grid: Evaluation grid, EvalGrid.default(sample.x1) when omitted
        h: Bandwidths computed on the whole sample when omitted
        seed: Seed of the fold partition
        options: First-stage and second-stage settings

    Returns:
        CateCurve with method "cross_fit"

    Raises:
        DataError: If some fold complement lacks enough units of one arm
    """
    options = options if options is not None else EstimatorOptions()
    kernel = _kernel_for(sample, h)
    grid = grid if grid is not None else EvalGrid.default(sample.x1)
    _check_grid(sample, grid)
    labels = partition_folds(sample.n, folds, seed)

    def run_fold(k: int) -> tuple[NuisanceFit, ScoreVector]:
        train = np.flatnonzero(labels != k)
        held_out = np.flatnonzero(labels == k)
        fit = fit_nuisance(sample, train, options.nuisance, fold=k)
        return fit, score_vector(sample, held_out, fit)

    results = _map(run_fold, range(folds), options.workers)
    logger.info(
        f"CrossFit: n={sample.n}, p={sample.p}, K={folds}, h={kernel.bandwidths}"
    )
    return _assemble(
        sample,
        grid,
        kernel,
        [r[0] for r in results],
        [r[1] for r in results],
        "cross_fit",
        options,
        labels,
    )


def curve_at(
    sample: Sample,
    curve: CateCurve,
    grid: EvalGrid,
    density_floor: float = 1e-6,
) -> CateCurve:
    """Re-run the second stage of an existing curve on other points, keeping fits, scores and h."""
    options = EstimatorOptions(second_stage=curve.second_stage, density_floor=density_floor)
    return _assemble(
        sample,
        grid,
        curve.kernel,
        curve.fold_fits,
        curve.fold_scores,
        curve.method,
        options,
        curve.fold_assignment,
    )

import asyncio
from functools import partial
from pathlib import Path

import msgspec
import numpy as np
import pandas as pd

from api.v1.request_models.estimate import EstimateConfig
from api.v1.response_models.estimate import (
    RESULT_FORMAT,
    BandColumns,
    EstimateMetadata,
    EstimateResult,
    SelectedTerms,
)
from config import logger
from core.errors import ConfigError
from core.estimation.estimator import (
    DEFAULT_GRID_SIZE,
    CateCurve,
    EstimatorOptions,
    EvalGrid,
    cate_cross_fit,
    cate_full_sample,
)
from core.estimation.inference import bootstrap_curves, pointwise_band, uniform_band
from core.estimation.nuisance import Sample
from core.utils.data_io import ColumnRoles, build_sample, read_table_async

NUISANCES = ("mu0", "mu1", "pi")


class EstimateService:
    """CATE curve with bands for a user-supplied table."""

    @staticmethod
    def build_grid(config: EstimateConfig, sample: Sample) -> EvalGrid:
        """
        Product grid from the configured bounds, or from the 2nd and 98th
        percentiles of each conditioning column where a bound is not given.
        """
        x1 = sample.x1
        lower, upper = np.percentile(x1, (2.0, 98.0), axis=0)
        if config.grid.lower is not None:
            lower = np.asarray(config.grid.lower, dtype=np.float64)
        if config.grid.upper is not None:
            upper = np.asarray(config.grid.upper, dtype=np.float64)
        num = config.grid.points or DEFAULT_GRID_SIZE[x1.shape[1]]
        try:
            return EvalGrid.product(list(zip(lower, upper)), num)
        except ValueError as e:
            raise ConfigError(str(e)) from e

    @staticmethod
    def estimate_curve(
        sample: Sample, config: EstimateConfig, grid: EvalGrid, workers: int
    ) -> CateCurve:
        options = EstimatorOptions(second_stage=config.second_stage, workers=workers)
        if config.method == "full_sample":
            return cate_full_sample(sample, grid, config.bandwidth, options)
        return cate_cross_fit(
            sample, config.folds, grid, config.bandwidth, config.seed, options
        )

    @staticmethod
    def selected_terms(curve: CateCurve, names: tuple[str, ...]) -> tuple[list[SelectedTerms], dict[str, list[str]]]:
        """Selected dictionary terms per fold and their union over folds."""
        per_fold = []
        union: dict[str, set[int]] = {key: set() for key in NUISANCES}
        for k, fit in enumerate(curve.fold_fits):
            chosen = fit.selected()
            for key in NUISANCES:
                union[key].update(chosen[key])
            per_fold.append(
                SelectedTerms(
                    fold=k,
                    **{key: [names[j] for j in chosen[key]] for key in NUISANCES},
                )
            )
        return per_fold, {key: [names[j] for j in sorted(union[key])] for key in NUISANCES}

    @staticmethod
    async def run(config: EstimateConfig, base_dir: Path, workers: int = 1) -> EstimateResult:
        """
        Read the table, estimate the curve, bootstrap it and build every band.

        Args:
            config: Run configuration
            base_dir: Directory relative input paths are resolved against
            workers: Threads for folds and bootstrap draws

        Returns:
            EstimateResult

        Raises:
            ConfigError: On an invalid configuration or missing input file
            DataError: On unusable input data
            NumericalError: If the variance cannot be estimated anywhere on the grid
        """
        problems = config.problems()
        if problems:
            raise ConfigError(problems)

        input_path = Path(config.input)
        if not input_path.is_absolute():
            input_path = base_dir / input_path
        frame = await read_table_async(input_path, config.delimiter)
        roles = ColumnRoles(
            outcome=config.outcome,
            treatment=config.treatment,
            conditioning=tuple(config.conditioning),
            covariates="all" if config.covariates == "all" else tuple(config.covariates),
        )
        sample, names = build_sample(frame, roles, config.expansion, config.degree)
        grid = EstimateService.build_grid(config, sample)

        loop = asyncio.get_running_loop()
        curve = await loop.run_in_executor(
            None, partial(EstimateService.estimate_curve, sample, config, grid, workers)
        )
        logger.info(f"EstimateService: bootstrapping B={config.B}")
        draws = await loop.run_in_executor(
            None, partial(bootstrap_curves, sample, curve, config.B, config.seed, workers=workers)
        )

        bands = []
        for alpha in config.alphas:
            c_two = draws.critical_value(alpha, "two")
            c_one = draws.critical_value(alpha, "left")
            pointwise = pointwise_band(curve, alpha, "two")
            two = uniform_band(curve, c_two, alpha, "two")
            bands.append(
                BandColumns(
                    alpha=alpha,
                    pointwise_critical=pointwise.critical_value,
                    uniform_critical_two_sided=c_two,
                    uniform_critical_one_sided=c_one,
                    pointwise_lower=pointwise.lower.tolist(),
                    pointwise_upper=pointwise.upper.tolist(),
                    uniform_lower=two.lower.tolist(),
                    uniform_upper=two.upper.tolist(),
                    uniform_left_lower=uniform_band(curve, c_one, alpha, "left").lower.tolist(),
                    uniform_right_upper=uniform_band(curve, c_one, alpha, "right").upper.tolist(),
                )
            )
            logger.info(
                f"EstimateService: alpha={alpha} uniform critical value {c_two:.4f} "
                f"(pointwise {pointwise.critical_value:.4f})"
            )

        per_fold, union = EstimateService.selected_terms(curve, names)
        return EstimateResult(
            format_version=RESULT_FORMAT,
            grid=curve.grid.points.tolist(),
            tau=curve.tau.tolist(),
            slope=curve.slope.tolist(),
            sigma=curve.sigma.tolist(),
            se=curve.standard_errors().tolist(),
            bands=bands,
            metadata=EstimateMetadata(
                input=str(config.input),
                n=sample.n,
                p=sample.p,
                method=curve.method,
                folds=curve.folds,
                B=config.B,
                seed=config.seed,
                second_stage=curve.second_stage,
                bandwidth=list(curve.kernel.bandwidths),
                conditioning=list(config.conditioning),
                selected=per_fold,
                selected_union=union,
                degenerate_points=np.flatnonzero(curve.degenerate).tolist(),
            ),
        )

    @staticmethod
    def to_frame(result: EstimateResult) -> pd.DataFrame:
        """Flat table: grid coordinates, tau, slope, sigma, se, then the bands per alpha."""
        grid = np.asarray(result.grid)
        slope = np.asarray(result.slope, dtype=np.float64)
        columns: dict[str, object] = {}
        if grid.shape[1] == 1:
            columns["x1"] = grid[:, 0]
        else:
            for j in range(grid.shape[1]):
                columns[f"x1_{j + 1}"] = grid[:, j]
        columns["tau"] = np.asarray(result.tau, dtype=np.float64)
        if slope.shape[1] == 1:
            columns["slope"] = slope[:, 0]
        else:
            for j in range(slope.shape[1]):
                columns[f"slope_{j + 1}"] = slope[:, j]
        columns["sigma"] = np.asarray(result.sigma, dtype=np.float64)
        columns["se"] = np.asarray(result.se, dtype=np.float64)
        for band in result.bands:
            suffix = f"a{band.alpha:g}"
            columns[f"pw_lo_{suffix}"] = band.pointwise_lower
            columns[f"pw_hi_{suffix}"] = band.pointwise_upper
            columns[f"uni_lo_{suffix}"] = band.uniform_lower
            columns[f"uni_hi_{suffix}"] = band.uniform_upper
            columns[f"uni_left_lo_{suffix}"] = band.uniform_left_lower
            columns[f"uni_right_hi_{suffix}"] = band.uniform_right_upper
        return pd.DataFrame(columns)

    @staticmethod
    def write_artifacts(result: EstimateResult, output_dir: Path) -> tuple[Path, Path]:
        """Write estimate.json and estimate.csv into output_dir."""
        output_dir.mkdir(parents=True, exist_ok=True)
        json_path = output_dir / "estimate.json"
        csv_path = output_dir / "estimate.csv"
        json_path.write_bytes(msgspec.json.format(msgspec.json.encode(result), indent=2))
        EstimateService.to_frame(result).to_csv(csv_path, index=False)
        logger.info(f"EstimateService: wrote {json_path} and {csv_path}")
        return json_path, csv_path

"""
Monte Carlo experiments: replicate generate -> estimate -> bootstrap and
aggregate coverage and accuracy statistics.

Replication r draws everything from seeds derived from (root_seed, r, attempt),
so a report does not depend on the worker count or on completion order.
"""

import asyncio
import time
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from pathlib import Path
from typing import Iterable, Optional

import msgspec
import numpy as np

from config import logger
from core.caching import CheckpointStore
from core.errors import ConfigError, DataError, NumericalError
from core.estimation.estimator import (
    EstimatorOptions,
    EvalGrid,
    Method,
    cate_cross_fit,
    cate_full_sample,
    curve_at,
)
from core.estimation.inference import bootstrap_curves, uniform_band
from core.estimation.local_regression import SecondStage
from core.simulation.dgp import DgpSpec, generate
from core.task_locking import CheckpointLock
from core.utils.rng import derive_seed

MAX_RETRIES = 3
CHECKPOINT_FORMAT = "1"
REPORT_FORMAT = "1"


class GridSpec(msgspec.Struct, frozen=True, kw_only=True):
    lower: float = -1.0
    upper: float = 1.0
    points: int = 201

    def build(self) -> EvalGrid:
        return EvalGrid.linspace(self.lower, self.upper, self.points)


class McConfig(msgspec.Struct, frozen=True, kw_only=True):
    """
    One Monte Carlo experiment.

    The seed of the dgp template is ignored: every replication generates its
    data from a seed derived from root_seed.
    """

    dgp: DgpSpec = msgspec.field(default_factory=DgpSpec)
    replications: int = 100
    method: Method = "cross_fit"
    folds: int = 4
    B: int = 500
    alphas: tuple[float, ...] = (0.05,)
    grid: GridSpec = msgspec.field(default_factory=GridSpec)
    eval_points: tuple[float, ...] = (0.0,)
    root_seed: int = 0
    second_stage: SecondStage = "local_linear"
    bandwidth: Optional[tuple[float, ...]] = None

    def problems(self) -> list[str]:
        """Every problem with the configuration, in field order."""
        found = list(self.dgp.problems())
        if self.replications < 1:
            found.append(f"replications must be at least 1, got {self.replications}")
        if self.method == "cross_fit":
            if self.folds < 2:
                found.append(f"folds must be at least 2 for cross_fit, got {self.folds}")
            elif self.dgp.n < 2 * self.folds:
                found.append(f"dgp.n={self.dgp.n} is too small for {self.folds} folds")
        if self.B < 1:
            found.append(f"B must be at least 1, got {self.B}")
        if not self.alphas:
            found.append("alphas must not be empty")
        found.extend(f"alpha {a} is outside (0, 1)" for a in self.alphas if not 0.0 < a < 1.0)
        if self.grid.points < 1:
            found.append(f"grid.points must be at least 1, got {self.grid.points}")
        if self.grid.lower > self.grid.upper:
            found.append(f"grid.lower={self.grid.lower} exceeds grid.upper={self.grid.upper}")
        if not self.eval_points:
            found.append("eval_points must not be empty")
        if self.root_seed < 0:
            found.append(f"root_seed must be non-negative, got {self.root_seed}")
        if self.bandwidth is not None and (
            len(self.bandwidth) != 1 or not self.bandwidth[0] > 0
        ):
            found.append(f"bandwidth must be one positive value, got {list(self.bandwidth)}")
        return found

    def validate(self) -> None:
        """
        Raises:
            ConfigError: Listing every problem found
        """
        found = self.problems()
        if found:
            raise ConfigError(found)


class ReplicationRecord(msgspec.Struct, kw_only=True):
    """Outcome of one replication; per-alpha lists follow McConfig.alphas."""

    rep_index: int
    attempts: int
    failed: bool = False
    error: Optional[str] = None
    covered: list[bool] = []
    crit_two_sided: list[float] = []
    crit_one_sided: list[float] = []
    tau_eval: list[float] = []
    sigma_eval: list[float] = []
    se_eval: list[float] = []
    true_eval: list[float] = []
    bandwidth: list[float] = []


class AlphaStats(msgspec.Struct, kw_only=True):
    alpha: float
    emp: float
    mcri: float
    sdcri: float
    mcri_one_sided: float


class EvalPointStats(msgspec.Struct, kw_only=True):
    x1: float
    bias: float
    sd: float
    ase: float
    rmse: float


class McReport(msgspec.Struct, kw_only=True):
    format_version: str = REPORT_FORMAT
    alphas: list[AlphaStats]
    eval_points: list[EvalPointStats]
    replications: int
    successful: int
    failed: int
    failed_indices: list[int]
    config: Optional[McConfig] = None
    wall_time: float = 0.0


def _estimate(config: McConfig, seed: int):
    generated = generate(msgspec.structs.replace(config.dgp, seed=seed))
    sample = generated.sample
    grid = config.grid.build()
    options = EstimatorOptions(second_stage=config.second_stage)
    if config.method == "full_sample":
        curve = cate_full_sample(sample, grid, config.bandwidth, options)
    else:
        curve = cate_cross_fit(sample, config.folds, grid, config.bandwidth, seed, options)
    return generated, sample, curve


def run_replication(
    config: McConfig, rep_index: int, critical_override: Optional[float] = None
) -> ReplicationRecord:
    """
    Generate, estimate, bootstrap and score one replication.

    A DataError (for instance a fold complement with too few units of one arm)
    is retried with fresh data up to MAX_RETRIES times; a NumericalError or a
    final DataError gives a failed record.

    Args:
        config: Experiment configuration
        rep_index: Replication number
        critical_override: Critical value used for every alpha instead of the bootstrap one

    Returns:
        ReplicationRecord
    """
    error = None
    for attempt in range(MAX_RETRIES + 1):
        seed = derive_seed(config.root_seed, "replication", rep_index, attempt)
        try:
            generated, sample, curve = _estimate(config, seed)
            draws = bootstrap_curves(sample, curve, config.B, seed)
            at_eval = curve_at(sample, curve, EvalGrid.from_points(np.asarray(config.eval_points)))
        except DataError as e:
            error = f"DataError: {e}"
            logger.warning(f"Replication {rep_index}: attempt {attempt} failed, {e}")
            continue
        except NumericalError as e:
            logger.warning(f"Replication {rep_index}: numerical failure, {e}")
            return ReplicationRecord(
                rep_index=rep_index, attempts=attempt + 1, failed=True, error=f"NumericalError: {e}"
            )

        truth = generated.true_cate(curve.grid.points[:, 0])
        covered, crit_two, crit_one = [], [], []
        for alpha in config.alphas:
            c_two = draws.critical_value(alpha, "two") if critical_override is None else critical_override
            c_one = draws.critical_value(alpha, "left") if critical_override is None else critical_override
            covered.append(uniform_band(curve, c_two, alpha, "two").contains(truth))
            crit_two.append(c_two)
            crit_one.append(c_one)

        return ReplicationRecord(
            rep_index=rep_index,
            attempts=attempt + 1,
            covered=covered,
            crit_two_sided=crit_two,
            crit_one_sided=crit_one,
            tau_eval=at_eval.tau.tolist(),
            sigma_eval=at_eval.sigma.tolist(),
            se_eval=at_eval.standard_errors().tolist(),
            true_eval=generated.true_cate(np.asarray(config.eval_points)).tolist(),
            bandwidth=list(curve.kernel.bandwidths),
        )

    logger.warning(f"Replication {rep_index}: giving up after {MAX_RETRIES + 1} attempts")
    return ReplicationRecord(
        rep_index=rep_index, attempts=MAX_RETRIES + 1, failed=True, error=error
    )


def aggregate(
    records: Iterable[ReplicationRecord],
    config: Optional[McConfig] = None,
    wall_time: float = 0.0,
) -> McReport:
    """
    Coverage, critical value and accuracy statistics over successful records.

    EMP is the covered fraction, Mcri/Sdcri the mean/standard deviation of the
    two-sided critical value; per eval point BIAS = mean(tau - tau0),
    SD = std(tau), ASE = mean(se), RMSE = sqrt(mean((tau - tau0)^2)).
    Standard deviations divide by the number of records.

    Raises:
        NumericalError: If no record succeeded
    """
    records = sorted(records, key=lambda r: r.rep_index)
    good = [r for r in records if not r.failed]
    failed = [r.rep_index for r in records if r.failed]
    if not good:
        raise NumericalError(f"all {len(records)} replication(s) failed")

    covered = np.array([r.covered for r in good], dtype=np.float64)
    crit_two = np.array([r.crit_two_sided for r in good], dtype=np.float64)
    crit_one = np.array([r.crit_one_sided for r in good], dtype=np.float64)
    tau = np.array([r.tau_eval for r in good], dtype=np.float64)
    truth = np.array([r.true_eval for r in good], dtype=np.float64)
    se = np.array([r.se_eval for r in good], dtype=np.float64)
    error = tau - truth

    alphas = config.alphas if config is not None else tuple(float("nan") for _ in good[0].covered)
    points = (
        config.eval_points if config is not None else tuple(float("nan") for _ in good[0].tau_eval)
    )
    alpha_stats = [
        AlphaStats(
            alpha=float(alpha),
            emp=float(covered[:, j].mean()),
            mcri=float(crit_two[:, j].mean()),
            sdcri=float(crit_two[:, j].std()),
            mcri_one_sided=float(crit_one[:, j].mean()),
        )
        for j, alpha in enumerate(alphas)
    ]
    point_stats = [
        EvalPointStats(
            x1=float(x),
            bias=float(error[:, j].mean()),
            sd=float(tau[:, j].std()),
            ase=float(se[:, j].mean()),
            rmse=float(np.sqrt(np.mean(error[:, j] ** 2))),
        )
        for j, x in enumerate(points)
    ]
    return McReport(
        alphas=alpha_stats,
        eval_points=point_stats,
        replications=len(records),
        successful=len(good),
        failed=len(failed),
        failed_indices=failed,
        config=config,
        wall_time=wall_time,
    )


def checkpoint_every(replications: int) -> int:
    return max(1, replications // 20)


def _checkpoint_state(config: McConfig, records: dict[int, ReplicationRecord]) -> dict:
    return {
        "format_version": CHECKPOINT_FORMAT,
        "config": msgspec.to_builtins(config),
        "records": [msgspec.to_builtins(records[k]) for k in sorted(records)],
    }


async def load_checkpoint(store: CheckpointStore, config: McConfig) -> dict[int, ReplicationRecord]:
    """
    Records already stored for this config.

    Raises:
        ConfigError: If the checkpoint was written for a different configuration
    """
    state = await store.get()
    if state is None:
        return {}
    if state.get("format_version") != CHECKPOINT_FORMAT:
        raise ConfigError(f"checkpoint {store.path} has unsupported format {state.get('format_version')!r}")
    if state.get("config") != msgspec.to_builtins(config):
        raise ConfigError(f"checkpoint {store.path} was written for a different configuration")
    records = [msgspec.convert(r, ReplicationRecord) for r in state.get("records", [])]
    logger.info(f"Checkpoint: resuming with {len(records)} stored replication(s)")
    return {r.rep_index: r for r in records}


async def _run_pending(
    config: McConfig,
    records: dict[int, ReplicationRecord],
    workers: int,
    store: Optional[CheckpointStore],
) -> None:
    pending = [r for r in range(config.replications) if r not in records]
    if not pending:
        return
    every = checkpoint_every(config.replications)
    loop = asyncio.get_running_loop()
    executor = ProcessPoolExecutor(max_workers=workers) if workers > 1 else ThreadPoolExecutor(max_workers=1)
    try:
        futures = [
            loop.run_in_executor(executor, run_replication, config, rep) for rep in pending
        ]
        since_save = 0
        for future in asyncio.as_completed(futures):
            record = await future
            records[record.rep_index] = record
            since_save += 1
            if since_save >= every:
                since_save = 0
                logger.info(f"MonteCarlo: {len(records)}/{config.replications} replications done")
                if store is not None:
                    await store.set(_checkpoint_state(config, records))
    finally:
        executor.shutdown(wait=True, cancel_futures=True)


async def run_experiment(
    config: McConfig,
    workers: int = 1,
    checkpoint_path: Optional[Path] = None,
) -> McReport:
    """
    Run every replication of an experiment and aggregate them.

    Args:
        config: Experiment configuration
        workers: Worker processes; 1 runs replications one after another
        checkpoint_path: Resumable state file, or None to keep nothing on disk

    Returns:
        McReport

    Raises:
        ConfigError: On an invalid config, a checkpoint from another config, or a
            checkpoint locked by another run
        NumericalError: If every replication failed
    """
    config.validate()
    started = time.perf_counter()
    records: dict[int, ReplicationRecord] = {}

    if checkpoint_path is None:
        await _run_pending(config, records, workers, None)
    else:
        store = CheckpointStore(checkpoint_path)
        async with CheckpointLock(checkpoint_path) as lock:
            if not lock.acquired:
                raise ConfigError(f"checkpoint {checkpoint_path} is in use by another run")
            records = await load_checkpoint(store, config)
            await _run_pending(config, records, workers, store)
            await store.set(_checkpoint_state(config, records))

    report = aggregate(records.values(), config, time.perf_counter() - started)
    if report.failed:
        logger.warning(f"MonteCarlo: {report.failed} replication(s) failed: {report.failed_indices}")
    return report

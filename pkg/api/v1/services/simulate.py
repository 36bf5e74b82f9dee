import io
import zlib
from pathlib import Path
from typing import Optional

import msgspec
from rich.console import Console
from rich.table import Table

from api.v1.request_models.simulate import SimulateRequest
from config import CHECKPOINT_DIR, logger
from core.simulation.mc_harness import McReport, run_experiment


class SimulateService:
    """Monte Carlo experiments and their reports."""

    @staticmethod
    def checkpoint_path(request: SimulateRequest) -> Path:
        """Configured checkpoint, or one named after a hash of the experiment."""
        if request.checkpoint:
            return Path(request.checkpoint)
        digest = zlib.crc32(msgspec.json.encode(request.experiment))
        return CHECKPOINT_DIR / f"mc-{digest:08x}.ckpt"

    @staticmethod
    async def run(
        request: SimulateRequest, workers: int = 1, checkpoint: Optional[Path] = None
    ) -> McReport:
        config = request.experiment
        checkpoint = checkpoint or SimulateService.checkpoint_path(request)
        logger.info(
            f"SimulateService: {config.replications} replication(s) of {config.dgp.design}, "
            f"n={config.dgp.n}, p={config.dgp.p}, method={config.method}, workers={workers}"
        )
        report = await run_experiment(config, workers, checkpoint)
        logger.info(
            f"SimulateService: done in {report.wall_time:.1f}s, "
            f"{report.successful} succeeded, {report.failed} failed"
        )
        return report

    @staticmethod
    def render_tables(report: McReport) -> list[Table]:
        coverage = Table(title="Uniform band coverage")
        for column in ("alpha", "EMP", "Mcri", "Sdcri", "Mcri (one-sided)"):
            coverage.add_column(column, justify="right")
        for row in report.alphas:
            coverage.add_row(
                f"{row.alpha:g}",
                f"{row.emp:.3f}",
                f"{row.mcri:.3f}",
                f"{row.sdcri:.3f}",
                f"{row.mcri_one_sided:.3f}",
            )

        accuracy = Table(title="Pointwise accuracy")
        for column in ("x1", "BIAS", "SD", "ASE", "RMSE"):
            accuracy.add_column(column, justify="right")
        for row in report.eval_points:
            accuracy.add_row(
                f"{row.x1:g}",
                f"{row.bias:.4f}",
                f"{row.sd:.4f}",
                f"{row.ase:.4f}",
                f"{row.rmse:.4f}",
            )
        return [coverage, accuracy]

    @staticmethod
    def write_artifacts(report: McReport, output_dir: Path, console: Optional[Console] = None) -> tuple[Path, Path]:
        """Write report.json and a plain-text report.txt, echoing the tables to the console."""
        output_dir.mkdir(parents=True, exist_ok=True)
        json_path = output_dir / "report.json"
        text_path = output_dir / "report.txt"
        json_path.write_bytes(msgspec.json.format(msgspec.json.encode(report), indent=2))

        recorder = Console(record=True, width=100, file=io.StringIO())
        for table in SimulateService.render_tables(report):
            recorder.print(table)
        summary = (
            f"replications: {report.replications}, successful: {report.successful}, "
            f"failed: {report.failed} {report.failed_indices if report.failed else ''}".rstrip()
        )
        recorder.print(summary)
        text_path.write_text(recorder.export_text(), encoding="utf-8")

        if console is not None:
            for table in SimulateService.render_tables(report):
                console.print(table)
            console.print(summary)
        logger.info(f"SimulateService: wrote {json_path} and {text_path}")
        return json_path, text_path

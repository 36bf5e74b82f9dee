import asyncio
from pathlib import Path
from typing import Optional

import msgspec
import rich_click as click
from rich.console import Console

from api.v1.request_models import SimulateRequest, load_request
from api.v1.services.simulate import SimulateService
from config import resolve_workers


@click.command("simulate")
@click.option(
    "--config",
    "config_path",
    required=True,
    type=click.Path(path_type=Path),
    help="YAML or JSON Monte Carlo config.",
)
@click.option("--seed", type=click.IntRange(min=0), default=None, help="Override the root seed.")
@click.option("--threads", type=click.IntRange(min=0), default=None, help="Worker processes, 0 = all cores.")
@click.option("--output", type=click.Path(path_type=Path), default=None, help="Output directory.")
@click.option(
    "--checkpoint",
    type=click.Path(path_type=Path),
    default=None,
    help="Resumable state file (default: derived from the experiment).",
)
def simulate(
    config_path: Path,
    seed: Optional[int],
    threads: Optional[int],
    output: Optional[Path],
    checkpoint: Optional[Path],
) -> None:
    """Run a Monte Carlo experiment and report coverage and accuracy.

    Interrupted runs resume from their checkpoint. Writes report.json and report.txt.
    """
    request = load_request(config_path, SimulateRequest)
    if seed is not None:
        request = msgspec.structs.replace(
            request, experiment=msgspec.structs.replace(request.experiment, root_seed=seed)
        )
    request.experiment.validate()
    output_dir = output or config_path.parent / request.output

    report = asyncio.run(
        SimulateService.run(request, resolve_workers(threads), checkpoint)
    )
    SimulateService.write_artifacts(report, output_dir, Console(stderr=True))

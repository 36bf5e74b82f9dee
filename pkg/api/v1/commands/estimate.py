import asyncio
from pathlib import Path
from typing import Optional

import msgspec
import rich_click as click

from api.v1.request_models import EstimateConfig, load_request
from api.v1.services.estimate import EstimateService
from config import resolve_workers


@click.command("estimate")
@click.option(
    "--config",
    "config_path",
    required=True,
    type=click.Path(path_type=Path),
    help="YAML or JSON estimation config.",
)
@click.option("--seed", type=click.IntRange(min=0), default=None, help="Override the config seed.")
@click.option("--threads", type=click.IntRange(min=0), default=None, help="Worker threads, 0 = all cores.")
@click.option("--output", type=click.Path(path_type=Path), default=None, help="Output directory.")
def estimate(
    config_path: Path, seed: Optional[int], threads: Optional[int], output: Optional[Path]
) -> None:
    """Estimate a CATE curve with pointwise and uniform bands from a CSV file.

    Writes estimate.json and estimate.csv into the output directory.
    """
    config = load_request(config_path, EstimateConfig)
    if seed is not None:
        config = msgspec.structs.replace(config, seed=seed)
    output_dir = output or config_path.parent / config.output

    result = asyncio.run(
        EstimateService.run(config, config_path.parent, resolve_workers(threads))
    )
    json_path, csv_path = EstimateService.write_artifacts(result, output_dir)
    click.echo(f"{json_path}\n{csv_path}")

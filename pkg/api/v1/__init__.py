import rich_click as click

from api.v1.commands import estimate, simulate


@click.group("v1")
def group() -> None:
    """Two-stage CATE estimation with uniform confidence bands."""


group.add_command(estimate.estimate)
group.add_command(simulate.simulate)

from typing import Optional

import msgspec

RESULT_FORMAT = "1"


class BandColumns(msgspec.Struct, kw_only=True):
    """Pointwise and uniform bands at one level, aligned with the grid."""

    alpha: float
    pointwise_critical: float
    uniform_critical_two_sided: float
    uniform_critical_one_sided: float
    pointwise_lower: list[Optional[float]]
    pointwise_upper: list[Optional[float]]
    uniform_lower: list[Optional[float]]
    uniform_upper: list[Optional[float]]
    uniform_left_lower: list[Optional[float]]
    uniform_right_upper: list[Optional[float]]


class SelectedTerms(msgspec.Struct, kw_only=True):
    """Dictionary terms kept by each nuisance fit in one fold."""

    fold: int
    mu0: list[str]
    mu1: list[str]
    pi: list[str]


class EstimateMetadata(msgspec.Struct, kw_only=True):
    input: str
    n: int
    p: int
    method: str
    folds: int
    B: int
    seed: int
    second_stage: str
    bandwidth: list[float]
    conditioning: list[str]
    selected: list[SelectedTerms]
    selected_union: dict[str, list[str]]
    degenerate_points: list[int]


class EstimateResult(msgspec.Struct, kw_only=True):
    format_version: str
    grid: list[list[float]]
    tau: list[Optional[float]]
    slope: list[list[Optional[float]]]
    sigma: list[Optional[float]]
    se: list[Optional[float]]
    bands: list[BandColumns]
    metadata: EstimateMetadata

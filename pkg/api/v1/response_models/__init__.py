"""Artifacts written by the commands."""

from .estimate import (
    RESULT_FORMAT,
    BandColumns,
    SelectedTerms,
    EstimateMetadata,
    EstimateResult,
)

__all__ = [
    "RESULT_FORMAT",
    "BandColumns",
    "SelectedTerms",
    "EstimateMetadata",
    "EstimateResult",
]

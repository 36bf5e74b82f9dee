from typing import Literal, Optional

import msgspec

from core.estimation.estimator import Method
from core.estimation.local_regression import SecondStage
from core.utils.data_io import MAX_DEGREE, Expansion


class GridRequest(msgspec.Struct, omit_defaults=True):
    """Evaluation grid; bounds default to the 2nd and 98th percentiles per coordinate."""

    points: Optional[int] = None
    lower: Optional[list[float]] = None
    upper: Optional[list[float]] = None


class EstimateConfig(msgspec.Struct, omit_defaults=True, kw_only=True):
    input: str
    outcome: str
    treatment: str
    conditioning: list[str]
    covariates: list[str] | Literal["all"] = "all"
    expansion: Expansion = "none"
    degree: int = 2
    delimiter: str = ","
    method: Method = "cross_fit"
    folds: int = 4
    B: int = 500
    alphas: list[float] = msgspec.field(default_factory=lambda: [0.05])
    bandwidth: Optional[list[float]] = None
    grid: GridRequest = msgspec.field(default_factory=GridRequest)
    second_stage: SecondStage = "local_linear"
    seed: int = 0
    output: str = "results"

    def problems(self) -> list[str]:
        found = []
        if not 1 <= len(self.conditioning) <= 3:
            found.append(f"conditioning needs 1 to 3 columns, got {len(self.conditioning)}")
        for role in ("outcome", "treatment"):
            if getattr(self, role) in self.conditioning:
                found.append(f"{role} column '{getattr(self, role)}' is also a conditioning column")
            if self.covariates != "all" and getattr(self, role) in self.covariates:
                found.append(f"{role} column '{getattr(self, role)}' is also a covariate")
        if self.outcome == self.treatment:
            found.append(f"outcome and treatment are the same column '{self.outcome}'")
        if self.expansion != "none" and not 2 <= self.degree <= MAX_DEGREE:
            found.append(f"degree must lie in [2, {MAX_DEGREE}], got {self.degree}")
        if self.method == "cross_fit" and self.folds < 2:
            found.append(f"folds must be at least 2 for cross_fit, got {self.folds}")
        if self.B < 1:
            found.append(f"B must be at least 1, got {self.B}")
        if not self.alphas:
            found.append("alphas must not be empty")
        found.extend(f"alpha {a} is outside (0, 1)" for a in self.alphas if not 0.0 < a < 1.0)
        if self.bandwidth is not None:
            if len(self.bandwidth) != len(self.conditioning):
                found.append(
                    f"bandwidth has {len(self.bandwidth)} value(s) for {len(self.conditioning)} conditioning column(s)"
                )
            found.extend(f"bandwidth {h} is not positive" for h in self.bandwidth if not h > 0)
        if self.grid.points is not None and self.grid.points < 1:
            found.append(f"grid.points must be at least 1, got {self.grid.points}")
        for bound in ("lower", "upper"):
            values = getattr(self.grid, bound)
            if values is not None and len(values) != len(self.conditioning):
                found.append(f"grid.{bound} needs one value per conditioning column")
        if self.seed < 0:
            found.append(f"seed must be non-negative, got {self.seed}")
        return found

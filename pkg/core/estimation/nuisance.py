"""First-stage nuisance fits: outcome regressions per arm and the propensity score."""

from typing import Literal, Sequence

import msgspec
import numpy as np
from scipy.special import expit

from config import PENALTY_C, TRIM_EPS, LASSO_MAX_ITER, LASSO_TOL, logger
from core.errors import DataError
from core.estimation.penalized_regression import (
    DesignMatrix,
    LassoFit,
    bch_penalty_level,
    lasso_linear,
    lasso_logistic,
    post_lasso_refit,
)

MIN_ARM_SIZE = 5
MAX_CONDITIONING_DIM = 3


class Sample(msgspec.Struct, frozen=True):
    """Observed data W = (D, Y, X) with the conditioning coordinates X1 inside X."""

    y: np.ndarray
    d: np.ndarray
    x: np.ndarray
    x1_cols: tuple[int, ...]

    @classmethod
    def build(
        cls,
        y: np.ndarray,
        d: np.ndarray,
        x: np.ndarray,
        x1_cols: Sequence[int],
    ) -> "Sample":
        """
        Validate and assemble a sample.

        Raises:
            DataError: On shape mismatches, non-finite values, non-binary or
                single-arm treatment, or invalid conditioning columns
        """
        y = np.asarray(y, dtype=np.float64).ravel()
        d = np.asarray(d, dtype=np.float64).ravel()
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        n = y.shape[0]
        if d.shape[0] != n or x.shape[0] != n:
            raise DataError(
                f"row counts differ: y={n}, d={d.shape[0]}, x={x.shape[0]}"
            )
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x))):
            raise DataError("outcome and covariates must be finite")
        if not np.all((d == 0) | (d == 1)):
            raise DataError("treatment must be coded 0/1")
        if d.min() == d.max():
            raise DataError("sample needs at least one treated and one control unit")

        x1_cols = tuple(int(c) for c in x1_cols)
        if not 1 <= len(x1_cols) <= MAX_CONDITIONING_DIM:
            raise DataError(
                f"between 1 and {MAX_CONDITIONING_DIM} conditioning columns required, "
                f"got {len(x1_cols)}"
            )
        if len(set(x1_cols)) != len(x1_cols):
            raise DataError(f"conditioning columns repeat: {x1_cols}")
        if any(c < 0 or c >= x.shape[1] for c in x1_cols):
            raise DataError(f"conditioning columns {x1_cols} out of range for p={x.shape[1]}")
        return cls(y=y, d=d, x=x, x1_cols=x1_cols)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def x1(self) -> np.ndarray:
        """Conditioning coordinates as an (n, d_cond) matrix."""
        return self.x[:, list(self.x1_cols)]


class NuisanceOptions(msgspec.Struct, frozen=True, kw_only=True):
    penalty_c: float = PENALTY_C
    trim_eps: float = TRIM_EPS
    post_lasso: bool = True
    max_iter: int = LASSO_MAX_ITER
    tol: float = LASSO_TOL


class NuisanceFit(msgspec.Struct, frozen=True, kw_only=True):
    """Fitted eta = (mu(0, .), mu(1, .), pi(.)) on one index set."""

    fit_mu0: LassoFit
    fit_mu1: LassoFit
    fit_pi: LassoFit
    trim_eps: float
    train_indices: np.ndarray

    def selected(self) -> dict[str, tuple[int, ...]]:
        return {
            "mu0": self.fit_mu0.support,
            "mu1": self.fit_mu1.support,
            "pi": self.fit_pi.support,
        }


def _canonical_rows(sample: Sample, rows: np.ndarray) -> np.ndarray:
    """Order rows by content so fits do not depend on how the sample is stored."""
    keys = np.column_stack([sample.x[rows], sample.y[rows], sample.d[rows]])
    return rows[np.lexsort(keys.T[::-1])]


def _fit_one(
    design: DesignMatrix,
    response: np.ndarray,
    family: Literal["linear", "logistic"],
    lam: float,
    options: NuisanceOptions,
) -> LassoFit:
    solver = lasso_linear if family == "linear" else lasso_logistic
    fit = solver(design, response, lam, max_iter=options.max_iter, tol=options.tol)
    if not options.post_lasso:
        return fit
    return post_lasso_refit(design, response, fit.support, family)


def fit_nuisance(
    sample: Sample,
    indices: Sequence[int] | np.ndarray,
    options: NuisanceOptions | None = None,
    fold: int | None = None,
) -> NuisanceFit:
    """
    Fit mu(0, .), mu(1, .) and pi(.) on the given rows.

    Outcome fits use only their arm's rows and a penalty level evaluated at the
    arm's size; the propensity fit uses all rows of `indices`.

    Args:
        sample: Full sample
        indices: Rows to train on
        options: Penalty constant, trimming, post-lasso switch, solver budget
        fold: Fold number, only used to name the fold in errors

    Returns:
        NuisanceFit

    Raises:
        DataError: If indices are empty or an arm has fewer than MIN_ARM_SIZE rows
    """
    options = options if options is not None else NuisanceOptions()
    if not 0.0 < options.trim_eps < 0.5:
        raise ValueError(f"trim_eps must lie in (0, 0.5), got {options.trim_eps}")

    rows = np.unique(np.asarray(indices, dtype=np.intp))
    where = "full sample" if fold is None else f"complement of fold {fold}"
    if rows.size == 0:
        raise DataError(f"no rows to fit nuisances on ({where})")

    arms = {}
    for arm in (0, 1):
        arm_rows = rows[sample.d[rows] == arm]
        if arm_rows.size < MIN_ARM_SIZE:
            raise DataError(
                f"{where}: treatment arm {arm} has {arm_rows.size} rows, "
                f"at least {MIN_ARM_SIZE} needed"
            )
        arms[arm] = _canonical_rows(sample, arm_rows)

    outcome_fits = {}
    for arm, arm_rows in arms.items():
        design = DesignMatrix.from_array(sample.x[arm_rows])
        lam = bch_penalty_level(arm_rows.size, sample.p, "outcome", options.penalty_c)
        outcome_fits[arm] = _fit_one(design, sample.y[arm_rows], "linear", lam, options)

    pi_rows = _canonical_rows(sample, rows)
    lam_pi = bch_penalty_level(pi_rows.size, sample.p, "propensity", options.penalty_c)
    fit_pi = _fit_one(
        DesignMatrix.from_array(sample.x[pi_rows]),
        sample.d[pi_rows],
        "logistic",
        lam_pi,
        options,
    )

    logger.debug(
        f"Nuisance: {where} supports mu0={len(outcome_fits[0].support)} "
        f"mu1={len(outcome_fits[1].support)} pi={len(fit_pi.support)}"
    )
    return NuisanceFit(
        fit_mu0=outcome_fits[0],
        fit_mu1=outcome_fits[1],
        fit_pi=fit_pi,
        trim_eps=options.trim_eps,
        train_indices=rows,
    )


def predict_mu(fit: NuisanceFit, arm: int, x: np.ndarray) -> float | np.ndarray:
    """mu(arm, x): a float for one row, an array for a matrix of rows."""
    if arm not in (0, 1):
        raise ValueError(f"arm must be 0 or 1, got {arm}")
    model = fit.fit_mu1 if arm == 1 else fit.fit_mu0
    value = model.linear_predictor(x)
    return float(value) if np.ndim(value) == 0 else value


def predict_pi(fit: NuisanceFit, x: np.ndarray) -> float | np.ndarray:
    """Propensity Lambda(x'theta) clamped into [trim_eps, 1 - trim_eps]."""
    value = np.clip(
        expit(fit.fit_pi.linear_predictor(x)), fit.trim_eps, 1.0 - fit.trim_eps
    )
    return float(value) if np.ndim(value) == 0 else value

"""
Lasso and logistic lasso with the plug-in penalty level, plus post-lasso refits.

Objectives are written on the sum scale:

    linear:   (1/2) * sum_i (y_i - a - x_i'b)^2      + lam * sum_j scale_j * |b_j|
    logistic: -sum_i [d_i * eta_i - log(1 + e^eta_i)] + lam * sum_j scale_j * |b_j|

with an unpenalized intercept a. Dividing by n gives the per-observation form.
Both problems are solved on standardized columns z_j = (x_j - mean_j) / scale_j,
where every penalty loading becomes 1, and mapped back to the original scale.
"""

from typing import Literal, Sequence

import msgspec
import numpy as np
from scipy import linalg
from scipy.special import expit, ndtri

from config import KKT_TOL, LASSO_MAX_ITER, LASSO_TOL, PENALTY_C, logger
from core.errors import DataError

Family = Literal["linear", "logistic"]
Role = Literal["outcome", "propensity"]

ETA_CLAMP = 30.0
_MIN_WEIGHT = 1e-10
_RANK_TOL = 1e-10


class DesignMatrix(msgspec.Struct, frozen=True):
    """
    Dictionary b(X) evaluated on one estimation subsample.

    Column means and standard deviations are computed once from the rows given;
    constant columns are flagged as not penalized and never enter a fit.
    """

    values: np.ndarray
    column_means: np.ndarray
    column_scales: np.ndarray
    penalized: np.ndarray

    @classmethod
    def from_array(cls, values: np.ndarray) -> "DesignMatrix":
        values = np.asarray(values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2:
            raise DataError(f"design must be a 2-D matrix, got {values.ndim} dimensions")
        n, p = values.shape
        if n < 2 or p < 1:
            raise DataError(f"design needs n >= 2 and p >= 1, got n={n}, p={p}")
        if not np.all(np.isfinite(values)):
            raise DataError("design contains non-finite values")
        penalized = np.ptp(values, axis=0) > 0
        return cls(
            values=values,
            column_means=values.mean(axis=0),
            column_scales=np.where(penalized, values.std(axis=0), 0.0),
            penalized=penalized,
        )

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    def standardized(self) -> np.ndarray:
        """Columns centered and divided by their scale; constant columns are zero."""
        safe = np.where(self.penalized, self.column_scales, 1.0)
        z = (self.values - self.column_means) / safe
        z[:, ~self.penalized] = 0.0
        return z

    def subset(self, columns: Sequence[int]) -> "DesignMatrix":
        columns = np.asarray(columns, dtype=np.intp)
        return DesignMatrix(
            values=self.values[:, columns],
            column_means=self.column_means[columns],
            column_scales=self.column_scales[columns],
            penalized=self.penalized[columns],
        )


class LassoFit(msgspec.Struct, frozen=True, kw_only=True):
    """A fitted (post-)lasso model; coefficients are on the original scale."""

    intercept: float
    coefficients: np.ndarray
    support: tuple[int, ...]
    lam: float
    family: Family
    iterations: int
    converged: bool
    separated: bool = False
    refit: bool = False
    dropped: tuple[int, ...] = ()
    objective_trace: tuple[float, ...] = ()

    def linear_predictor(self, x: np.ndarray) -> np.ndarray:
        return self.intercept + np.asarray(x, dtype=np.float64) @ self.coefficients


def bch_penalty_level(
    n: int, p: int, role: Role = "outcome", c: float = PENALTY_C
) -> float:
    """
    Plug-in penalty level for the outcome and propensity lasso fits.

    outcome:    2c * sqrt(n) * Phi^-1(1 - 0.1 / (log(n) * 2p))
    propensity:  c * sqrt(n) * Phi^-1(1 - 0.1 / (log(n) * 4p))

    Args:
        n: Size of the sample the fit runs on
        p: Dictionary size
        role: "outcome" or "propensity"
        c: Scale constant (1.1 by default)

    Returns:
        The penalty level on the sum scale used by lasso_linear / lasso_logistic

    Raises:
        ValueError: If n < 3, p < 1, c <= 0 or the quantile argument leaves (0.5, 1)
    """
    if n < 3:
        raise ValueError(f"penalty level needs n >= 3 so that log(n) > 1, got {n}")
    if p < 1:
        raise ValueError(f"penalty level needs p >= 1, got {p}")
    if c <= 0:
        raise ValueError(f"penalty constant must be positive, got {c}")
    if role not in ("outcome", "propensity"):
        raise ValueError(f"unknown penalty role: {role}")

    tail = 0.1 / (np.log(n) * (2 if role == "outcome" else 4) * p)
    if not 0.0 < tail < 0.5:
        raise ValueError(f"quantile argument {1.0 - tail} falls outside (0.5, 1)")
    scale = 2.0 * c if role == "outcome" else c
    return float(scale * np.sqrt(n) * ndtri(1.0 - tail))


def null_penalty_threshold(
    design: DesignMatrix, response: np.ndarray, family: Family = "linear"
) -> float:
    """Smallest penalty level at which the fit has an empty support."""
    z = design.standardized()
    response = np.asarray(response, dtype=np.float64)
    centered = response - response.mean()
    if not design.penalized.any():
        return 0.0
    return float(np.max(np.abs(z.T @ centered)[design.penalized]))


def _soft_threshold(x: float, t: float) -> float:
    if x > t:
        return x - t
    if x < -t:
        return x + t
    return 0.0


def _kkt_gap(
    z: np.ndarray,
    residual: np.ndarray,
    coef: np.ndarray,
    lam: float,
    eligible: np.ndarray,
) -> float:
    n = z.shape[0]
    grad = z.T @ residual / n
    bound = lam / n
    active = (coef != 0) & eligible
    inactive = (coef == 0) & eligible
    gaps = [0.0]
    if active.any():
        gaps.append(float(np.max(np.abs(grad[active] - bound * np.sign(coef[active])))))
    if inactive.any():
        gaps.append(float(np.max(np.abs(grad[inactive]) - bound)))
    return max(gaps)


def _weighted_cd(
    z: np.ndarray,
    target: np.ndarray,
    weights: np.ndarray,
    lam: float,
    intercept: float,
    coef: np.ndarray,
    eligible: np.ndarray,
    *,
    max_sweeps: int,
    tol: float,
    kkt_check=None,
    trace: list[float] | None = None,
) -> tuple[float, np.ndarray, int, bool]:
    """
    Cyclic coordinate descent for

        (1/2) * sum_i w_i (t_i - a - z_i'c)^2 + lam * ||c||_1

    Alternates full sweeps with sweeps over the active set until the largest
    coefficient change in a full sweep falls below tol (and kkt_check, when
    given, accepts the point).
    """
    zt = np.ascontiguousarray(z.T)
    wzt = zt * weights
    col_norms = np.einsum("ji,ji->j", wzt, zt)
    columns = np.flatnonzero(eligible & (col_norms > 0))
    weight_sum = float(weights.sum())
    residual = target - intercept - z @ coef

    def objective() -> float:
        return float(0.5 * weights @ (residual * residual) + lam * np.abs(coef).sum())

    def sweep(order: np.ndarray) -> float:
        nonlocal intercept, residual
        largest = 0.0
        shift = float(weights @ residual) / weight_sum
        if shift != 0.0:
            intercept += shift
            residual -= shift
            largest = abs(shift)
        for j in order:
            old = coef[j]
            rho = float(wzt[j] @ residual) + col_norms[j] * old
            new = _soft_threshold(rho, lam) / col_norms[j]
            if new != old:
                residual -= (new - old) * zt[j]
                coef[j] = new
                largest = max(largest, abs(new - old))
        if trace is not None:
            trace.append(objective())
        return largest

    sweeps = 0
    converged = False
    while sweeps < max_sweeps:
        change = sweep(columns)
        sweeps += 1
        if change < tol:
            if kkt_check is None or kkt_check(residual, coef):
                converged = True
                break
            continue
        active = columns[coef[columns] != 0]
        while sweeps < max_sweeps:
            change = sweep(active)
            sweeps += 1
            if change < tol:
                break
    return intercept, coef, sweeps, converged


def _to_original_scale(
    design: DesignMatrix, intercept: float, coef: np.ndarray
) -> tuple[float, np.ndarray]:
    safe = np.where(design.penalized, design.column_scales, 1.0)
    coefficients = np.where(design.penalized, coef / safe, 0.0)
    return float(intercept - coefficients @ design.column_means), coefficients


def _check_response(design: DesignMatrix, response: np.ndarray) -> np.ndarray:
    response = np.asarray(response, dtype=np.float64).ravel()
    if response.shape[0] != design.rows:
        raise DataError(
            f"response has {response.shape[0]} rows, design has {design.rows}"
        )
    if not np.all(np.isfinite(response)):
        raise DataError("response contains non-finite values")
    return response


def _check_labels(design: DesignMatrix, labels: np.ndarray) -> np.ndarray:
    labels = _check_response(design, labels)
    if not np.all((labels == 0) | (labels == 1)):
        raise DataError("labels must be 0/1")
    if labels.min() == labels.max():
        raise DataError("labels must contain both classes")
    return labels


def lasso_linear(
    design: DesignMatrix,
    response: np.ndarray,
    lam: float,
    *,
    max_iter: int = LASSO_MAX_ITER,
    tol: float = LASSO_TOL,
    kkt_tol: float = KKT_TOL,
) -> LassoFit:
    """
    Least-squares lasso by cyclic coordinate descent with soft-thresholding.

    Args:
        design: Dictionary matrix with its penalty loadings
        response: Outcome vector
        lam: Penalty level on the sum scale (see bch_penalty_level)
        max_iter: Sweep budget
        tol: Convergence threshold on the largest standardized coefficient change
        kkt_tol: Stationarity tolerance checked before declaring convergence

    Returns:
        LassoFit with family "linear"; converged=False if the sweep budget ran out
    """
    y = _check_response(design, response)
    if lam < 0:
        raise ValueError(f"penalty level must be non-negative, got {lam}")

    z = design.standardized()
    n, p = z.shape
    eligible = design.penalized.copy()
    trace: list[float] = []

    if lam == 0.0:
        columns = np.flatnonzero(eligible)
        solution = np.linalg.lstsq(
            np.column_stack([np.ones(n), z[:, columns]]), y, rcond=None
        )[0]
        coef = np.zeros(p)
        coef[columns] = solution[1:]
        intercept_std, sweeps, converged = float(solution[0]), 1, True
    else:
        intercept_std, coef, sweeps, converged = _weighted_cd(
            z,
            y,
            np.ones(n),
            lam,
            float(y.mean()),
            np.zeros(p),
            eligible,
            max_sweeps=max_iter,
            tol=tol,
            kkt_check=lambda residual, c: _kkt_gap(z, residual, c, lam, eligible)
            <= kkt_tol,
            trace=trace,
        )
        if not converged:
            logger.warning(
                f"lasso_linear: no convergence after {sweeps} sweeps (lam={lam:.4g})"
            )

    intercept, coefficients = _to_original_scale(design, intercept_std, coef)
    return LassoFit(
        intercept=intercept,
        coefficients=coefficients,
        support=tuple(int(j) for j in np.flatnonzero(coefficients)),
        lam=float(lam),
        family="linear",
        iterations=sweeps,
        converged=converged,
        objective_trace=tuple(trace),
    )


def _logistic_objective(
    z: np.ndarray, d: np.ndarray, intercept: float, coef: np.ndarray, lam: float
) -> float:
    eta = np.clip(intercept + z @ coef, -ETA_CLAMP, ETA_CLAMP)
    return float(np.sum(np.logaddexp(0.0, eta) - d * eta) + lam * np.abs(coef).sum())


def lasso_logistic(
    design: DesignMatrix,
    labels: np.ndarray,
    lam: float,
    *,
    max_iter: int = LASSO_MAX_ITER,
    tol: float = LASSO_TOL,
    kkt_tol: float = KKT_TOL,
) -> LassoFit:
    """
    Logistic lasso by iteratively reweighted least squares around coordinate descent.

    Each outer step solves the penalized quadratic approximation of the negative
    log-likelihood, then halves the step until the penalized objective does not
    increase. A linear predictor reaching +-30 is treated as perfect separation:
    the fit stops there with separated=True.

    Args:
        design: Dictionary matrix with its penalty loadings
        labels: 0/1 treatment indicators, both classes present
        lam: Penalty level on the sum scale
        max_iter: Budget of coordinate sweeps over all outer steps
        tol: Convergence threshold on the largest standardized coefficient change
        kkt_tol: Stationarity tolerance checked before declaring convergence

    Returns:
        LassoFit with family "logistic"
    """
    d = _check_labels(design, labels)
    if lam < 0:
        raise ValueError(f"penalty level must be non-negative, got {lam}")

    z = design.standardized()
    p = z.shape[1]
    eligible = design.penalized.copy()
    share = float(d.mean())
    intercept = float(np.log(share / (1.0 - share)))
    coef = np.zeros(p)
    objective = _logistic_objective(z, d, intercept, coef, lam)
    trace = [objective]

    sweeps_used = 0
    converged = False
    separated = False
    while sweeps_used < max_iter:
        eta = intercept + z @ coef
        prob = expit(np.clip(eta, -ETA_CLAMP, ETA_CLAMP))
        weights = np.maximum(prob * (1.0 - prob), _MIN_WEIGHT)
        target = eta + (d - prob) / weights

        new_intercept, new_coef, sweeps, _ = _weighted_cd(
            z,
            target,
            weights,
            lam,
            intercept,
            coef.copy(),
            eligible,
            max_sweeps=max_iter - sweeps_used,
            tol=tol,
        )
        sweeps_used += sweeps

        step = 1.0
        cand_intercept, cand_coef = new_intercept, new_coef
        cand_objective = _logistic_objective(z, d, cand_intercept, cand_coef, lam)
        for _ in range(30):
            if cand_objective <= objective + 1e-12 * max(1.0, abs(objective)):
                break
            step *= 0.5
            cand_intercept = intercept + step * (new_intercept - intercept)
            cand_coef = coef + step * (new_coef - coef)
            cand_objective = _logistic_objective(z, d, cand_intercept, cand_coef, lam)

        change = max(
            float(np.max(np.abs(cand_coef - coef), initial=0.0)),
            abs(cand_intercept - intercept),
        )
        intercept, coef, objective = cand_intercept, cand_coef, cand_objective
        trace.append(objective)

        eta = intercept + z @ coef
        if np.max(np.abs(eta)) >= ETA_CLAMP:
            separated = True
            logger.warning(
                f"lasso_logistic: linear predictor reached +-{ETA_CLAMP:g}, "
                f"data look perfectly separated (lam={lam:.4g})"
            )
            break
        if change < tol:
            residual = d - expit(eta)
            if _kkt_gap(z, residual, coef, lam, eligible) <= kkt_tol:
                converged = True
                break

    if not converged and not separated:
        logger.warning(
            f"lasso_logistic: no convergence after {sweeps_used} sweeps (lam={lam:.4g})"
        )

    intercept, coefficients = _to_original_scale(design, intercept, coef)
    return LassoFit(
        intercept=intercept,
        coefficients=coefficients,
        support=tuple(int(j) for j in np.flatnonzero(coefficients)),
        lam=float(lam),
        family="logistic",
        iterations=sweeps_used,
        converged=converged,
        separated=separated,
        objective_trace=tuple(trace),
    )


def post_lasso_refit(
    design: DesignMatrix,
    response: np.ndarray,
    support: Sequence[int],
    family: Family,
) -> LassoFit:
    """
    Unpenalized refit on a selected support.

    Columns that make the selected submatrix rank deficient are dropped, weakest
    pivot of a column-pivoted QR first, and reported in `dropped`.

    Args:
        design: Dictionary matrix
        response: Outcome (linear) or 0/1 labels (logistic)
        support: Column indices chosen by the lasso
        family: "linear" or "logistic"

    Returns:
        LassoFit with refit=True and zeros outside the kept support
    """
    if family == "logistic":
        y = _check_labels(design, response)
    else:
        y = _check_response(design, response)

    p = design.cols
    support = sorted({int(j) for j in support})
    if support and (support[0] < 0 or support[-1] >= p):
        raise ValueError(f"support indices must lie in [0, {p})")

    columns = [j for j in support if design.penalized[j]]
    dropped = [j for j in support if not design.penalized[j]]
    kept: list[int] = []
    if columns:
        centered = design.values[:, columns] - design.column_means[columns]
        _, r, pivots = linalg.qr(centered, mode="economic", pivoting=True)
        diag = np.abs(np.diag(r))
        rank = int(np.sum(diag > _RANK_TOL * diag[0])) if diag[0] > 0 else 0
        kept = sorted(columns[i] for i in pivots[:rank])
        dropped += [columns[i] for i in pivots[rank:]]
    if dropped:
        logger.warning(
            f"post_lasso_refit: dropped {len(dropped)} rank-deficient column(s) {sorted(dropped)}"
        )

    coefficients = np.zeros(p)
    separated = False
    converged = True
    iterations = 1
    if family == "linear":
        if kept:
            centered = design.values[:, kept] - design.column_means[kept]
            solution = np.linalg.lstsq(centered, y - y.mean(), rcond=None)[0]
            coefficients[kept] = solution
        intercept = float(y.mean() - coefficients @ design.column_means)
    elif kept:
        sub_fit = lasso_logistic(design.subset(kept), y, 0.0)
        coefficients[kept] = sub_fit.coefficients
        intercept = sub_fit.intercept
        separated = sub_fit.separated
        converged = sub_fit.converged
        iterations = sub_fit.iterations
    else:
        share = float(y.mean())
        intercept = float(np.log(share / (1.0 - share)))

    return LassoFit(
        intercept=intercept,
        coefficients=coefficients,
        support=tuple(int(j) for j in np.flatnonzero(coefficients)),
        lam=0.0,
        family=family,
        iterations=iterations,
        converged=converged,
        separated=separated,
        refit=True,
        dropped=tuple(sorted(dropped)),
    )


def kkt_violation(design: DesignMatrix, response: np.ndarray, fit: LassoFit) -> float:
    """
    Largest violation of the lasso stationarity conditions, on the standardized scale.

    For j outside the support |n^-1 z_j'r| must not exceed lam/n; inside it must
    equal (lam/n) * sign(c_j). r is y - fit (linear) or d - Lambda(fit) (logistic).
    """
    response = _check_response(design, response)
    z = design.standardized()
    coef = fit.coefficients * design.column_scales
    eta = fit.linear_predictor(design.values)
    residual = response - (expit(eta) if fit.family == "logistic" else eta)
    return _kkt_gap(z, residual, coef, fit.lam, design.penalized)

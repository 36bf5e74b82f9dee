"""
Synthetic designs with known CATE curves.

strict_sparse: X ~ N(0, I_p), four active terms in both the outcome and the
    treatment index, tau(x1) = 10 + x1.
approx_sparse: X1 ~ N(0, 1) independent of (X2, ..., Xp), which are jointly
    normal with covariance 0.5^|j-k|; coefficients decay like 1/k^2 and are
    scaled to hit a target R^2; tau(x1) = c_y * x1.

In both designs Y(0) = 0, Y = D * Y(1) and D = 1{Lambda(X'gamma) > U} with U
uniform on (0, 1). The conditioning coordinate is column 0.
"""

from typing import Literal

import msgspec
import numpy as np
from scipy.linalg import cholesky, toeplitz
from scipy.special import expit

from core.estimation.nuisance import Sample
from core.utils.rng import stream

Design = Literal["strict_sparse", "approx_sparse"]

ACTIVE_TERMS = 4
OUTCOME_COEF = 1.0
TREATMENT_COEF = 0.5
BASELINE_EFFECT = 10.0
TOEPLITZ_RHO = 0.5


class DgpSpec(msgspec.Struct, frozen=True, kw_only=True):
    design: Design = "strict_sparse"
    n: int = 1000
    p: int = 100
    r2: float = 0.1
    seed: int = 0

    def problems(self) -> list[str]:
        found = []
        if self.n < 1:
            found.append(f"dgp.n must be positive, got {self.n}")
        if self.design == "strict_sparse" and self.p < ACTIVE_TERMS:
            found.append(f"strict_sparse needs p >= {ACTIVE_TERMS}, got {self.p}")
        if self.design == "approx_sparse":
            if self.p < 2:
                found.append(f"approx_sparse needs p >= 2, got {self.p}")
            if not 0.0 < self.r2 < 1.0:
                found.append(f"dgp.r2 must lie in (0, 1), got {self.r2}")
        if self.seed < 0:
            found.append(f"dgp.seed must be non-negative, got {self.seed}")
        return found


class GeneratedSample(msgspec.Struct, frozen=True, kw_only=True):
    sample: Sample
    cate_intercept: float
    cate_slope: float
    beta: np.ndarray
    gamma: np.ndarray

    def true_cate(self, x1):
        """tau(x1) = intercept + slope * x1, elementwise."""
        return self.cate_intercept + self.cate_slope * np.asarray(x1, dtype=np.float64)


def _assign_and_observe(
    x: np.ndarray, beta: np.ndarray, gamma: np.ndarray, intercept: float, rng: np.random.Generator
) -> Sample:
    n = x.shape[0]
    eps = rng.standard_normal(n)
    u = rng.uniform(size=n)
    d = (expit(x @ gamma) > u).astype(np.float64)
    y = d * (intercept + x @ beta + eps)
    return Sample.build(y, d, x, (0,))


def gen_dgp1(n: int, p: int, seed: int) -> GeneratedSample:
    """Strict-sparsity design: Y(1) = 10 + x_1 + ... + x_4 + eps, gamma_k = 0.5 for k <= 4."""
    if p < ACTIVE_TERMS:
        raise ValueError(f"strict_sparse needs p >= {ACTIVE_TERMS}, got {p}")
    rng = stream(seed, "dgp")
    x = rng.standard_normal((n, p))
    beta = np.zeros(p)
    beta[:ACTIVE_TERMS] = OUTCOME_COEF
    gamma = np.zeros(p)
    gamma[:ACTIVE_TERMS] = TREATMENT_COEF
    return GeneratedSample(
        sample=_assign_and_observe(x, beta, gamma, BASELINE_EFFECT, rng),
        cate_intercept=BASELINE_EFFECT,
        cate_slope=OUTCOME_COEF,
        beta=beta,
        gamma=gamma,
    )


def decaying_coefficients(p: int) -> np.ndarray:
    """theta_k = (1/k)^2, k = 1..p."""
    return 1.0 / np.arange(1, p + 1, dtype=np.float64) ** 2


def toeplitz_quadform(p: int) -> float:
    """theta' Sigma theta with Sigma_jk = 0.5^|j-k| and theta_k = (1/k)^2."""
    if p < 1:
        raise ValueError(f"p must be at least 1, got {p}")
    theta = decaying_coefficients(p)
    sigma = toeplitz(TOEPLITZ_RHO ** np.arange(p))
    return float(theta @ sigma @ theta)


def approx_sparse_scales(p: int, r2: float) -> tuple[float, float]:
    """
    (c_d, c_y) with

        c_d = sqrt((pi^2 / 3) R^2 / ((1 - R^2) theta' Sigma theta))
        c_y = sqrt(R^2 / ((1 - R^2) theta' Sigma theta))

    where the same R^2 is used for the treatment and the outcome equation.
    """
    if not 0.0 <= r2 < 1.0:
        raise ValueError(f"r2 must lie in [0, 1), got {r2}")
    quad = toeplitz_quadform(p)
    c_d = np.sqrt((np.pi**2 / 3.0) * r2 / ((1.0 - r2) * quad))
    c_y = np.sqrt(r2 / ((1.0 - r2) * quad))
    return float(c_d), float(c_y)


def gen_dgp2(n: int, p: int, r2: float, seed: int) -> GeneratedSample:
    """Approximate-sparsity design with decaying coefficients scaled by (c_d, c_y)."""
    if p < 2:
        raise ValueError(f"approx_sparse needs p >= 2, got {p}")
    if not 0.0 < r2 < 1.0:
        raise ValueError(f"r2 must lie in (0, 1), got {r2}")
    c_d, c_y = approx_sparse_scales(p, r2)
    theta = decaying_coefficients(p)

    rng = stream(seed, "dgp")
    x = np.empty((n, p))
    x[:, 0] = rng.standard_normal(n)
    factor = cholesky(toeplitz(TOEPLITZ_RHO ** np.arange(p - 1)), lower=True)
    x[:, 1:] = rng.standard_normal((n, p - 1)) @ factor.T

    beta = c_y * theta
    gamma = c_d * theta
    return GeneratedSample(
        sample=_assign_and_observe(x, beta, gamma, 0.0, rng),
        cate_intercept=0.0,
        cate_slope=float(beta[0]),
        beta=beta,
        gamma=gamma,
    )


def generate(spec: DgpSpec) -> GeneratedSample:
    if spec.design == "strict_sparse":
        return gen_dgp1(spec.n, spec.p, spec.seed)
    return gen_dgp2(spec.n, spec.p, spec.r2, spec.seed)

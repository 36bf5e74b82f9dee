"""
Kernel-weighted local regression of scores on the conditioning coordinates.

Kernel weights are K((X1_i - x0) / h) with a product Gaussian kernel and
per-coordinate bandwidths, i.e. the kernel is not divided by h^d; the density
estimate carries that normalization instead.
"""

from typing import Literal

import msgspec
import numpy as np

from core.errors import DataError

SecondStage = Literal["local_linear", "local_constant"]

_TINY_WEIGHT = 1e-300
_DEGENERACY_RATIO = 1e-12
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class KernelSpec(msgspec.Struct, frozen=True):
    bandwidths: tuple[float, ...]
    kind: Literal["gaussian"] = "gaussian"

    def __post_init__(self):
        if not self.bandwidths or any(not h > 0 for h in self.bandwidths):
            raise ValueError(f"bandwidths must be positive, got {self.bandwidths}")

    @property
    def dimension(self) -> int:
        return len(self.bandwidths)

    @property
    def volume(self) -> float:
        """h^d, or the product of per-coordinate bandwidths."""
        return float(np.prod(self.bandwidths))


class LocalFit(msgspec.Struct, frozen=True):
    intercept: float
    slope: np.ndarray
    effective_mass: float
    degenerate: bool = False


def gaussian_product_kernel(u: np.ndarray) -> np.ndarray | float:
    """
    Product of standard normal densities over the last axis of u.

    A 1-D input is one point of dimension len(u); stacked points go along the
    leading axes. Weights below 1e-300 are returned as exact zeros.
    """
    u = np.asarray(u, dtype=np.float64)
    if u.ndim == 0:
        u = u[None]
    weight = np.prod(_INV_SQRT_2PI * np.exp(-0.5 * u * u), axis=-1)
    weight = np.where(weight < _TINY_WEIGHT, 0.0, weight)
    return float(weight) if weight.ndim == 0 else weight


def silverman_undersmoothed(sigmas: np.ndarray, n: int, d_cond: int) -> np.ndarray:
    """
    1.06 * sigma_j * n^(-1/(4+d)) * n^(1/(4+d)) * n^(-2/(4+3d)).

    The first two factors cancel, leaving 1.06 * sigma_j * n^(-2/(4+3d)).
    """
    sigmas = np.asarray(sigmas, dtype=np.float64)
    return 1.06 * sigmas * float(n) ** (-2.0 / (4.0 + 3.0 * d_cond))


def rot_bandwidth(x1_values: np.ndarray, n: int | None = None, d_cond: int | None = None) -> np.ndarray:
    """
    Rule-of-thumb undersmoothed bandwidth per conditioning coordinate.

    Args:
        x1_values: (n,) or (n, d_cond) conditioning coordinates
        n: Sample size in the rate, defaults to the number of rows
        d_cond: Dimension in the rate, defaults to the number of columns

    Returns:
        Bandwidth vector of length d_cond

    Raises:
        DataError: If a coordinate has zero variance or fewer than 2 rows are given
    """
    x1 = np.asarray(x1_values, dtype=np.float64)
    if x1.ndim == 1:
        x1 = x1[:, None]
    if x1.shape[0] < 2:
        raise DataError("bandwidth rule needs at least 2 observations")
    n = x1.shape[0] if n is None else n
    d_cond = x1.shape[1] if d_cond is None else d_cond
    sigmas = x1.std(axis=0, ddof=1)
    if np.any(sigmas <= 0):
        raise DataError(
            f"conditioning coordinate(s) {np.flatnonzero(sigmas <= 0).tolist()} have zero variance"
        )
    return silverman_undersmoothed(sigmas, n, d_cond)


class LocalDesign:
    """
    Kernel weights of one set of rows against a set of evaluation points.

    Built once per (rows, grid, bandwidth); fit() then runs the weighted local
    regression for any response vector and multiplier vector, which is what the
    estimators and every bootstrap draw do.
    """

    def __init__(self, x1: np.ndarray, points: np.ndarray, kernel: KernelSpec):
        x1 = np.asarray(x1, dtype=np.float64)
        if x1.ndim == 1:
            x1 = x1[:, None]
        points = np.asarray(points, dtype=np.float64).reshape(-1, x1.shape[1])
        if x1.shape[1] != kernel.dimension:
            raise ValueError(
                f"kernel has dimension {kernel.dimension}, data have {x1.shape[1]}"
            )
        self.kernel = kernel
        self.rows = x1.shape[0]
        self.offsets = x1[:, None, :] - points[None, :, :]
        self.weights = gaussian_product_kernel(self.offsets / np.asarray(kernel.bandwidths))

    @property
    def size(self) -> int:
        return self.weights.shape[1]

    def density(self, n: int | None = None) -> np.ndarray:
        """(n h^d)^-1 * sum_i K((X1_i - x0) / h) at every point."""
        n = self.rows if n is None else n
        return self.weights.sum(axis=0) / (n * self.kernel.volume)

    def fit(
        self,
        responses: np.ndarray,
        multipliers: np.ndarray | None = None,
        kind: SecondStage = "local_linear",
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """
        Weighted local fit at every point with weights multiplier_i * K_h.

        Returns:
            (intercepts, slopes, effective_mass, degenerate): slopes is (points, d)
            and NaN for the local constant fit; degenerate marks points where the
            local normal matrix was singular and the local constant value was
            used instead (or NaN where even that is undefined)
        """
        responses = np.asarray(responses, dtype=np.float64)
        weighted = self.weights if multipliers is None else self.weights * np.asarray(multipliers, dtype=np.float64)[:, None]
        mass = weighted.sum(axis=0)
        moment0 = weighted.T @ responses
        dim = self.offsets.shape[2]

        with np.errstate(divide="ignore", invalid="ignore"):
            constant = np.where(mass != 0.0, moment0 / mass, np.nan)

        if kind == "local_constant":
            return constant, np.full((self.size, dim), np.nan), mass, ~np.isfinite(constant)

        first = np.einsum("ig,igj->gj", weighted, self.offsets)
        second = np.einsum("ig,igj,igk->gjk", weighted, self.offsets, self.offsets)
        moment1 = np.einsum("ig,igj,i->gj", weighted, self.offsets, responses)

        normal = np.empty((self.size, dim + 1, dim + 1))
        normal[:, 0, 0] = mass
        normal[:, 0, 1:] = first
        normal[:, 1:, 0] = first
        normal[:, 1:, 1:] = second
        rhs = np.concatenate([moment0[:, None], moment1], axis=1)

        # Multipliers may be negative, so eigenvalues and trace are taken in magnitude
        smallest = np.abs(np.linalg.eigvalsh(normal)).min(axis=1)
        trace = np.abs(np.trace(normal, axis1=1, axis2=2))
        degenerate = ~(smallest >= _DEGENERACY_RATIO * trace) | ~(trace > 0)

        intercepts = constant.copy()
        slopes = np.zeros((self.size, dim))
        ok = ~degenerate
        if ok.any():
            solution = np.linalg.solve(normal[ok], rhs[ok][:, :, None])[:, :, 0]
            intercepts[ok] = solution[:, 0]
            slopes[ok] = solution[:, 1:]
        return intercepts, slopes, mass, degenerate


def _single_point(x1, x0, kernel: KernelSpec) -> LocalDesign:
    return LocalDesign(x1, np.asarray(x0, dtype=np.float64).reshape(1, -1), kernel)


def local_linear_fit(
    x1: np.ndarray,
    responses: np.ndarray,
    multipliers: np.ndarray,
    x0: np.ndarray,
    kernel: KernelSpec,
) -> LocalFit:
    """
    argmin_(a, b) sum_i xi_i [r_i - a - (X1_i - x0)'b]^2 K_h(X1_i - x0).

    A singular local normal matrix (smallest eigenvalue magnitude below 1e-12
    times the trace magnitude) falls back to the local constant fit with slope 0 and degenerate=True.
    """
    intercepts, slopes, mass, degenerate = _single_point(x1, x0, kernel).fit(responses, multipliers)
    return LocalFit(
        intercept=float(intercepts[0]),
        slope=slopes[0],
        effective_mass=float(mass[0]),
        degenerate=bool(degenerate[0]),
    )


def local_constant_fit(
    x1: np.ndarray,
    responses: np.ndarray,
    multipliers: np.ndarray,
    x0: np.ndarray,
    kernel: KernelSpec,
) -> float:
    """
    Kernel-weighted mean of the responses at x0.

    Raises:
        DataError: If the total kernel-multiplier mass is zero
    """
    value, _, mass, _ = _single_point(x1, x0, kernel).fit(responses, multipliers, kind="local_constant")
    if mass[0] == 0.0:
        raise DataError(f"no kernel mass at {np.ravel(x0).tolist()}")
    return float(value[0])


def kernel_density(x1: np.ndarray, x0: np.ndarray, kernel: KernelSpec, n: int) -> float:
    """(n * prod(h))^-1 * sum_i K((X1_i - x0) / h)."""
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    return float(_single_point(x1, x0, kernel).density(n)[0])

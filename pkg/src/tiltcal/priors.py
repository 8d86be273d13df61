"""Prior risk models and linear changes of variables.

A Gaussian prior is the workhorse; a generic prior exposes just enough
callbacks (conditional density, sampler, quadrature rule) for the tilting
machinery to operate on non-Gaussian models such as lognormal pairs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import linalg

from .errors import SingularBlock, SingularMap

__all__ = [
    "FactorVector",
    "GaussianPrior",
    "GaussianConditional",
    "gaussian_conditional",
    "LinearViewMap",
    "transform_prior",
    "GenericPrior",
]

_SYM_TOL = 1e-12
_PD_TOL = 1e-10


@dataclass(frozen=True)
class FactorVector:
    """A point in factor space with coordinate labels."""

    values: np.ndarray
    labels: tuple[str, ...]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "labels", tuple(self.labels))
        if values.ndim != 1:
            raise ValueError("values must be a 1-D vector")
        if len(self.labels) != values.size:
            raise ValueError("labels and values must have equal length")
        if not np.all(np.isfinite(values)):
            raise ValueError("factor values must be finite")


def _as_symmetric(matrix: np.ndarray, name: str) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValueError(f"{name} must be a square matrix")
    scale = max(np.abs(matrix).max(), 1.0)
    if np.abs(matrix - matrix.T).max() > _SYM_TOL * scale:
        raise ValueError(f"{name} is not symmetric within tolerance")
    return (matrix + matrix.T) / 2.0


@dataclass(frozen=True)
class GaussianPrior:
    """Multivariate normal prior with mean vector and covariance matrix."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = _as_symmetric(self.covariance, "covariance")
        if mean.ndim != 1 or cov.shape[0] != mean.size:
            raise ValueError("mean and covariance dimensions disagree")
        if not np.all(np.isfinite(mean)) or not np.all(np.isfinite(cov)):
            raise ValueError("prior parameters must be finite")
        eigs = np.linalg.eigvalsh(cov)
        if eigs.min() < -_PD_TOL * max(eigs.max(), 1e-300):
            raise ValueError("covariance is not positive semidefinite")
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        root = _psd_root(self.covariance)
        return self.mean + rng.standard_normal((n, self.dim)) @ root.T

    def logpdf(self, z) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=float))
        try:
            chol = linalg.cholesky(self.covariance, lower=True)
        except linalg.LinAlgError as exc:
            raise SingularBlock("covariance is singular; density undefined") from exc
        dev = linalg.solve_triangular(chol, (z - self.mean).T, lower=True)
        logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        out = -0.5 * (np.sum(dev**2, axis=0) + logdet + self.dim * np.log(2.0 * np.pi))
        return out if out.size > 1 else float(out[0])

    def pdf(self, z):
        return np.exp(self.logpdf(z))


def _psd_root(cov: np.ndarray) -> np.ndarray:
    """Cholesky factor, falling back to an eigenvalue root for PSD matrices."""
    try:
        return linalg.cholesky(cov, lower=True)
    except linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(cov)
        vals = np.clip(vals, 0.0, None)
        return vecs * np.sqrt(vals)


@dataclass(frozen=True)
class GaussianConditional:
    """Affine conditional law Y | X = x  ~  N(intercept + slope x, cov)."""

    intercept: np.ndarray
    slope: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        for name in ("intercept", "slope", "cov"):
            arr = np.asarray(getattr(self, name), dtype=float).copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def mean(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.ndim == 1:
            return self.intercept + self.slope @ x
        return self.intercept + x @ self.slope.T

    @property
    def y_dim(self) -> int:
        return self.intercept.size

    @property
    def x_dim(self) -> int:
        return self.slope.shape[1]

    def shifted(self, delta: np.ndarray) -> "GaussianConditional":
        return GaussianConditional(self.intercept + delta, self.slope, self.cov)


def gaussian_conditional(prior: GaussianPrior, split: int) -> GaussianConditional:
    """Condition the last N-split coordinates on the first ``split``.

    Returns the affine conditional-mean map and the (constant) Schur
    complement covariance.  Raises SingularBlock when the X-block is not
    positive definite at relative tolerance.
    """
    n = prior.dim
    if not 0 <= split <= n:
        raise ValueError("split must lie in [0, dim]")
    cov = prior.covariance
    if split == 0:
        return GaussianConditional(
            prior.mean.copy(), np.zeros((n, 0)), cov.copy()
        )
    sxx = cov[:split, :split]
    eigs = np.linalg.eigvalsh(sxx)
    if eigs.min() <= _PD_TOL * max(eigs.max(), 1e-300):
        raise SingularBlock("X-block covariance is singular at tolerance 1e-10")
    syx = cov[split:, :split]
    syy = cov[split:, split:]
    slope = linalg.solve(sxx, syx.T, assume_a="pos").T
    schur = syy - slope @ syx.T
    schur = (schur + schur.T) / 2.0
    intercept = prior.mean[split:] - slope @ prior.mean[:split]
    return GaussianConditional(intercept, slope, schur)


@dataclass(frozen=True)
class LinearViewMap:
    """Invertible linear map V from raw factors Z to view coordinates (X, Y).

    Rows 0..k1-1 define the marginal-constrained block X; rows k1..k2-1 are
    the moment-view coordinates.
    """

    matrix: np.ndarray
    k1: int
    k2: int

    def __post_init__(self):
        matrix = np.asarray(self.matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ValueError("view map must be a square matrix")
        if not np.all(np.isfinite(matrix)):
            raise ValueError("view map entries must be finite")
        n = matrix.shape[0]
        if not 0 <= self.k1 <= self.k2 <= n:
            raise ValueError("need 0 <= k1 <= k2 <= N")
        scale = float(np.prod(np.linalg.norm(matrix, axis=1)))
        det = np.linalg.det(matrix)
        if abs(det) <= 1e-10 * max(scale, 1e-300):
            raise SingularMap("view map is singular at tolerance")
        matrix.setflags(write=False)
        object.__setattr__(self, "matrix", matrix)

    @classmethod
    def identity(cls, n: int, k1: int, k2: int) -> "LinearViewMap":
        return cls(np.eye(n), k1, k2)

    @classmethod
    def from_permutation(cls, order: Sequence[int], k1: int, k2: int) -> "LinearViewMap":
        """Map placing raw coordinate order[i] at view coordinate i."""
        n = len(order)
        if sorted(order) != list(range(n)):
            raise ValueError("order must be a permutation of 0..N-1")
        return cls(np.eye(n)[list(order)], k1, k2)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def jacobian(self) -> float:
        """Constant |det V| of the change of variables."""
        return float(abs(np.linalg.det(self.matrix)))

    def inverse_matrix(self) -> np.ndarray:
        return np.linalg.inv(self.matrix)

    def apply(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return z @ self.matrix.T if z.ndim > 1 else self.matrix @ z

    def invert(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        sol = np.linalg.solve(self.matrix, u.T if u.ndim > 1 else u)
        return sol.T if u.ndim > 1 else sol


def transform_prior(prior: GaussianPrior, view_map: LinearViewMap) -> GaussianPrior:
    """Exact law of V Z for a Gaussian Z: N(V mu, V Sigma V^T)."""
    v = view_map.matrix
    if v.shape[0] != prior.dim:
        raise ValueError("view map and prior dimensions disagree")
    return GaussianPrior(v @ prior.mean, v @ prior.covariance @ v.T)


@dataclass(frozen=True)
class GenericPrior:
    """Prior specified by evaluators instead of a parametric family.

    All callbacks are batched over x: ``conditional_density(y, x)`` takes
    matching leading shapes, ``conditional_sampler(x, rng)`` returns one y
    per x row, and ``conditional_quadrature(x, n)`` returns nodes of shape
    (len(x), n, y_dim) with weights (len(x), n) integrating functions of y
    against f(y | x).  Evaluators must be pure given their inputs and the
    explicitly passed generator.
    """

    x_dim: int
    y_dim: int
    joint_density: Callable | None = None
    conditional_density: Callable | None = None
    conditional_sampler: Callable | None = None
    conditional_quadrature: Callable | None = None
    label: str = field(default="generic")

    @property
    def dim(self) -> int:
        return self.x_dim + self.y_dim

"""Closed-form posterior for Gaussian priors with a marginal view on X.

With a Gaussian prior (after the linear change of variables), a density
view g on the X block and mean targets on Y coordinates, the calibrated
model is g(x) times a Gaussian conditional whose covariance is the prior
Schur complement and whose mean is the prior conditional mean shifted so
the targeted coordinates average to their targets under g.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, linalg

from .densities import MarginalDensity
from .errors import QuadratureFailure, SingularConditionalCovariance
from .priors import (
    GaussianConditional,
    GaussianPrior,
    LinearViewMap,
    gaussian_conditional,
    transform_prior,
)
from .views import ViewSet

__all__ = [
    "GaussianMarginalPosterior",
    "build_posterior",
    "posterior_density_z",
    "posterior_marginal_linear",
    "posterior_marginal_y1",
]

_PD_TOL = 1e-10


@dataclass(frozen=True)
class GaussianMarginalPosterior:
    """Calibrated Gaussian-conditional model in view coordinates.

    ``conditional`` is the posterior law of Y given X = x; ``marginal`` is
    the density view on X (None when there is no marginal block) and
    ``view_map`` carries the posterior back to original factor coordinates.
    """

    view_map: LinearViewMap
    marginal: MarginalDensity | None
    conditional: GaussianConditional
    lam: np.ndarray
    moment_coords: tuple[int, ...]
    prior_t: GaussianPrior = field(repr=False)

    @property
    def cond_mean(self) -> GaussianConditional:
        return self.conditional

    @property
    def cond_cov(self) -> np.ndarray:
        return self.conditional.cov

    @property
    def k1(self) -> int:
        return self.view_map.k1

    @property
    def e_g_x(self) -> np.ndarray:
        if self.marginal is None:
            return np.zeros(0)
        return np.atleast_1d(np.asarray(self.marginal.mean(), dtype=float))

    def y_mean(self) -> np.ndarray:
        """Posterior mean of the Y block; equals the targets on viewed coords."""
        return self.conditional.mean(self.e_g_x)

    def z_mean(self) -> np.ndarray:
        """Posterior mean in original factor coordinates."""
        u = np.concatenate([self.e_g_x, self.y_mean()])
        return self.view_map.invert(u)

    def sample_xy(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draws of (X, Y) in view coordinates: X ~ g, then Y | X."""
        k1 = self.k1
        cond = self.conditional
        if k1 > 0:
            x = np.atleast_2d(self.marginal.sample(n, rng)).reshape(n, k1)
        else:
            x = np.zeros((n, 0))
        root = _chol_psd(cond.cov)
        y = cond.mean(x) + rng.standard_normal((n, cond.y_dim)) @ root.T
        return np.column_stack([x, y])


def _chol_psd(cov: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(cov)
        return vecs * np.sqrt(np.clip(vals, 0.0, None))


def build_posterior(prior: GaussianPrior, views: ViewSet) -> GaussianMarginalPosterior:
    """Construct the closed-form posterior for coordinate mean views.

    The targeted Y coordinates hit their targets exactly by construction;
    untargeted coordinates shift through their conditional covariance with
    the targeted ones.
    """
    if not views.is_coordinate_linear:
        raise ValueError("closed-form posterior requires coordinate moment views")
    prior_t = transform_prior(prior, views.view_map)
    cond = gaussian_conditional(prior_t, views.k1)
    coords = np.array(views.moment_coords, dtype=int)
    if views.k1 > 0:
        e_g_x = np.atleast_1d(np.asarray(views.marginal.mean(), dtype=float))
    else:
        e_g_x = np.zeros(0)
    if coords.size:
        schur_mm = cond.cov[np.ix_(coords, coords)]
        eigs = np.linalg.eigvalsh(schur_mm)
        if eigs.min() <= _PD_TOL * max(eigs.max(), 1e-300):
            raise SingularConditionalCovariance(
                "conditional covariance of the viewed coordinates is singular"
            )
        m_g = cond.mean(e_g_x)[coords]
        lam = linalg.solve(schur_mm, views.targets - m_g, assume_a="pos")
        shift = cond.cov[:, coords] @ lam
    else:
        lam = np.zeros(0)
        shift = np.zeros(cond.y_dim)
    return GaussianMarginalPosterior(
        view_map=views.view_map,
        marginal=views.marginal,
        conditional=cond.shifted(shift),
        lam=lam,
        moment_coords=tuple(int(c) for c in coords),
        prior_t=prior_t,
    )


def posterior_density_z(post: GaussianMarginalPosterior, z,
                        log: bool = False) -> float | np.ndarray:
    """Posterior density at original factor coordinates, Jacobian included.

    With ``log=True`` returns the log density (useful deep in the tails).
    """
    if hasattr(z, "values") and hasattr(z, "labels"):
        z = z.values
    z = np.asarray(z, dtype=float)
    scalar = z.ndim == 1
    pts = np.atleast_2d(z)
    u = pts @ post.view_map.matrix.T
    k1 = post.k1
    x, y = u[:, :k1], u[:, k1:]
    out = np.full(pts.shape[0], np.log(post.view_map.jacobian))
    if k1 > 0:
        out = out + np.asarray(
            post.marginal.logpdf(x[:, 0] if k1 == 1 else x), dtype=float
        )
    cond = post.conditional
    if cond.y_dim > 0:
        dev = y - cond.mean(x)
        chol = _chol_psd(cond.cov + 1e-300 * np.eye(cond.y_dim))
        sol = linalg.solve_triangular(chol, dev.T, lower=True)
        logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        out = out - 0.5 * (
            np.sum(sol**2, axis=0) + logdet + cond.y_dim * np.log(2.0 * np.pi)
        )
    if not log:
        out = np.exp(out)
    return float(out[0]) if scalar else out


def posterior_marginal_linear(post: GaussianMarginalPosterior, weights_z, s,
                              rel_tol: float = 1e-6) -> float | np.ndarray:
    """Posterior marginal density of the linear combination w . Z at s.

    Conditional on X = x the combination is Gaussian with an affine mean
    in x, so the marginal is a one-dimensional mixture integral over g.
    Evaluated by adaptive quadrature; exact in the degenerate cases (no
    x dependence, or a combination lying in the X block).
    """
    w = np.asarray(weights_z, dtype=float)
    c = np.linalg.solve(post.view_map.matrix.T, w)
    return _marginal_from_view_weights(post, c, s, rel_tol)


def posterior_marginal_y1(post: GaussianMarginalPosterior, s, coord: int = 0,
                          rel_tol: float = 1e-6) -> float | np.ndarray:
    """Posterior marginal density of the Y-block coordinate ``coord``."""
    c = np.zeros(post.view_map.n)
    c[post.k1 + coord] = 1.0
    return _marginal_from_view_weights(post, c, s, rel_tol)


def _marginal_from_view_weights(post: GaussianMarginalPosterior, c: np.ndarray, s,
                                rel_tol: float) -> float | np.ndarray:
    k1 = post.k1
    cond = post.conditional
    cx, cy = c[:k1], c[k1:]
    var = float(cy @ cond.cov @ cy)
    beta = float(cy @ cond.intercept)
    s_arr = np.atleast_1d(np.asarray(s, dtype=float))

    if k1 == 0:
        out = _normal_pdf(s_arr, beta, var)
        return _match_shape(out, s)
    if k1 != 1:
        raise ValueError("marginal evaluation requires a one-dimensional X block")

    alpha = float(cx[0] + cy @ cond.slope[:, 0])
    g = post.marginal
    scale = np.sqrt(max(g.var(), 0.0)) if np.isfinite(g.var()) else 1.0

    if abs(alpha) < 1e-14 * max(1.0, abs(beta)):
        out = _normal_pdf(s_arr, beta, var)
        return _match_shape(out, s)
    if var <= 1e-14 * (alpha * scale) ** 2:
        # combination is an affine image of X alone
        out = g.pdf((s_arr - beta) / alpha) / abs(alpha)
        return _match_shape(out, s)

    sd = np.sqrt(var)
    lo, hi = g.support()
    out = np.empty_like(s_arr)
    for idx, sv in enumerate(s_arr):
        center = (sv - beta) / alpha
        half = 10.0 * sd / abs(alpha)
        a = min(lo, center - half)
        b = max(hi, center + half)
        pts = sorted(
            p for p in (lo, hi, center - half, center, center + half) if a < p < b
        )

        def integrand(x, sv=sv):
            return _normal_pdf(sv, beta + alpha * x, var) * g.pdf(x)

        val, err = integrate.quad(
            integrand, a, b, points=pts, limit=500, epsabs=0.0, epsrel=rel_tol
        )
        if not np.isfinite(val) or (val > 0 and err > 100 * rel_tol * val):
            raise QuadratureFailure(
                f"marginal quadrature did not reach relative error {rel_tol} at s={sv}"
            )
        out[idx] = val
    return _match_shape(out, s)


def _normal_pdf(x, mean: float, var: float):
    if var <= 0:
        raise QuadratureFailure("degenerate conditional variance in marginal evaluation")
    z = (np.asarray(x, dtype=float) - mean) ** 2 / var
    return np.exp(-0.5 * z) / np.sqrt(2.0 * np.pi * var)


def _match_shape(out: np.ndarray, s):
    return float(out[0]) if np.ndim(s) == 0 else out

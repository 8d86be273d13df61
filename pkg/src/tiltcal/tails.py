"""Tail admissibility checks and the posterior tail-ratio probe.

When the marginal view g is regularly varying with index alpha and the
viewed portfolio X has nonzero prior covariance with a coordinate Y_i, the
posterior marginal of Y_i inherits the power tail:

    f_post_Yi(s) / g(s)  ->  (sigma_xy / sigma_xx)^(alpha - 1)   as s -> inf.

The probe evaluates that ratio on a geometric schedule of tail points and
reports convergence to the theoretical limit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .analytic import GaussianMarginalPosterior, posterior_marginal_y1
from .densities import GaussianDensity, GridDensity, MarginalDensity, StudentTDensity
from .errors import ZeroCorrelation

__all__ = ["TailReport", "check_assumption", "tail_ratio_probe"]


@dataclass(frozen=True)
class TailReport:
    """Measured posterior/view tail ratios against the theoretical limit."""

    alpha: float
    target_ratio: float
    probe_points: np.ndarray
    measured_ratios: np.ndarray
    converged: bool


def check_assumption(g: MarginalDensity) -> str:
    """Classify a marginal view for regular variation.

    Student-t densities are regularly varying with tail index df + 1 and
    satisfy the dominating-function bound; Gaussian tails decay faster than
    any power (inadmissible); a finite grid cannot certify a tail law.
    """
    if isinstance(g, StudentTDensity):
        return "admissible"
    if isinstance(g, GaussianDensity):
        return "inadmissible"
    if isinstance(g, GridDensity):
        return "unknown"
    return "unknown"


def tail_ratio_probe(post: GaussianMarginalPosterior, coord: int = 0,
                     s_max: float | None = None, n_points: int = 10,
                     rel_band: float = 0.05) -> TailReport:
    """Probe convergence of the posterior Y-coordinate tail to its limit.

    Points follow the geometric schedule loc + scale * 2^j, j = 2, 3, ...
    (n_points of them, capped at s_max when given).  Requires a scalar X
    block, an admissible marginal view, and positive prior covariance
    between X and the probed coordinate.
    """
    if post.k1 != 1:
        raise ValueError("tail analysis is defined for a scalar X block only")
    g = post.marginal
    status = check_assumption(g)
    if status != "admissible":
        raise ValueError(f"marginal view is {status}; tail index unavailable")
    alpha = float(g.tail_index)
    cov_t = post.prior_t.covariance
    sigma_xx = float(cov_t[0, 0])
    sigma_xy = float(cov_t[0, 1 + coord])
    if abs(sigma_xy) <= 1e-14 * np.sqrt(sigma_xx * cov_t[1 + coord, 1 + coord]):
        raise ZeroCorrelation(
            "probed coordinate has zero prior covariance with the viewed block"
        )
    if sigma_xy < 0:
        raise ValueError("tail probe requires positive covariance with the viewed block")
    target = float((sigma_xy / sigma_xx) ** (alpha - 1.0))

    loc, scale = float(g.loc), float(g.scale)
    exponents = np.arange(2, 2 + n_points)
    points = loc + scale * 2.0 ** exponents
    if s_max is not None:
        points = points[points <= s_max]
        if points.size == 0:
            raise ValueError("s_max excludes every probe point")
    measured = np.empty(points.size)
    for i, s in enumerate(points):
        f_post = posterior_marginal_y1(post, float(s), coord=coord)
        measured[i] = f_post / float(g.pdf(s))
    converged = bool(abs(measured[-1] / target - 1.0) <= rel_band)
    return TailReport(alpha, target, points, measured, converged)

"""Posterior sampling, value-at-risk estimation and option pricing.

Sampling follows the posterior's product structure: draw X from the
marginal view by inverse CDF, then Y from the (tilted) conditional.
Generation is partitioned into independently seeded streams so chunked or
parallel generation reproduces the same batch for a given seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .analytic import GaussianMarginalPosterior
from .calibration import GaussianLinearProblem, QuadratureProblem, TiltedPosterior
from .errors import (
    InsufficientSamples,
    NonIntegrablePayoff,
    NonSampleableConditional,
)
from .priors import GenericPrior

__all__ = [
    "SampleBatch",
    "sample_posterior",
    "VarReport",
    "estimate_var",
    "PriceReport",
    "price_option",
]

_CHUNK = 1 << 16


@dataclass(frozen=True)
class SampleBatch:
    """Posterior draws in original factor coordinates.

    ``weights`` is None for exact draws and a mean-one nonnegative vector
    for importance-sampled generic posteriors.
    """

    z_samples: np.ndarray
    seed: int
    weights: np.ndarray | None = None

    def __post_init__(self):
        z = np.asarray(self.z_samples, dtype=float)
        object.__setattr__(self, "z_samples", z)
        if not np.all(np.isfinite(z)):
            raise ValueError("samples must be finite")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (z.shape[0],) or np.any(w < 0):
                raise ValueError("weights must be nonnegative, one per sample")
            if abs(w.mean() - 1.0) > 1e-12:
                raise ValueError("weights must be mean-normalized to 1")
            object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.z_samples.shape[0]


def _stream_rngs(seed: int, n: int):
    """Independently seeded generator per fixed-size chunk.

    Every stream always generates a full chunk (callers truncate), so the
    first m samples are identical for any two runs with n >= m and the
    chunks can be generated in parallel or serially with the same result.
    """
    n_chunks = max((n + _CHUNK - 1) // _CHUNK, 1)
    children = np.random.SeedSequence(seed).spawn(n_chunks)
    return [(np.random.default_rng(c), _CHUNK) for c in children]


def sample_posterior(post, n: int, seed: int = 0, *, n_y: int = 64) -> SampleBatch:
    """Draw ``n`` posterior samples, mapped back to original coordinates.

    Gaussian-conditional posteriors are sampled exactly; generic tilted
    posteriors are importance-sampled from the prior conditional with
    weights exp(lam . h - log Z(x)), reported in the batch.
    """
    if isinstance(post, TiltedPosterior) and isinstance(post.problem, GaussianLinearProblem):
        post = _as_gaussian_posterior(post)
    if isinstance(post, GaussianMarginalPosterior):
        chunks = []
        vinv_needed = not np.allclose(post.view_map.matrix, np.eye(post.view_map.n))
        for rng, m in _stream_rngs(seed, n):
            xy = post.sample_xy(m, rng)
            chunks.append(post.view_map.invert(xy) if vinv_needed else xy)
        return SampleBatch(np.vstack(chunks)[:n], seed)
    if isinstance(post, TiltedPosterior):
        return _sample_generic(post, n, seed, n_y)
    raise TypeError(f"unsupported posterior type {type(post).__name__}")


def _as_gaussian_posterior(post: TiltedPosterior) -> GaussianMarginalPosterior:
    problem: GaussianLinearProblem = post.problem
    shift = problem.conditional_shift(post.lam)
    return GaussianMarginalPosterior(
        view_map=post.views.view_map,
        marginal=post.views.marginal,
        conditional=problem.conditional.shifted(shift),
        lam=post.lam,
        moment_coords=tuple(problem.coords.tolist()),
        prior_t=problem.prior_t,
    )


def _gaussian_callbacks(post: TiltedPosterior):
    """Conditional sampler + quadrature rule for a Gaussian prior."""
    from scipy.special import roots_hermite

    from .priors import gaussian_conditional, transform_prior

    views = post.views
    prior_t = transform_prior(post.prior, views.view_map)
    cond = gaussian_conditional(prior_t, views.k1)
    root = np.linalg.cholesky(cond.cov + 1e-15 * np.eye(cond.y_dim))

    def sampler(x, rng):
        return cond.mean(x) + rng.standard_normal((x.shape[0], cond.y_dim)) @ root.T

    def quadrature(x, n):
        t, w = roots_hermite(n)
        mean = cond.mean(x)
        offsets = np.sqrt(2.0) * np.outer(t, root[:, 0]) if cond.y_dim == 1 else None
        if cond.y_dim != 1:
            raise NonSampleableConditional(
                "importance sampling of payoff-calibrated Gaussian posteriors "
                "supports one conditional dimension"
            )
        nodes = mean[:, None, :] + offsets[None, :, :]
        weights = np.broadcast_to(w / np.sqrt(np.pi), nodes.shape[:2])
        return nodes, weights

    return sampler, quadrature


def _sample_generic(post: TiltedPosterior, n: int, seed: int, n_y: int) -> SampleBatch:
    prior = post.prior
    if isinstance(prior, GenericPrior):
        if prior.conditional_sampler is None or prior.conditional_quadrature is None:
            raise NonSampleableConditional(
                "generic posterior sampling needs conditional_sampler and "
                "conditional_quadrature (for the normalizer)"
            )
        sampler = prior.conditional_sampler
        quadrature = prior.conditional_quadrature
    else:
        sampler, quadrature = _gaussian_callbacks(post)
    views = post.views
    chunks, logw = [], []
    for rng, m in _stream_rngs(seed, n):
        if views.k1 > 0:
            x = np.atleast_2d(views.marginal.sample(m, rng)).reshape(m, views.k1)
        else:
            x = np.zeros((m, 0))
        y = np.asarray(sampler(x, rng), dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        h = np.column_stack(
            [
                y[:, v.coord] if v.coord is not None else np.asarray(v.payoff(x, y), float)
                for v in views.moments
            ]
        )
        nodes, weights = quadrature(x, n_y)
        nodes = np.asarray(nodes, dtype=float)
        if nodes.ndim == 2:
            nodes = nodes[:, :, None]
        h_nodes = np.stack(
            [
                nodes[..., v.coord] if v.coord is not None
                else np.asarray(v.payoff(x[:, None, :], nodes), float)
                for v in views.moments
            ]
        )
        tilt = np.einsum("k,knj->nj", post.lam, h_nodes)
        with np.errstate(divide="ignore"):
            log_z = _logsumexp(np.log(np.asarray(weights, float)) + tilt)
        logw.append(h @ post.lam - log_z)
        chunks.append(np.column_stack([x, y]))
    log_weights = np.concatenate(logw)
    w = np.exp(log_weights - log_weights.max())
    w = w / w.mean()
    samples = np.vstack(chunks)[:n]
    w = w[:n]
    w = w / w.mean()
    samples_vmap = views.view_map
    if not np.allclose(samples_vmap.matrix, np.eye(samples_vmap.n)):
        samples = samples_vmap.invert(samples)
    return SampleBatch(samples, seed, weights=w)


def _logsumexp(a: np.ndarray) -> np.ndarray:
    m = np.max(a, axis=1, keepdims=True)
    return (m + np.log(np.sum(np.exp(a - m), axis=1, keepdims=True)))[:, 0]


@dataclass(frozen=True)
class VarReport:
    """Value-at-risk profile with bootstrap standard errors."""

    levels: tuple[float, ...]
    var_values: np.ndarray
    notional: float
    n_samples: int
    std_errors: np.ndarray

    def as_rows(self):
        return list(zip(self.levels, self.var_values, self.std_errors))


def _weighted_quantile(values: np.ndarray, q, weights: np.ndarray | None):
    q = np.atleast_1d(np.asarray(q, dtype=float))
    if weights is None:
        return np.quantile(values, q)
    order = np.argsort(values)
    v = values[order]
    w = weights[order]
    cum = np.cumsum(w) - 0.5 * w
    cum /= w.sum()
    return np.interp(q, cum, v)


def estimate_var(batch: SampleBatch, portfolio_weights, notional: float,
                 levels, *, n_boot: int = 200, boot_seed: int = 7) -> VarReport:
    """Value-at-risk of a portfolio from a posterior sample batch.

    The reported figure at confidence q is the upper q-quantile of the
    portfolio return distribution times the notional, a positive amount for
    any level above the return median.  Standard errors come from ``n_boot``
    bootstrap resamples of the batch.
    """
    w = np.asarray(portfolio_weights, dtype=float)
    if w.size != batch.z_samples.shape[1]:
        raise ValueError("portfolio weights length must match factor count")
    levels = tuple(float(q) for q in levels)
    if any(not 0.0 < q < 1.0 for q in levels):
        raise ValueError("levels must lie in (0, 1)")
    n = batch.n
    worst = min(n * (1.0 - q) for q in levels)
    if worst < 20:
        raise InsufficientSamples(
            f"only {worst:.1f} expected tail samples beyond the extreme level; need >= 20"
        )
    returns = batch.z_samples @ w
    q_arr = np.array(levels)
    var_values = _weighted_quantile(returns, q_arr, batch.weights) * notional
    rng = np.random.default_rng(boot_seed)
    boot = np.empty((n_boot, q_arr.size))
    for b in range(n_boot):
        idx = rng.integers(0, n, n)
        bw = None if batch.weights is None else batch.weights[idx]
        boot[b] = _weighted_quantile(returns[idx], q_arr, bw)
    std_errors = boot.std(axis=0, ddof=1) * notional
    return VarReport(levels, var_values, float(notional), n, std_errors)


@dataclass(frozen=True)
class PriceReport:
    """Discounted posterior expectation of a payoff."""

    price: float
    std_error: float | None
    method: str


def price_option(post, payoff, discount: float, *, n_samples: int = 200_000,
                 seed: int = 0) -> PriceReport:
    """Price a payoff under the calibrated model.

    ``payoff(x, y)`` is vectorized over view coordinates.  Quadrature-backed
    posteriors are priced on their node tensors; Gaussian-conditional
    posteriors by Monte Carlo with a standard error.
    """
    if isinstance(post, TiltedPosterior) and isinstance(post.problem, QuadratureProblem):
        problem: QuadratureProblem = post.problem
        values = np.asarray(
            payoff(problem.x_nodes[:, None, :], problem.y_nodes), dtype=float
        )
        values = np.broadcast_to(values, problem.y_nodes.shape[:-1])
        if not np.all(np.isfinite(values)):
            raise NonIntegrablePayoff("payoff is not finite on the posterior support")
        price = np.exp(-discount) * problem.expectation(post.lam, values)
        if not np.isfinite(price):
            raise NonIntegrablePayoff("payoff expectation diverges under the posterior")
        return PriceReport(float(price), None, "quadrature")

    if isinstance(post, TiltedPosterior) and isinstance(post.problem, GaussianLinearProblem):
        post = _as_gaussian_posterior(post)
    if not isinstance(post, GaussianMarginalPosterior):
        raise TypeError(f"unsupported posterior type {type(post).__name__}")
    k1 = post.k1
    sums, sq_sums = [], []
    count = 0
    for rng, m in _stream_rngs(seed, n_samples):
        take = min(m, n_samples - count)
        xy = post.sample_xy(m, rng)[:take]
        vals = np.asarray(payoff(xy[:, :k1], xy[:, k1:]), dtype=float)
        if not np.all(np.isfinite(vals)):
            raise NonIntegrablePayoff("payoff is not finite on sampled support")
        sums.append(float(vals.sum()))
        sq_sums.append(float((vals**2).sum()))
        count += take
    # per-stream subtotals reduce via compensated summation, so the result
    # is independent of chunk evaluation order
    mean = math.fsum(sums) / count
    var = max(math.fsum(sq_sums) / count - mean**2, 0.0)
    disc = np.exp(-discount)
    return PriceReport(disc * mean, disc * np.sqrt(var / count), "monte-carlo")

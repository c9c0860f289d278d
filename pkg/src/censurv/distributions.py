"""Discretised Gaussian event-time distribution on the month grid.

All densities are handled as log-probabilities normalised with log-sum-exp;
``mu`` may be a scalar or an array of per-sample centres, in which case the
outputs gain a leading sample axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from .core import TimeGrid

DEFAULT_SIGMA = 12.0


def logsumexp_rows(a: np.ndarray) -> np.ndarray:
    """``log sum exp`` over the last axis; rows that are all ``-inf`` give ``-inf``."""
    m = np.max(a, axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return np.log(np.sum(np.exp(a - m), axis=-1)) + m[..., 0]


@dataclass(frozen=True)
class DiscGaussParams:
    mu: float
    sigma: float = DEFAULT_SIGMA

    def __post_init__(self):
        _check_sigma(self.sigma)


def _check_sigma(sigma):
    if not np.all(np.asarray(sigma) > 0):
        raise ValueError(f"sigma must be positive, got {sigma!r}")


def _unpack(params, grid):
    mu = np.asarray(params.mu, dtype=float)
    _check_sigma(params.sigma)
    t = grid.times.astype(float)
    return mu[..., None], float(params.sigma), t


def disc_gauss_log_pmf(params: DiscGaussParams, grid: TimeGrid) -> np.ndarray:
    """Log-probabilities ``log p(t)`` for ``t = 1..t_max``; shape ``mu.shape + (t_max,)``."""
    mu, sigma, t = _unpack(params, grid)
    # exponent relative to the nearest grid point, factored to avoid cancellation:
    # (t - mu)^2 - (t0 - mu)^2 = (t - t0)(t + t0 - 2 mu)
    t0 = np.clip(np.rint(mu), 1.0, float(grid.t_max))
    z = -(t - t0) * ((t + t0) - 2.0 * mu) / (2.0 * sigma ** 2)
    return z - logsumexp_rows(z)[..., None]


def disc_gauss_pmf(params: DiscGaussParams, grid: TimeGrid) -> np.ndarray:
    return np.exp(disc_gauss_log_pmf(params, grid))


def disc_gauss_dlogpmf_dmu(params: DiscGaussParams, grid: TimeGrid,
                           log_pmf: np.ndarray | None = None) -> np.ndarray:
    """Entrywise derivative of :func:`disc_gauss_log_pmf` with respect to ``mu``.

    ``d log p(t) / d mu = (t - mu)/sigma^2 - E_p[(T - mu)/sigma^2]``. Pass a
    precomputed ``log_pmf`` to skip recomputing it.
    """
    mu, sigma, t = _unpack(params, grid)
    if log_pmf is None:
        log_pmf = disc_gauss_log_pmf(params, grid)
    p = np.exp(log_pmf)
    score = (t - mu) / sigma ** 2
    return score - np.sum(p * score, axis=-1, keepdims=True)


def pmf_to_cdf(pmf) -> np.ndarray:
    """Cumulative sums along the last axis, with the final entry pinned to 1."""
    cdf = np.cumsum(np.asarray(pmf, dtype=float), axis=-1)
    # guard against round-off drift in the last entry
    cdf[..., -1] = 1.0
    return cdf


def pmf_mean(pmf) -> np.ndarray | float:
    pmf = np.asarray(pmf, dtype=float)
    t = np.arange(1, pmf.shape[-1] + 1)
    out = pmf @ t
    return float(out) if out.ndim == 0 else out


def pmf_mode(pmf) -> np.ndarray | int:
    """Most probable month (smallest one on ties)."""
    out = np.argmax(np.asarray(pmf), axis=-1) + 1
    return int(out) if np.ndim(out) == 0 else out


def sample_event(pmf, rng: np.random.Generator) -> np.ndarray | int:
    """Inverse-CDF draw of one month per pmf row, one uniform per row."""
    pmf = np.asarray(pmf, dtype=float)
    cdf = np.cumsum(pmf, axis=-1)
    u = rng.random(pmf.shape[:-1])
    t_max = pmf.shape[-1]
    # smallest t with F(t) > u; clip covers cdf[-1] <= u by round-off
    idx = np.sum(cdf <= np.asarray(u)[..., None], axis=-1)
    out = np.minimum(idx, t_max - 1) + 1
    return int(out) if np.ndim(out) == 0 else out

"""Censored log-likelihood objectives over discrete event-time distributions.

Every objective here takes a per-sample log-pmf matrix of shape ``(n, t_max)``
and returns a :class:`LossReport` whose ``grad`` is the derivative of the
batch value with respect to that matrix. :func:`chain_mu` and
:func:`chain_logits` carry the gradient on to the model head.

Each sample's term is the log of a weighted sum ``sum_t w(t) p(t)`` over the
event times compatible with its observation, so all of them share one
log-sum-exp kernel (:func:`_weighted_log_mass`).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_softmax

from .core import CensoringStatus as S
from .distributions import logsumexp_rows, pmf_to_cdf

log = logging.getLogger(__name__)

MASS_FLOOR = 1e-300
LOG_MASS_FLOOR = float(np.log(MASS_FLOOR))
DEFAULT_RANK_SCALE = 0.1

# interval weights: "mechanism" matches c1 ~ U{1..t-1}, c2 ~ U{t+1..t_max};
# "printed" is the alternative 1/(t (t_max - t)) form
INTERVAL_WEIGHTS = ("mechanism", "printed")


@dataclass
class LossReport:
    """Batch value plus gradient.

    ``grad`` is with respect to whatever the producing function documents
    (log-pmf matrix, head outputs or risk scores). ``flagged`` lists samples
    whose compatible mass was floored at ``MASS_FLOOR``; ``skipped`` marks an
    undefined objective (e.g. a Cox pool with no events).
    """

    value: float
    grad: np.ndarray
    flagged: tuple[int, ...] = ()
    skipped: bool = False
    n_terms: int = 0
    extra: dict = field(default_factory=dict)


# --- per-sample log-weights ------------------------------------------------

def _t_row(t_max):
    return np.arange(1, t_max + 1)


def _centime_right_logw(c, t_max):
    t = _t_row(t_max)
    with np.errstate(divide="ignore"):
        return np.where(t > c, -np.log(np.maximum(t - 1, 1)), -np.inf)


def _classical_right_logw(c, t_max, full):
    t = _t_row(t_max)
    return np.where(t > c, -np.log(t_max) if full else 0.0, -np.inf)


def _centime_left_logw(c, t_max):
    t = _t_row(t_max)
    return np.where(t < c, -np.log(np.maximum(t_max - t, 1)), -np.inf)


def _centime_interval_logw(c1, c2, t_max, weights):
    if weights not in INTERVAL_WEIGHTS:
        raise ValueError(f"interval weights must be one of {INTERVAL_WEIGHTS}")
    t = _t_row(t_max)
    lower = t - 1 if weights == "mechanism" else t
    inside = (t > c1) & (t < c2)
    return np.where(inside, -np.log(np.maximum(lower, 1)) - np.log(np.maximum(t_max - t, 1)),
                    -np.inf)


def _point_logw(t_obs, t_max, full=False):
    t = _t_row(t_max)
    const = np.log(t_max - t_obs + 1) - np.log(t_max) if full else 0.0
    return np.where(t == t_obs, const, -np.inf)


def _weighted_log_mass(log_pmf, log_w):
    """Row-wise ``log sum_t exp(log_pmf + log_w)`` with floor, and responsibilities."""
    a = np.asarray(log_pmf, dtype=float) + log_w
    val = logsumexp_rows(a)
    floored = ~(val > LOG_MASS_FLOOR)
    safe = np.where(floored, 0.0, val)
    with np.errstate(invalid="ignore"):
        resp = np.where(floored[..., None], 0.0, np.exp(a - safe[..., None]))
    return np.where(floored, LOG_MASS_FLOOR, val), resp, floored


def _scalar(log_pmf, log_w):
    val, _, floored = _weighted_log_mass(log_pmf, log_w)
    if floored:
        log.debug("compatible mass below %g; floored", MASS_FLOOR)
    return float(val)


def _log_pmf_1d(log_pmf):
    log_pmf = np.asarray(log_pmf, dtype=float)
    if log_pmf.ndim != 1:
        raise ValueError("expected a single log-pmf vector")
    return log_pmf, log_pmf.shape[0]


# --- per-sample terms ------------------------------------------------------

def centime_right_censored_ll(log_pmf, c: int) -> float:
    """``log sum_{t=c+1}^{t_max} p(t) / (t - 1)``."""
    log_pmf, t_max = _log_pmf_1d(log_pmf)
    if not 1 <= c <= t_max - 1:
        raise ValueError(f"right-censoring time must lie in 1..{t_max - 1}, got {c}")
    return _scalar(log_pmf, _centime_right_logw(c, t_max))


def classical_right_censored_ll(log_pmf, c: int, full: bool = False) -> float:
    """Log survival mass ``log sum_{t>c} p(t)``; ``full`` adds the ``-log t_max`` constant."""
    log_pmf, t_max = _log_pmf_1d(log_pmf)
    if not 1 <= c <= t_max - 1:
        raise ValueError(f"right-censoring time must lie in 1..{t_max - 1}, got {c}")
    return _scalar(log_pmf, _classical_right_logw(c, t_max, full))


def classical_uncensored_ll(log_pmf, t: int, full: bool = True) -> float:
    """``log p(t) + log((t_max - t + 1)/t_max)``, or plain ``log p(t)`` when not ``full``."""
    log_pmf, t_max = _log_pmf_1d(log_pmf)
    if not 1 <= t <= t_max:
        raise ValueError(f"event time must lie in 1..{t_max}, got {t}")
    if not full:
        return float(log_pmf[t - 1])
    return float(log_pmf[t - 1] + np.log(t_max - t + 1) - np.log(t_max))


def centime_left_censored_ll(log_pmf, c: int) -> float:
    """``log sum_{t=1}^{c-1} p(t) / (t_max - t)``."""
    log_pmf, t_max = _log_pmf_1d(log_pmf)
    if not 2 <= c <= t_max:
        raise ValueError(f"left-censoring time must lie in 2..{t_max}, got {c}")
    return _scalar(log_pmf, _centime_left_logw(c, t_max))


def centime_interval_censored_ll(log_pmf, c1: int, c2: int,
                                 weights: str = "mechanism") -> float:
    """Log mass of events strictly between ``c1`` and ``c2``.

    With ``weights="mechanism"`` each ``t`` is weighted ``1/((t-1)(t_max-t))``,
    the exact law of drawing ``c1`` uniformly below ``t`` and ``c2`` uniformly
    above it. ``weights="printed"`` uses ``1/(t (t_max - t))`` instead.
    """
    log_pmf, t_max = _log_pmf_1d(log_pmf)
    if not (1 <= c1 and c1 + 2 <= c2 <= t_max):
        raise ValueError(f"interval ({c1}, {c2}) contains no event time on 1..{t_max}")
    return _scalar(log_pmf, _centime_interval_logw(c1, c2, t_max, weights))


# --- batch objectives ------------------------------------------------------

def _batch_log_weights(ds, mode, interval_weights="mechanism"):
    t_max = ds.grid.t_max
    status = ds.status[:, None]
    c = ds.time[:, None]
    t = _t_row(t_max)[None, :]
    if mode != "centime":
        bad = np.flatnonzero((ds.status == S.LEFT) | (ds.status == S.INTERVAL))
        if bad.size:
            raise ValueError(
                f"sample {bad[0]}: {S(int(ds.status[bad[0]])).name.lower()} censoring is "
                "only defined for the event-conditional (CenTime) objective")
    if interval_weights not in INTERVAL_WEIGHTS:
        raise ValueError(f"interval weights must be one of {INTERVAL_WEIGHTS}")
    log_below = -np.log(np.maximum(t - 1, 1))
    log_above = -np.log(np.maximum(t_max - t, 1))
    log_w = np.full((len(ds), t_max), -np.inf)
    log_w = np.where((status == S.UNCENSORED) & (t == c), 0.0, log_w)
    right = (status == S.RIGHT) & (t > c)
    log_w = np.where(right, log_below if mode == "centime" else 0.0, log_w)
    if mode == "centime":
        log_w = np.where((status == S.LEFT) & (t < c), log_above, log_w)
        lower = log_below if interval_weights == "mechanism" else -np.log(t)
        inside = (status == S.INTERVAL) & (t > c) & (t < ds.time2[:, None])
        log_w = np.where(inside, lower + log_above, log_w)
    return log_w


def _mean_objective(ds, log_pmf, log_w):
    log_pmf = np.asarray(log_pmf, dtype=float)
    if log_pmf.shape != (len(ds), ds.grid.t_max):
        raise ValueError(f"log_pmf shape {log_pmf.shape} != {(len(ds), ds.grid.t_max)}")
    n = len(ds)
    if n == 0:
        return LossReport(0.0, np.zeros_like(log_pmf), skipped=True)
    vals, resp, floored = _weighted_log_mass(log_pmf, log_w)
    flagged = tuple(int(i) for i in np.flatnonzero(floored))
    return LossReport(float(np.sum(vals)) / n, resp / n, flagged=flagged, n_terms=n,
                      extra={"per_sample": vals})


def centime_objective(ds, log_pmf, interval_weights: str = "mechanism") -> LossReport:
    """Mean event-conditional censoring log-likelihood over ``ds``."""
    return _mean_objective(ds, log_pmf, _batch_log_weights(ds, "centime", interval_weights))


def classical_objective(ds, log_pmf) -> LossReport:
    """Mean classical (independent censoring) log-likelihood, constants omitted."""
    return _mean_objective(ds, log_pmf, _batch_log_weights(ds, "classical"))


def chain_mu(grad_log_pmf, dlogpmf_dmu) -> np.ndarray:
    """Per-sample gradient with respect to ``mu`` from a log-pmf gradient."""
    return np.sum(grad_log_pmf * dlogpmf_dmu, axis=-1)


def chain_logits(grad_log_pmf, log_pmf) -> np.ndarray:
    """Gradient with respect to softmax logits from a log-pmf gradient."""
    p = np.exp(log_pmf)
    return grad_log_pmf - p * np.sum(grad_log_pmf, axis=-1, keepdims=True)


def chain_cdf(grad_cdf, log_pmf) -> np.ndarray:
    """Gradient with respect to softmax logits from a cdf gradient."""
    # F(t) = sum_{s<=t} p(s)  =>  dL/dp(s) = sum_{t>=s} dL/dF(t)
    grad_pmf = np.cumsum(grad_cdf[..., ::-1], axis=-1)[..., ::-1]
    p = np.exp(log_pmf)
    return p * (grad_pmf - np.sum(p * grad_pmf, axis=-1, keepdims=True))


def deephit_likelihood(ds, logits) -> LossReport:
    """Classical likelihood of a softmax head; ``grad`` is with respect to ``logits``."""
    log_pmf = log_softmax(np.asarray(logits, dtype=float), axis=-1)
    rep = classical_objective(ds, log_pmf)
    rep.grad = chain_logits(rep.grad, log_pmf)
    return rep


def rank_pairs(ds) -> tuple[np.ndarray, np.ndarray]:
    """Admissible ranking pairs ``(i, j)``: ``i`` uncensored and ``time_j > t_i``."""
    if np.any((ds.status == S.LEFT) | (ds.status == S.INTERVAL)):
        raise ValueError("ranking loss is defined for right censoring only")
    anchor = ds.status == S.UNCENSORED
    ok = anchor[:, None] & (ds.time[None, :] > ds.time[:, None])
    return np.nonzero(ok)


def deephit_rank_loss(ds, cdf, s: float = DEFAULT_RANK_SCALE) -> LossReport:
    """Mean of ``exp(-(F_i(t_i) - F_j(t_i)) / s)`` over admissible pairs.

    ``grad`` is with respect to the ``cdf`` matrix.
    """
    if not s > 0:
        raise ValueError("s must be positive")
    cdf = np.asarray(cdf, dtype=float)
    grad = np.zeros_like(cdf)
    i, j = rank_pairs(ds)
    if i.size == 0:
        log.debug("no admissible ranking pairs in batch of %d", len(ds))
        return LossReport(0.0, grad, n_terms=0)
    col = ds.time[i] - 1
    diff = cdf[i, col] - cdf[j, col]
    eta = np.exp(-diff / s)
    n_pairs = i.size
    value = float(np.sum(eta)) / n_pairs
    np.add.at(grad, (i, col), -eta / (s * n_pairs))
    np.add.at(grad, (j, col), eta / (s * n_pairs))
    return LossReport(value, grad, n_terms=n_pairs)


def deephit_total_loss(ds, logits, s: float = DEFAULT_RANK_SCALE,
                       rank: bool = True) -> LossReport:
    """``-likelihood + ranking`` (to be minimised); ``grad`` is with respect to ``logits``.

    With ``rank=False`` this is the likelihood-only ablation.
    """
    logits = np.asarray(logits, dtype=float)
    log_pmf = log_softmax(logits, axis=-1)
    lik = classical_objective(ds, log_pmf)
    value = -lik.value
    grad = -chain_logits(lik.grad, log_pmf)
    extra = {"likelihood": lik.value, "rank": 0.0}
    if rank:
        rk = deephit_rank_loss(ds, pmf_to_cdf(np.exp(log_pmf)), s)
        value += rk.value
        grad = grad + chain_cdf(rk.grad, log_pmf)
        extra["rank"] = rk.value
    return LossReport(value, grad, flagged=lik.flagged, skipped=lik.skipped,
                      n_terms=lik.n_terms, extra=extra)

"""Cox partial likelihood, the memory-bank variant (CoxMB) and Breslow prediction.

Risk sets use the ``>=`` convention: every sample whose observed time (event
or censoring) is at least ``t_n`` is at risk at ``t_n``.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np
from scipy.special import logsumexp

from .core import CensoringStatus as S
from .likelihoods import LossReport


def _events(statuses):
    return np.asarray(statuses) == S.UNCENSORED


def risk_set(times, statuses, n: int) -> set[int]:
    """Indices ``m`` with ``times[m] >= times[n]``; sample ``n`` must be uncensored."""
    times = np.asarray(times)
    if not _events(statuses)[n]:
        raise ValueError(f"sample {n} is censored; risk sets are anchored on events")
    return {int(m) for m in np.flatnonzero(times >= times[n])}


def _log_risk_sums(g, times):
    """``log sum_{m: time_m >= times[k]} exp(g_m)`` for every k."""
    order = np.argsort(times, kind="stable")
    ts = times[order]
    # reverse running log-sum-exp over samples sorted by time
    tail = np.logaddexp.accumulate(g[order][::-1])[::-1]
    first = np.searchsorted(ts, times, side="left")
    return tail[first]


def cox_partial_ll(g, times, statuses) -> LossReport:
    """Mean Cox partial log-likelihood over the events in the pool.

    ``grad`` is the derivative with respect to every ``g``. An event-free pool
    returns a ``skipped`` report with value ``nan`` and zero gradient.
    """
    g = np.asarray(g, dtype=float)
    times = np.asarray(times)
    ev = _events(statuses)
    n_ev = int(ev.sum())
    if n_ev == 0:
        return LossReport(math.nan, np.zeros_like(g), skipped=True)
    lse = _log_risk_sums(g, times)
    terms = g[ev] - lse[ev]
    value = np.sum(terms) / n_ev
    # d/dg_m = [delta_m - sum_{n event, t_n <= t_m} exp(g_m - lse_n)] / n_ev
    ev_times = times[ev]
    order = np.argsort(ev_times, kind="stable")
    cum = np.logaddexp.accumulate(-lse[ev][order])
    upto = np.searchsorted(ev_times[order], times, side="right")
    with np.errstate(under="ignore"):
        share = np.where(upto > 0, np.exp(g + cum[np.maximum(upto - 1, 0)]), 0.0)
    grad = (ev.astype(float) - share) / n_ev
    return LossReport(float(value), grad, n_terms=n_ev)


class BankEntry(NamedTuple):
    g: float
    status: int
    time: int
    iteration: int


class MemoryBank:
    """FIFO queue of stored risk predictions, capped at ``floor(K * n_train)``.

    Backed by a ring buffer; iteration yields :class:`BankEntry` oldest first.
    """

    def __init__(self, K: float, n_train: int):
        if not 0.0 <= K <= 1.0:
            raise ValueError(f"K must lie in [0, 1], got {K}")
        self.K = K
        self.capacity = int(math.floor(K * n_train))
        self._g = np.zeros(self.capacity)
        self._status = np.zeros(self.capacity, dtype=np.int64)
        self._time = np.zeros(self.capacity, dtype=np.int64)
        self._iter = np.zeros(self.capacity, dtype=np.int64)
        self._start = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def _order(self):
        return (self._start + np.arange(self._size)) % max(self.capacity, 1)

    def __iter__(self):
        for k in self._order():
            yield BankEntry(float(self._g[k]), int(self._status[k]), int(self._time[k]),
                            int(self._iter[k]))

    def push(self, g, statuses, times, iteration: int) -> None:
        if self.capacity == 0:
            return
        for gi, si, ti in zip(np.asarray(g, dtype=float), statuses, times):
            if self._size < self.capacity:
                k = (self._start + self._size) % self.capacity
                self._size += 1
            else:
                k = self._start
                self._start = (self._start + 1) % self.capacity
            self._g[k], self._status[k], self._time[k], self._iter[k] = gi, si, ti, iteration

    def stale(self, iteration: int):
        """``(g, status, time)`` arrays of entries stored before ``iteration``, oldest first."""
        k = self._order()
        k = k[self._iter[k] < iteration]
        return self._g[k], self._status[k], self._time[k]


def coxmb_objective(bank: MemoryBank, g, statuses, times, iteration: int) -> LossReport:
    """Cox partial likelihood over stale bank entries plus the current batch.

    The current batch (already pushed for ``iteration``) always takes part in
    full; earlier entries enter as constants. ``grad`` covers the current
    batch only. With an empty bank this is exactly :func:`cox_partial_ll` on
    the batch.
    """
    g = np.asarray(g, dtype=float)
    old_g, old_s, old_t = bank.stale(iteration)
    if old_g.size == 0:
        return cox_partial_ll(g, times, statuses)
    pool_g = np.concatenate([old_g, g])
    pool_s = np.concatenate([old_s, np.asarray(statuses)])
    pool_t = np.concatenate([old_t, np.asarray(times)])
    rep = cox_partial_ll(pool_g, pool_t, pool_s)
    rep.grad = rep.grad[old_g.size:]
    rep.extra["pool_size"] = len(pool_g)
    return rep


def breslow_baseline(g, times, statuses, grid) -> np.ndarray:
    """Breslow cumulative baseline hazard ``H0(t)`` for ``t = 1..t_max``."""
    g = np.asarray(g, dtype=float)
    times = np.asarray(times)
    ev = _events(statuses)
    if not ev.any():
        raise ValueError("Breslow baseline needs at least one event")
    increments = np.zeros(grid.t_max)
    for t in np.unique(times[ev]):
        d = np.sum(ev & (times == t))
        at_risk = logsumexp(g[times >= t])
        increments[t - 1] = d * math.exp(-at_risk)
    return np.cumsum(increments)


def cox_survival(g, H0) -> np.ndarray:
    """``S(t|x) = exp(-H0(t) exp(g))``; rows per score when ``g`` is an array."""
    g = np.asarray(g, dtype=float)
    with np.errstate(over="ignore"):
        return np.exp(-np.multiply.outer(np.exp(g), np.asarray(H0)))


def cox_predict_time(g, H0, grid) -> np.ndarray | float:
    """Discrete expected lifetime ``1 + sum_{t<t_max} S(t|x)``, clipped to the grid."""
    surv = cox_survival(g, H0)
    pred = np.clip(1.0 + np.sum(surv[..., : grid.t_max - 1], axis=-1), 1.0, grid.t_max)
    return float(pred) if np.ndim(pred) == 0 else pred

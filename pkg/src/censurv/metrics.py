"""Concordance index, MAE and RAE. Undefined values are reported as ``nan``."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .core import CensoringStatus as S


@dataclass(frozen=True)
class MetricBundle:
    c_index: float
    mae: float
    rae: float
    n_comparable_pairs: int
    n_uncensored: int

    def to_dict(self) -> dict:
        return asdict(self)


def comparable_pairs(times, statuses) -> np.ndarray:
    """Boolean matrix ``[i, j]``: ``i`` is an event and ``j`` outlives it.

    ``j`` outlives ``i`` when ``time_j > t_i``, or when ``time_j == t_i`` and
    ``j`` is censored.
    """
    times = np.asarray(times)
    ev = np.asarray(statuses) == S.UNCENSORED
    later = times[None, :] > times[:, None]
    tied_censored = (times[None, :] == times[:, None]) & ~ev[None, :]
    return ev[:, None] & (later | tied_censored)


def concordance_counts(scores, times, statuses) -> tuple[float, int]:
    """(concordant-equivalents, comparable pairs); higher score = longer survival."""
    scores = np.asarray(scores, dtype=float)
    pairs = comparable_pairs(times, statuses)
    n_pairs = int(pairs.sum())
    s_i = scores[:, None]
    s_j = scores[None, :]
    credit = np.where(s_j > s_i, 1.0, np.where(s_j == s_i, 0.5, 0.0))
    return float(np.sum(credit[pairs])), n_pairs


def c_index(scores, times, statuses) -> float:
    """Harrell's C-Index; ties in score earn half credit. ``nan`` without pairs."""
    concordant, n_pairs = concordance_counts(scores, times, statuses)
    return concordant / n_pairs if n_pairs else math.nan


def _uncensored_errors(pred_time, times, statuses):
    pred_time = np.asarray(pred_time, dtype=float)
    times = np.asarray(times, dtype=float)
    ev = np.asarray(statuses) == S.UNCENSORED
    return np.abs(pred_time[ev] - times[ev]), times[ev]


def mae(pred_time, times, statuses) -> float:
    err, _ = _uncensored_errors(pred_time, times, statuses)
    return float(np.mean(err)) if err.size else math.nan


def rae(pred_time, times, statuses) -> float:
    err, t = _uncensored_errors(pred_time, times, statuses)
    return float(np.mean(err / t)) if err.size else math.nan


def metric_bundle(scores, pred_time, times, statuses) -> MetricBundle:
    concordant, n_pairs = concordance_counts(scores, times, statuses)
    return MetricBundle(
        c_index=concordant / n_pairs if n_pairs else math.nan,
        mae=mae(pred_time, times, statuses),
        rae=rae(pred_time, times, statuses),
        n_comparable_pairs=n_pairs,
        n_uncensored=int(np.sum(np.asarray(statuses) == S.UNCENSORED)),
    )

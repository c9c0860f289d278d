"""Synthetic survival data under the event-conditional and classical mechanisms.

The ground-truth event law is a discretised Gaussian whose centre is an
affine function of the covariates, clamped to ``[1 + sigma, t_max - sigma]``.
"""

from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import CensoringStatus as S
from .core import Dataset, TimeGrid
from .distributions import DiscGaussParams, disc_gauss_pmf, sample_event


class CovariateLaw(str, enum.Enum):
    STANDARD_NORMAL = "standard_normal"
    UNIFORM_CUBE = "uniform_cube"


@dataclass(frozen=True)
class GroundTruth:
    beta: tuple[float, ...] = (20.0, -15.0)
    bias: float = 70.0
    sigma_true: float = 12.0
    grid: TimeGrid = field(default_factory=TimeGrid)
    covariate_law: CovariateLaw = CovariateLaw.STANDARD_NORMAL

    def __post_init__(self):
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        object.__setattr__(self, "covariate_law", CovariateLaw(self.covariate_law))
        if not self.sigma_true > 0:
            raise ValueError("sigma_true must be positive")

    @property
    def d(self) -> int:
        return len(self.beta)

    def mu(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float).reshape(-1, self.d)
        lo, hi = 1 + self.sigma_true, self.grid.t_max - self.sigma_true
        raw = self.bias + X @ np.asarray(self.beta)
        # for grids narrower than 2 sigma the clamp collapses to the midpoint
        if lo > hi:
            lo = hi = 0.5 * (1 + self.grid.t_max)
        return np.clip(raw, lo, hi)

    def pmf(self, X) -> np.ndarray:
        return disc_gauss_pmf(DiscGaussParams(self.mu(X), self.sigma_true), self.grid)

    def covariates(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.covariate_law is CovariateLaw.STANDARD_NORMAL:
            return rng.standard_normal((n, self.d))
        return rng.uniform(-1.0, 1.0, size=(n, self.d))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["grid"] = {"t_max": self.grid.t_max}
        out["covariate_law"] = self.covariate_law.value
        out["beta"] = list(self.beta)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruth":
        d = dict(d)
        if "grid" in d:
            d["grid"] = TimeGrid(int(d["grid"]["t_max"]))
        elif "t_max" in d:
            d["grid"] = TimeGrid(int(d.pop("t_max")))
        return cls(**d)


def _draw_events(pmf, rng, reject=None):
    """Inverse-CDF events, redrawing rows whose event ``reject`` flags."""
    t = np.atleast_1d(sample_event(pmf, rng))
    if reject is not None:
        bad = np.flatnonzero(reject(t))
        while bad.size:
            t[bad] = np.atleast_1d(sample_event(pmf[bad], rng))
            bad = bad[reject(t[bad])]
    return t


def generate_centime(gt: GroundTruth, n_uncens: int, n_cens: int,
                     rng: np.random.Generator) -> Dataset:
    """Exact counts of uncensored and right-censored rows, censoring ``c ~ U{1..t-1}``.

    Latent events at ``t = 1`` have no admissible censoring time and are
    redrawn for censored rows.
    """
    t_max = gt.grid.t_max
    X_u = gt.covariates(n_uncens, rng)
    X_c = gt.covariates(n_cens, rng)
    t_u = _draw_events(gt.pmf(X_u), rng) if n_uncens else np.zeros(0, dtype=int)
    if n_cens:
        t_c = _draw_events(gt.pmf(X_c), rng, reject=lambda t: t == 1)
        c = rng.integers(1, t_c)
    else:
        c = np.zeros(0, dtype=int)
    assert np.all(c <= t_max - 1)
    X = np.concatenate([X_u, X_c])
    status = np.concatenate([np.full(n_uncens, S.UNCENSORED), np.full(n_cens, S.RIGHT)])
    time = np.concatenate([t_u, c])
    perm = rng.permutation(len(status))
    return Dataset(X[perm], status[perm], time[perm], grid=gt.grid, validate=False)


def generate_classical(gt: GroundTruth, n: int, rng: np.random.Generator) -> Dataset:
    """Independent ``t`` and ``c ~ U{1..t_max}``; censored iff ``c < t``."""
    X = gt.covariates(n, rng)
    if n == 0:
        return Dataset(X, [], [], grid=gt.grid, validate=False)
    t = _draw_events(gt.pmf(X), rng)
    c = rng.integers(1, gt.grid.t_max + 1, size=n)
    cens = c < t
    status = np.where(cens, S.RIGHT, S.UNCENSORED)
    time = np.where(cens, c, t)
    return Dataset(X, status, time, grid=gt.grid, validate=False)


def generate_left_interval(gt: GroundTruth, n_left: int, n_interval: int,
                           rng: np.random.Generator) -> Dataset:
    """Left-censored rows ``c ~ U{t+1..t_max}`` and interval rows ``c1 < t < c2``."""
    t_max = gt.grid.t_max
    X_l = gt.covariates(n_left, rng)
    X_i = gt.covariates(n_interval, rng)
    parts_t, parts_t2 = [], []
    if n_left:
        t = _draw_events(gt.pmf(X_l), rng, reject=lambda t: t == t_max)
        parts_t.append(rng.integers(t + 1, t_max + 1))
        parts_t2.append(np.zeros(n_left, dtype=int))
    if n_interval:
        t = _draw_events(gt.pmf(X_i), rng, reject=lambda t: (t == 1) | (t == t_max))
        parts_t.append(rng.integers(1, t))
        parts_t2.append(rng.integers(t + 1, t_max + 1))
    X = np.concatenate([X_l, X_i])
    status = np.concatenate([np.full(n_left, S.LEFT), np.full(n_interval, S.INTERVAL)])
    time = np.concatenate(parts_t) if parts_t else np.zeros(0, dtype=int)
    time2 = np.concatenate(parts_t2) if parts_t2 else np.zeros(0, dtype=int)
    perm = rng.permutation(len(status))
    return Dataset(X[perm], status[perm], time[perm], time2[perm], gt.grid, validate=False)


def round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def censored_count(n: int, censored_fraction: float) -> int:
    """Number of censored rows for a requested fraction (round half up)."""
    return round_half_up(n * censored_fraction)


def write_sidecar(path, settings: dict) -> Path:
    path = Path(path)
    path.write_text(json.dumps(settings, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path

"""Minibatch training with AdamW, cosine annealing, gradient clipping and early stopping.

All objectives are handled as losses to minimise: the negated mean
log-likelihood for the distributional models, the negated partial
log-likelihood for Cox, and likelihood-plus-ranking for DeepHit.
"""

from __future__ import annotations

import csv
import enum
import io
import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.special import log_softmax

from .core import CensoringStatus as S
from .core import Dataset
from .cox import MemoryBank, breslow_baseline, cox_partial_ll, cox_predict_time, coxmb_objective
from .distributions import (DEFAULT_SIGMA, DiscGaussParams, disc_gauss_dlogpmf_dmu,
                            disc_gauss_log_pmf, pmf_mean, pmf_mode)
from .likelihoods import (DEFAULT_RANK_SCALE, LossReport, centime_objective, chain_mu,
                          classical_objective, deephit_total_loss)
from .metrics import MetricBundle, metric_bundle
from .models import Head, PredictorConfig, backward, forward, init_params

log = logging.getLogger(__name__)


class Objective(str, enum.Enum):
    CENTIME = "centime"
    CLASSICAL = "classical"
    DEEPHIT = "deephit"
    DEEPHIT_LIK = "deephit_lik"
    COX = "cox"
    COXMB = "coxmb"


HEAD_FOR = {
    Objective.CENTIME: Head.MU,
    Objective.CLASSICAL: Head.MU,
    Objective.DEEPHIT: Head.LOGITS,
    Objective.DEEPHIT_LIK: Head.LOGITS,
    Objective.COX: Head.RISK,
    Objective.COXMB: Head.RISK,
}


class UntrainableError(RuntimeError):
    """The objective is undefined on the whole training set."""


class IncompatibleError(ValueError):
    """Objective, head and data do not fit together."""


def default_lr(objective) -> float:
    return 1e-4 if Objective(objective) in (Objective.CENTIME, Objective.CLASSICAL) else 5e-4


@dataclass(frozen=True)
class TrainConfig:
    objective: Objective = Objective.CENTIME
    lr: float | None = None
    epochs: int = 300
    batch_size: int = 32
    patience: int = 50
    clip_norm: float = 1.0
    K: float = 1.0
    sigma: float = DEFAULT_SIGMA
    s: float = DEFAULT_RANK_SCALE
    seed: int = 0
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    prime_bank: bool = True
    interval_weights: str = "mechanism"

    def __post_init__(self):
        object.__setattr__(self, "objective", Objective(self.objective))
        if self.lr is None:
            object.__setattr__(self, "lr", default_lr(self.objective))
        for name in ("lr", "clip_norm", "sigma", "s"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("epochs", "batch_size", "patience"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if not 0.0 <= self.K <= 1.0:
            raise ValueError("K must lie in [0, 1]")

    @property
    def head(self) -> Head:
        return HEAD_FOR[self.objective]

    def to_dict(self) -> dict:
        out = asdict(self)
        out["objective"] = self.objective.value
        return out


# --- optimiser pieces ---------------------------------------------------------

def cosine_lr(step: int, total_steps: int, base_lr: float) -> float:
    """Cosine annealing from ``base_lr`` at step 0 to 0 at the final step."""
    if total_steps <= 1:
        return base_lr
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * step / (total_steps - 1)))


def clip_by_global_norm(grad: np.ndarray, max_norm: float) -> np.ndarray:
    norm = float(np.linalg.norm(grad))
    if norm > max_norm:
        return grad * (max_norm / norm)
    return grad


class AdamW:
    def __init__(self, n: int, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=1e-4):
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0
        self.beta1, self.beta2, self.eps, self.weight_decay = beta1, beta2, eps, weight_decay

    def step(self, params: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        params = params * (1.0 - lr * self.weight_decay)
        return params - lr * m_hat / (np.sqrt(v_hat) + self.eps)


# --- losses at the head ---------------------------------------------------------

def head_loss(cfg: TrainConfig, ds: Dataset, out) -> LossReport:
    """Loss to minimise and its gradient with respect to the head outputs ``out``.

    Not used for CoxMB, whose loss depends on the memory bank.
    """
    obj = cfg.objective
    if obj in (Objective.CENTIME, Objective.CLASSICAL):
        params = DiscGaussParams(out, cfg.sigma)
        log_pmf = disc_gauss_log_pmf(params, ds.grid)
        if obj is Objective.CENTIME:
            rep = centime_objective(ds, log_pmf, cfg.interval_weights)
        else:
            rep = classical_objective(ds, log_pmf)
        grad = -chain_mu(rep.grad, disc_gauss_dlogpmf_dmu(params, ds.grid, log_pmf))
        return replace(rep, value=-rep.value, grad=grad)
    if obj in (Objective.DEEPHIT, Objective.DEEPHIT_LIK):
        return deephit_total_loss(ds, out, cfg.s, rank=obj is Objective.DEEPHIT)
    rep = cox_partial_ll(out, ds.time, ds.status)
    return replace(rep, value=-rep.value, grad=-rep.grad)


def _check_compatible(cfg: TrainConfig, pcfg: PredictorConfig, datasets):
    if pcfg.head is not cfg.head:
        raise IncompatibleError(
            f"objective {cfg.objective.value} needs a {cfg.head.value} head, "
            f"got {pcfg.head.value}")
    for ds in datasets:
        if ds.d != pcfg.d:
            raise IncompatibleError(f"dataset has d={ds.d}, predictor expects {pcfg.d}")
        if ds.grid.t_max != pcfg.t_max:
            raise IncompatibleError("dataset and predictor grids differ")
        if cfg.objective is not Objective.CENTIME and np.any(
                (ds.status == S.LEFT) | (ds.status == S.INTERVAL)):
            raise IncompatibleError(
                "left/interval censoring is only supported by the centime objective")


# --- training ---------------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    train_objective: float
    val_objective: float
    lr: float
    skipped_batches: int


LOG_COLUMNS = ("epoch", "train_objective", "val_objective", "lr", "skipped_batches")


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for r in self.records:
            w.writerow([r.epoch, _fmt(r.train_objective), _fmt(r.val_objective),
                        _fmt(r.lr), r.skipped_batches])
        return buf.getvalue()


def _fmt(v: float) -> str:
    return "NA" if v is None or not math.isfinite(v) else repr(float(v))


def epoch_batches(n: int, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Shuffled minibatch index arrays for one epoch (last batch may be short)."""
    perm = np.random.default_rng([seed, epoch]).permutation(n)
    return [perm[k:k + batch_size] for k in range(0, n, batch_size)]


def validation_loss(cfg: TrainConfig, pcfg: PredictorConfig, params, ds: Dataset) -> float:
    """Full-batch loss on ``ds``; CoxMB is scored with the plain Cox loss."""
    if len(ds) == 0:
        return math.nan
    out = forward(pcfg, params, ds.X)
    vcfg = replace(cfg, objective=Objective.COX) if cfg.objective is Objective.COXMB else cfg
    return float(head_loss(vcfg, ds, out).value)


def train(cfg: TrainConfig, train_ds: Dataset, val_ds: Dataset,
          pcfg: PredictorConfig) -> tuple[np.ndarray, TrainLog]:
    """Fit ``pcfg``'s parameters; returns the best-validation parameters and the log."""
    _check_compatible(cfg, pcfg, [train_ds, val_ds])
    is_cox = cfg.objective in (Objective.COX, Objective.COXMB)
    if is_cox and not np.any(train_ds.uncensored):
        raise UntrainableError(
            f"{cfg.objective.value} needs at least one uncensored training sample")
    n = len(train_ds)
    if n == 0:
        raise UntrainableError("empty training set")

    params = init_params(pcfg)
    opt = AdamW(params.size, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay)
    n_batches = math.ceil(n / cfg.batch_size)
    total_steps = cfg.epochs * n_batches

    bank = None
    if cfg.objective is Objective.COXMB:
        bank = MemoryBank(cfg.K, n)
        if cfg.prime_bank and bank.capacity:
            bank.push(forward(pcfg, params, train_ds.X), train_ds.status, train_ds.time, -1)

    trainlog = TrainLog()
    best = (math.inf, params.copy(), 0)
    since_best = 0
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        epoch_lr = cosine_lr(step, total_steps, cfg.lr)
        losses, skipped = [], 0
        for idx in epoch_batches(n, cfg.batch_size, cfg.seed, epoch):
            lr = cosine_lr(step, total_steps, cfg.lr)
            batch = train_ds.subset(idx)
            out = forward(pcfg, params, batch.X)
            if bank is not None:
                bank.push(out, batch.status, batch.time, step)
                rep = coxmb_objective(bank, out, batch.status, batch.time, step)
                rep = replace(rep, value=-rep.value, grad=-rep.grad)
            else:
                rep = head_loss(cfg, batch, out)
            step += 1
            if rep.skipped:
                skipped += 1
                continue
            grad = clip_by_global_norm(backward(pcfg, params, batch.X, rep.grad), cfg.clip_norm)
            params = opt.step(params, grad, lr)
            losses.append(rep.value)

        train_obj = float(np.mean(losses)) if losses else math.nan
        val_obj = validation_loss(cfg, pcfg, params, val_ds)
        trainlog.records.append(EpochRecord(epoch, train_obj, val_obj, epoch_lr, skipped))
        monitor = val_obj if math.isfinite(val_obj) else train_obj
        if math.isfinite(monitor) and monitor < best[0]:
            best = (monitor, params.copy(), epoch)
            since_best = 0
        else:
            since_best += 1
        if since_best >= cfg.patience:
            trainlog.stopped_early = True
            log.info("early stop at epoch %d (best %d)", epoch, best[2])
            break
    trainlog.best_epoch = best[2]
    return best[1], trainlog


# --- evaluation -----------------------------------------------------------------------

@dataclass(frozen=True)
class Predictions:
    scores: np.ndarray
    times: np.ndarray


def predict(cfg: TrainConfig, pcfg: PredictorConfig, params, ds: Dataset,
            baseline: Dataset | None = None, point: str = "mean") -> Predictions:
    """Ordering scores (higher = longer survival) and point-predicted months.

    Cox heads use ``-g`` for ordering and the Breslow expected lifetime, with
    the baseline hazard estimated on ``baseline`` (default ``ds``).
    """
    out = forward(pcfg, params, ds.X) if len(ds) else np.zeros((0,) if pcfg.n_out == 1
                                                              else (0, pcfg.n_out))
    if pcfg.head is Head.RISK:
        ref = baseline if baseline is not None else ds
        if not np.any(ref.uncensored):
            return Predictions(-np.asarray(out), np.full(len(ds), math.nan))
        g_ref = forward(pcfg, params, ref.X)
        H0 = breslow_baseline(g_ref, ref.time, ref.status, ref.grid)
        return Predictions(-np.asarray(out), np.atleast_1d(cox_predict_time(out, H0, ds.grid)))
    if pcfg.head is Head.MU:
        log_pmf = disc_gauss_log_pmf(DiscGaussParams(out, cfg.sigma), ds.grid)
    else:
        log_pmf = log_softmax(out, axis=-1)
    pmf = np.exp(log_pmf)
    if point not in ("mean", "mode"):
        raise ValueError("point must be 'mean' or 'mode'")
    t_hat = pmf_mean(pmf) if point == "mean" else pmf_mode(pmf).astype(float)
    t_hat = np.atleast_1d(t_hat)
    return Predictions(t_hat, t_hat)


def evaluate(params, pcfg: PredictorConfig, ds: Dataset, cfg: TrainConfig,
             baseline: Dataset | None = None,
             point: str = "mean") -> tuple[float, MetricBundle]:
    """Loss on ``ds`` and the C-Index/MAE/RAE bundle."""
    _check_compatible(cfg, pcfg, [ds])
    value = validation_loss(cfg, pcfg, params, ds)
    pred = predict(cfg, pcfg, params, ds, baseline, point)
    return value, metric_bundle(pred.scores, pred.times, ds.time, ds.status)

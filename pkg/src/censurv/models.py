"""Linear and one-hidden-layer MLP predictors with hand-written backpropagation.

Parameters live in one flat float64 vector. Layout, in order: hidden weights
``(hidden, d)`` and biases ``(hidden,)`` for the MLP, then head weights
``(out, fan_in)`` and head biases ``(out,)``.
"""

from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

LEAKY_SLOPE = 0.01


class Architecture(str, enum.Enum):
    LINEAR = "linear"
    MLP = "mlp"


class Head(str, enum.Enum):
    MU = "mu"
    LOGITS = "logits"
    RISK = "risk"


@dataclass(frozen=True)
class PredictorConfig:
    d: int
    head: Head = Head.MU
    architecture: Architecture = Architecture.LINEAR
    hidden: int = 32
    t_max: int = 156
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "head", Head(self.head))
        object.__setattr__(self, "architecture", Architecture(self.architecture))
        if self.d < 0 or (self.architecture is Architecture.MLP and self.hidden < 1):
            raise ValueError("invalid predictor dimensions")
        if self.t_max < 2:
            raise ValueError("t_max must be >= 2")

    @property
    def n_out(self) -> int:
        return self.t_max if self.head is Head.LOGITS else 1

    @property
    def fan_in(self) -> int:
        return self.hidden if self.architecture is Architecture.MLP else self.d

    @property
    def n_params(self) -> int:
        n = self.n_out * (self.fan_in + 1)
        if self.architecture is Architecture.MLP:
            n += self.hidden * (self.d + 1)
        return n

    def to_dict(self) -> dict:
        out = asdict(self)
        out["head"] = self.head.value
        out["architecture"] = self.architecture.value
        return out


def _unflatten(cfg: PredictorConfig, params):
    params = np.asarray(params, dtype=float)
    if params.shape != (cfg.n_params,):
        raise ValueError(f"expected {cfg.n_params} parameters, got {params.shape}")
    parts, k = {}, 0
    shapes = []
    if cfg.architecture is Architecture.MLP:
        shapes += [("W1", (cfg.hidden, cfg.d)), ("b1", (cfg.hidden,))]
    shapes += [("W", (cfg.n_out, cfg.fan_in)), ("b", (cfg.n_out,))]
    for name, shape in shapes:
        size = int(np.prod(shape))
        parts[name] = params[k:k + size].reshape(shape)
        k += size
    return parts


def _as_batch(cfg, x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != cfg.d:
        raise ValueError(f"covariate dimension {X.shape[-1]} != {cfg.d}")
    return X, single


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _trunk(cfg, p, X):
    if cfg.architecture is Architecture.LINEAR:
        return X, None
    pre = X @ p["W1"].T + p["b1"]
    return np.where(pre > 0, pre, LEAKY_SLOPE * pre), pre


def forward(cfg: PredictorConfig, params, x):
    """Head output for one covariate vector or a batch ``(n, d)``.

    ``mu`` heads return ``1 + (t_max - 1) * sigmoid(raw)``; ``risk`` heads return
    the raw scalar; ``logits`` heads the raw ``t_max`` vector.
    """
    X, single = _as_batch(cfg, x)
    p = _unflatten(cfg, params)
    h, _ = _trunk(cfg, p, X)
    raw = h @ p["W"].T + p["b"]
    if cfg.head is Head.LOGITS:
        out = raw
    else:
        out = raw[:, 0]
        if cfg.head is Head.MU:
            out = 1.0 + (cfg.t_max - 1) * _sigmoid(out)
            # the sigmoid rounds to 0 or 1 for large |raw|; keep mu off the grid ends
            out = np.clip(out, np.nextafter(1.0, np.inf), np.nextafter(float(cfg.t_max), 0.0))
    return out[0] if single else out


def backward(cfg: PredictorConfig, params, x, upstream) -> np.ndarray:
    """Gradient over the flat parameters of ``sum_n <upstream_n, head_n>``."""
    X, single = _as_batch(cfg, x)
    p = _unflatten(cfg, params)
    up = np.asarray(upstream, dtype=float)
    if cfg.head is Head.LOGITS:
        up = up.reshape(X.shape[0], cfg.n_out)
    else:
        up = up.reshape(X.shape[0], 1)
    h, pre = _trunk(cfg, p, X)
    if cfg.head is Head.MU:
        s = _sigmoid(h @ p["W"].T + p["b"])
        up = up * (cfg.t_max - 1) * s * (1.0 - s)
    grads = {"W": up.T @ h, "b": up.sum(axis=0)}
    if cfg.architecture is Architecture.MLP:
        dh = up @ p["W"]
        dpre = dh * np.where(pre > 0, 1.0, LEAKY_SLOPE)
        grads["W1"] = dpre.T @ X
        grads["b1"] = dpre.sum(axis=0)
        order = ["W1", "b1", "W", "b"]
    else:
        order = ["W", "b"]
    return np.concatenate([grads[k].ravel() for k in order])


def init_params(cfg: PredictorConfig) -> np.ndarray:
    """Weights ~ U(-sqrt(3/fan_in), sqrt(3/fan_in)) from ``cfg.seed``; biases zero."""
    rng = np.random.default_rng(cfg.seed)
    chunks = []
    layers = []
    if cfg.architecture is Architecture.MLP:
        layers.append((cfg.hidden, cfg.d))
    layers.append((cfg.n_out, cfg.fan_in))
    for n_out, fan_in in layers:
        bound = np.sqrt(3.0 / fan_in) if fan_in else 0.0
        chunks.append(rng.uniform(-bound, bound, size=n_out * fan_in))
        chunks.append(np.zeros(n_out))
    return np.concatenate(chunks)


# --- checkpoints -------------------------------------------------------------

def save_checkpoint(path, cfg: PredictorConfig, params, meta: dict | None = None) -> Path:
    """JSON header line describing ``cfg`` followed by little-endian float64 parameters."""
    header = {"predictor": cfg.to_dict(), "n_params": cfg.n_params}
    if meta:
        header["meta"] = meta
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(np.asarray(params, dtype="<f8").tobytes())
    return path


def load_checkpoint(path) -> tuple[PredictorConfig, np.ndarray, dict]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        body = fh.read()
    cfg = PredictorConfig(**header["predictor"])
    params = np.frombuffer(body, dtype="<f8").astype(float)
    if params.size != cfg.n_params:
        raise ValueError(f"checkpoint holds {params.size} parameters, expected {cfg.n_params}")
    return cfg, params, header.get("meta", {})

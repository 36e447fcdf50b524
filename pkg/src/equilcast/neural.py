"""Stacked-LSTM sequence regressor with a Gaussian (mean, variance) head.

Everything is written against plain numpy arrays; the time recurrences live in
:mod:`equilcast._kernels`. Parameters are an ordered ``dict`` of float64 arrays:

    lstm{k}.W  (d_in, 4H)   input weights, gate order [i, f, g, o]
    lstm{k}.U  (H, 4H)      recurrent weights
    lstm{k}.b  (4H,)        biases
    head.W     (H_last, 2)  dense head, column 0 -> mean, column 1 -> variance
    head.b     (2,)

Batched arrays are time-major: sequences ``(T, B)``, hidden states ``(T, B, H)``.
"""
from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import ModelFormatError, NonFiniteInput, ShapeMismatch, TrainingDiverged

log = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)
MODEL_FORMAT = "equilcast-lstm"
MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class NetworkConfig:
    lstm_layer_sizes: tuple = (50, 500)
    input_dim: int = 1
    sequence_length: int = 250
    variance_floor: float = 1e-6
    output_dim: int = 2

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.lstm_layer_sizes)
        if not sizes or any(s <= 0 for s in sizes):
            raise ValueError("need at least one LSTM layer with positive width")
        if self.sequence_length < 2:
            raise ValueError("sequence_length must be >= 2")
        if self.output_dim != 2:
            raise ValueError("the probabilistic head has exactly 2 outputs")
        if not self.variance_floor > 0:
            raise ValueError("variance_floor must be positive")
        object.__setattr__(self, "lstm_layer_sizes", sizes)

    def to_dict(self):
        d = asdict(self)
        d["lstm_layer_sizes"] = list(self.lstm_layer_sizes)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: (tuple(v) if k == "lstm_layer_sizes" else v) for k, v in d.items()
                      if k in cls.__dataclass_fields__})


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 16
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    gradient_clip_norm: float = 5.0
    seed: int = 0
    patience: int | None = None   # epochs without validation improvement before stopping
    lr_schedule: str = "constant"  # or "cosine": per-epoch decay to min_learning_rate
    min_learning_rate: float = 1e-5

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if not (self.learning_rate > 0 and self.adam_epsilon > 0 and self.gradient_clip_norm > 0):
            raise ValueError("learning_rate, adam_epsilon and gradient_clip_norm must be positive")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError("lr_schedule must be 'constant' or 'cosine'")
        if not 0 < self.min_learning_rate <= self.learning_rate:
            raise ValueError("min_learning_rate must lie in (0, learning_rate]")

    def lr_at(self, epoch):
        if self.lr_schedule == "constant" or self.epochs == 1:
            return self.learning_rate
        frac = epoch / (self.epochs - 1)
        lo = self.min_learning_rate
        return lo + 0.5 * (self.learning_rate - lo) * (1.0 + math.cos(math.pi * frac))

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass
class ProbabilisticForecast:
    mu: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.var = np.asarray(self.var, dtype=np.float64)
        if self.mu.shape != self.var.shape:
            raise ShapeMismatch("mu and var must have the same shape")

    def __len__(self):
        return self.mu.shape[0]


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

def param_shapes(config):
    shapes = {}
    d_in = config.input_dim
    for k, h in enumerate(config.lstm_layer_sizes):
        shapes[f"lstm{k}.W"] = (d_in, 4 * h)
        shapes[f"lstm{k}.U"] = (h, 4 * h)
        shapes[f"lstm{k}.b"] = (4 * h,)
        d_in = h
    shapes["head.W"] = (d_in, 2)
    shapes["head.b"] = (2,)
    return shapes


def init_params(config, seed):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, forget-gate bias 1."""
    rng = np.random.default_rng(seed)
    params = {}
    d_in = config.input_dim
    for k, h in enumerate(config.lstm_layer_sizes):
        lim = 1.0 / math.sqrt(d_in + h)
        params[f"lstm{k}.W"] = rng.uniform(-lim, lim, (d_in, 4 * h))
        params[f"lstm{k}.U"] = rng.uniform(-lim, lim, (h, 4 * h))
        b = np.zeros(4 * h)
        b[h:2 * h] = 1.0
        params[f"lstm{k}.b"] = b
        d_in = h
    lim = 1.0 / math.sqrt(d_in)
    params["head.W"] = rng.uniform(-lim, lim, (d_in, 2))
    params["head.b"] = np.zeros(2)
    return params


def zero_params(config):
    return {k: np.zeros(s) for k, s in param_shapes(config).items()}


def check_params(params, config):
    shapes = param_shapes(config)
    if set(shapes) != set(params):
        raise ShapeMismatch(f"parameter names {sorted(params)} do not match config")
    for k, s in shapes.items():
        if params[k].shape != s:
            raise ShapeMismatch(f"{k}: expected shape {s}, got {params[k].shape}")


# ---------------------------------------------------------------------------
# forward / loss / backward
# ---------------------------------------------------------------------------

def softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def lstm_forward(x, W, U, b):
    """One LSTM layer over a time-major batch ``x`` of shape (T, B, d).

    Returns the hidden sequence (T, B, H) and the cache needed by the backward
    pass. A 2-D ``x`` of shape (T, d) is treated as a batch of one.
    """
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[:, None, :]
    if not np.all(np.isfinite(x)):
        raise NonFiniteInput("LSTM input contains non-finite values")
    T, B, d = x.shape
    if W.shape[0] != d or U.shape[1] != W.shape[1] or U.shape[0] * 4 != U.shape[1]:
        raise ShapeMismatch("LSTM weight shapes inconsistent with the input")
    zx = (x.reshape(T * B, d) @ W + b).reshape(T, B, -1)
    h, c, tc, acts = _kernels.lstm_forward(np.ascontiguousarray(zx), np.ascontiguousarray(U))
    cache = {"x": x, "h": h, "c": c, "tc": tc, "acts": acts}
    return (h[:, 0, :] if squeeze else h), cache


def _lstm_backward(dh, cache, W, U):
    x, h = cache["x"], cache["h"]
    T, B, d = x.shape
    H = U.shape[0]
    dz = _kernels.lstm_backward(np.ascontiguousarray(dh), cache["c"], cache["tc"], cache["acts"],
                                np.ascontiguousarray(U.T))
    dz2 = dz.reshape(T * B, 4 * H)
    h_prev = np.concatenate([np.zeros((1, B, H)), h[:-1]], axis=0).reshape(T * B, H)
    grads = {"W": x.reshape(T * B, d).T @ dz2, "U": h_prev.T @ dz2, "b": dz2.sum(axis=0)}
    dx = (dz2 @ W.T).reshape(T, B, d)
    return grads, dx


def forward_batch(X, params, config):
    """Time-major batch forward. ``X`` is (T, B) or (T, B, d); returns mu, var, cache."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[:, :, None]
    caches = []
    a = X
    for k in range(len(config.lstm_layer_sizes)):
        a, cache = lstm_forward(a, params[f"lstm{k}.W"], params[f"lstm{k}.U"], params[f"lstm{k}.b"])
        caches.append(cache)
    T, B, H = a.shape
    z = (a.reshape(T * B, H) @ params["head.W"] + params["head.b"]).reshape(T, B, 2)
    mu = softplus(z[..., 0])
    s = softplus(z[..., 1])
    var = np.maximum(s, config.variance_floor)
    cache = {"layers": caches, "top": a, "z": z, "s": s, "mu": mu, "var": var,
             "floor": config.variance_floor}
    return mu, var, cache


def network_forward(sequence, params, config):
    """Forecast for one sequence; ``sequence`` may be (T,) or (T, 1)."""
    seq = np.asarray(sequence, dtype=np.float64)
    if seq.ndim == 1:
        seq = seq[:, None]
    if seq.ndim != 2 or seq.shape[1] != config.input_dim or seq.shape[0] < 1:
        raise ShapeMismatch(f"expected a (T, {config.input_dim}) sequence, got {seq.shape}")
    mu, var, _ = forward_batch(seq[:, None, :], params, config)
    return ProbabilisticForecast(mu[:, 0], var[:, 0])


def predict_batch(X, params, config):
    """Batch-major convenience wrapper: X (B, T) -> mu, var of shape (B, T)."""
    mu, var, _ = forward_batch(np.asarray(X, dtype=np.float64).T, params, config)
    return mu.T, var.T


def gaussian_nll(mu, var, y):
    """Elementwise Gaussian negative log likelihood."""
    return 0.5 * (LOG_2PI + np.log(var)) + (y - mu) ** 2 / (2.0 * var)


def nll_loss(forecast, target):
    """Mean over timesteps of the Gaussian NLL against a scalar target."""
    return float(np.mean(gaussian_nll(forecast.mu, forecast.var, float(target))))


def batch_nll(mu, var, y):
    """Mean NLL for time-major (T, B) outputs and per-example targets ``y`` (B,)."""
    return float(np.mean(gaussian_nll(mu, var, np.asarray(y)[None, :])))


def backward(cache, targets, params, config):
    """Exact gradients of :func:`batch_nll` with respect to every parameter."""
    mu, var, s, z = cache["mu"], cache["var"], cache["s"], cache["z"]
    y = np.asarray(targets, dtype=np.float64)[None, :]
    T, B = mu.shape
    n = T * B
    resid = y - mu
    dmu = -resid / var / n
    dvar = (0.5 / var - resid ** 2 / (2.0 * var ** 2)) / n
    ds = np.where(s > cache["floor"], dvar, 0.0)
    dz = np.empty((T, B, 2))
    dz[..., 0] = dmu * _sigmoid(z[..., 0])
    dz[..., 1] = ds * _sigmoid(z[..., 1])
    top = cache["top"]
    H = top.shape[2]
    dz2 = dz.reshape(n, 2)
    grads = {"head.W": top.reshape(n, H).T @ dz2, "head.b": dz2.sum(axis=0)}
    dh = (dz2 @ params["head.W"].T).reshape(T, B, H)
    for k in range(len(config.lstm_layer_sizes) - 1, -1, -1):
        g, dh = _lstm_backward(dh, cache["layers"][k], params[f"lstm{k}.W"], params[f"lstm{k}.U"])
        for name, v in g.items():
            grads[f"lstm{k}.{name}"] = v
    return {k: grads[k] for k in params}


def loss_and_grads(X, y, params, config):
    """X time-major (T, B), y (B,). Returns (loss, grads)."""
    mu, var, cache = forward_batch(X, params, config)
    return batch_nll(mu, var, y), backward(cache, y, params, config)


def clip_gradients(grads, max_norm):
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm is not None and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        grads = {k: g * scale for k, g in grads.items()}
    return grads, norm


# ---------------------------------------------------------------------------
# optimization
# ---------------------------------------------------------------------------

def adam_init(params):
    return {"m": {k: np.zeros_like(v) for k, v in params.items()},
            "v": {k: np.zeros_like(v) for k, v in params.items()}}


def adam_step(params, grads, moments, t, cfg, lr=None):
    """Bias-corrected Adam update; returns new (params, moments). ``t`` starts at 1."""
    if t < 1:
        raise ValueError("Adam step counter starts at 1")
    lr = cfg.learning_rate if lr is None else lr
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        m = b1 * moments["m"][k] + (1.0 - b1) * g
        v = b2 * moments["v"][k] + (1.0 - b2) * g * g
        new_p[k] = p - lr * (m / c1) / (np.sqrt(v / c2) + cfg.adam_epsilon)
        new_m[k] = m
        new_v[k] = v
    return new_p, {"m": new_m, "v": new_v}


@dataclass
class TrainingLog:
    seed: int
    train_ids: list = field(default_factory=list)
    train_nll: list = field(default_factory=list)
    val_nll: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    best_epoch: int = -1

    def to_dict(self):
        return asdict(self)


def train_base_learner(train_X, net_cfg, train_cfg, seed=None, val_X=None, train_ids=None,
                       train_y=None, val_y=None):
    """Fit one network with Adam on the NLL.

    ``train_X`` / ``val_X`` are (N, T) arrays of normalized sequences. Targets
    default to each sequence's final element. Returns the parameters from the
    epoch with the lowest validation NLL (training NLL when no validation set
    is given) and the training log.
    """
    seed = train_cfg.seed if seed is None else seed
    train_X = np.asarray(train_X, dtype=np.float64)
    if train_X.ndim != 2 or train_X.shape[0] == 0:
        raise ValueError("train_X must be a nonempty (N, T) array")
    if train_X.shape[1] != net_cfg.sequence_length:
        raise ShapeMismatch(
            f"sequences have length {train_X.shape[1]}, config expects {net_cfg.sequence_length}")
    ty = train_X[:, -1] if train_y is None else np.asarray(train_y, dtype=np.float64)
    if val_X is not None:
        val_X = np.asarray(val_X, dtype=np.float64)
        vy = val_X[:, -1] if val_y is None else np.asarray(val_y, dtype=np.float64)
    rng = np.random.default_rng(seed)
    params = init_params(net_cfg, rng.integers(2 ** 63))
    moments = adam_init(params)
    tlog = TrainingLog(seed=int(seed),
                       train_ids=list(train_ids) if train_ids is not None else list(range(len(ty))))
    best = (math.inf, params)
    step = 0
    n = train_X.shape[0]
    bs = train_cfg.batch_size
    stale = 0
    for epoch in range(train_cfg.epochs):
        order = rng.permutation(n)
        lr = train_cfg.lr_at(epoch)
        losses, norms = [], []
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            loss, grads = loss_and_grads(train_X[idx].T, ty[idx], params, net_cfg)
            if not math.isfinite(loss):
                raise TrainingDiverged(f"non-finite training loss at epoch {epoch}")
            grads, norm = clip_gradients(grads, train_cfg.gradient_clip_norm)
            step += 1
            params, moments = adam_step(params, grads, moments, step, train_cfg, lr)
            losses.append(loss * len(idx))
            norms.append(norm)
        tlog.train_nll.append(float(np.sum(losses) / n))
        tlog.grad_norm.append(float(np.mean(norms)))
        if val_X is not None:
            mu, var, _ = forward_batch(val_X.T, params, net_cfg)
            score = batch_nll(mu, var, vy)
            tlog.val_nll.append(score)
        else:
            score = tlog.train_nll[-1]
        if not math.isfinite(score):
            raise TrainingDiverged(f"non-finite validation loss at epoch {epoch}")
        if score < best[0]:
            best = (score, {k: v.copy() for k, v in params.items()})
            tlog.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if train_cfg.patience is not None and stale >= train_cfg.patience:
                break
        log.debug("seed %d epoch %d train %.4f score %.4f", seed, epoch, tlog.train_nll[-1], score)
    return best[1], tlog


# ---------------------------------------------------------------------------
# model file: u64 little-endian header length, JSON header, float32 LE payload
# ---------------------------------------------------------------------------

def save_model(path, params, config, seed=None, extra=None):
    tensors, offset = [], 0
    chunks = []
    for name, arr in params.items():
        a = np.ascontiguousarray(arr, dtype="<f4")
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset,
                        "nbytes": a.nbytes})
        offset += a.nbytes
        chunks.append(a.tobytes())
    header = {"format": MODEL_FORMAT, "format_version": MODEL_FORMAT_VERSION,
              "config": config.to_dict(), "dtype": "float32-le", "tensors": tensors,
              "training_seed": seed}
    if extra:
        header["extra"] = extra
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for c in chunks:
            fh.write(c)


def load_model(path):
    """Returns (params, config, header)."""
    data = Path(path).read_bytes()
    if len(data) < 8:
        raise ModelFormatError(f"{path}: truncated model file")
    (hlen,) = struct.unpack("<Q", data[:8])
    try:
        header = json.loads(data[8:8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"{path}: bad header: {exc}") from None
    if header.get("format") != MODEL_FORMAT:
        raise ModelFormatError(f"{path}: not an {MODEL_FORMAT} file")
    if header.get("format_version") != MODEL_FORMAT_VERSION:
        raise ModelFormatError(f"{path}: unsupported format version {header.get('format_version')}")
    config = NetworkConfig.from_dict(header["config"])
    payload = data[8 + hlen:]
    params = {}
    for t in header["tensors"]:
        end = t["offset"] + t["nbytes"]
        if end > len(payload):
            raise ModelFormatError(f"{path}: tensor {t['name']} runs past end of file")
        a = np.frombuffer(payload[t["offset"]:end], dtype="<f4").astype(np.float64)
        params[t["name"]] = a.reshape(t["shape"])
    check_params(params, config)
    return params, config, header

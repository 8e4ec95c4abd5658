"""Stacked LSTM predicting the partner's final hand position.

Given the upper-body skeleton frames observed so far, the network emits an
estimate of where the partner's right hand will be at the end of the reach,
at every step. Everything is plain numpy in double precision: forward pass,
backpropagation through time and the Adam optimizer.

Gate order inside every ``4H`` block is input, forget, cell, output.
Parameters are stored in the order ``l0.W, l0.U, l0.b, l1.W, ..., head.W,
head.b``; ``W`` maps the layer input, ``U`` the previous hidden state.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import ContractError, LoadError, NumericalError, ValidationError
from .skeleton import UB, SkeletonSequence

FORMAT_VERSION = 1


@dataclass(frozen=True)
class PredictorConfig:
    layers: int = 2
    hidden_dim: int = 64
    input_dim: int = 45
    output_dim: int = 3
    batch_size: int = 32
    epochs: int = 200
    learning_rate: float = 1e-3
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if min(self.layers, self.hidden_dim, self.input_dim, self.output_dim) <= 0:
            raise ValidationError("network dimensions must be positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValidationError("batch_size must be >= 1 and epochs >= 0")
        object.__setattr__(self, "betas", tuple(self.betas))


@dataclass(frozen=True)
class Standardization:
    """Affine input/output map: ``standardized = (meters - offset) / scale``."""

    offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "offset", np.asarray(self.offset, dtype=float).reshape(3))
        if not self.scale > 0:
            raise ValidationError("scale must be positive")


def fit_standardization(sequences):
    """Mean spine-base position and mean torso length over a dataset."""
    frames = np.concatenate([_frames(s) for s in sequences])
    base = frames[:, UB["spine_base"]]
    torso = np.linalg.norm(frames[:, UB["spine_shoulder"]] - base, axis=-1)
    return Standardization(base.mean(axis=0), float(torso.mean()))


def _frames(seq):
    if isinstance(seq, SkeletonSequence):
        return seq.positions
    return np.asarray(seq, dtype=float)


@dataclass(eq=False)
class PredictorWeights:
    config: PredictorConfig
    params: dict
    standardization: Standardization = field(default_factory=Standardization)

    def __post_init__(self):
        expected = param_shapes(self.config)
        if list(self.params) != list(expected):
            raise ContractError(f"parameter blocks {list(self.params)} != {list(expected)}")
        for name, shape in expected.items():
            arr = np.asarray(self.params[name], dtype=float)
            if arr.shape != shape:
                raise ContractError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ContractError(f"{name} has non-finite entries")
            self.params[name] = arr

    def copy(self):
        return PredictorWeights(self.config, {k: v.copy() for k, v in self.params.items()},
                                self.standardization)

    def to_dict(self):
        cfg = asdict(self.config)
        cfg["betas"] = list(cfg["betas"])
        return {
            "version": FORMAT_VERSION,
            "config": cfg,
            "standardization": {"offset": self.standardization.offset.tolist(),
                                "scale": self.standardization.scale},
            "params": {k: {"shape": list(v.shape), "data": v.reshape(-1).tolist()}
                       for k, v in self.params.items()},
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("version") != FORMAT_VERSION:
            raise LoadError(f"unsupported predictor file version {d.get('version')!r}")
        try:
            cfg = PredictorConfig(**d["config"])
            std = Standardization(**d["standardization"])
            params = {k: np.array(v["data"], dtype=float).reshape(v["shape"])
                      for k, v in d["params"].items()}
            return cls(cfg, params, std)
        except (KeyError, TypeError, ValueError, ContractError) as exc:
            raise LoadError(f"malformed predictor file: {exc}") from exc


def save_weights(path, w):
    Path(path).write_text(json.dumps(w.to_dict()))


def load_weights(path):
    return PredictorWeights.from_dict(json.loads(Path(path).read_text()))


def param_shapes(cfg):
    shapes = {}
    h = cfg.hidden_dim
    n_in = cfg.input_dim
    for layer in range(cfg.layers):
        shapes[f"l{layer}.W"] = (4 * h, n_in)
        shapes[f"l{layer}.U"] = (4 * h, h)
        shapes[f"l{layer}.b"] = (4 * h,)
        n_in = h
    shapes["head.W"] = (cfg.output_dim, h)
    shapes["head.b"] = (cfg.output_dim,)
    return shapes


def init_weights(cfg, standardization=None, seed=None):
    """Uniform(-1/sqrt(H), 1/sqrt(H)) parameters with forget-gate bias +1."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    bound = 1.0 / np.sqrt(cfg.hidden_dim)
    params = {}
    for name, shape in param_shapes(cfg).items():
        params[name] = rng.uniform(-bound, bound, size=shape)
        if name.endswith(".b") and not name.startswith("head"):
            h = cfg.hidden_dim
            params[name][h:2 * h] += 1.0
    return PredictorWeights(cfg, params, standardization or Standardization())


def zero_weights(cfg, standardization=None):
    params = {name: np.zeros(shape) for name, shape in param_shapes(cfg).items()}
    return PredictorWeights(cfg, params, standardization or Standardization())


# ---------------------------------------------------------------------------
# forward / backward


def standardize(w, frames):
    """``(n, 15, 3)`` meters -> ``(n, 45)`` network inputs."""
    frames = _frames(frames)
    st = w.standardization
    x = (frames - st.offset) / st.scale
    x = x.reshape(len(frames), -1)
    if x.shape[1] != w.config.input_dim:
        raise ContractError(f"input has {x.shape[1]} features, network expects {w.config.input_dim}")
    return x


def _lstm_layer(W, U, b, X):
    n_batch, n_steps, _ = X.shape
    h_dim = U.shape[1]
    pre = X @ W.T + b
    hs = np.empty((n_batch, n_steps, h_dim))
    cs = np.empty((n_batch, n_steps, h_dim))
    acts = np.empty((n_batch, n_steps, 4 * h_dim))
    h = np.zeros((n_batch, h_dim))
    c = np.zeros((n_batch, h_dim))
    for t in range(n_steps):
        a = pre[:, t] + h @ U.T
        gates = np.empty_like(a)
        gates[:, :2 * h_dim] = expit(a[:, :2 * h_dim])
        gates[:, 2 * h_dim:3 * h_dim] = np.tanh(a[:, 2 * h_dim:3 * h_dim])
        gates[:, 3 * h_dim:] = expit(a[:, 3 * h_dim:])
        i, f, g, o = np.split(gates, 4, axis=1)
        c = f * c + i * g
        h = o * np.tanh(c)
        hs[:, t], cs[:, t], acts[:, t] = h, c, gates
    return hs, (X, acts, cs, hs)


def _lstm_layer_backward(W, U, cache, dH):
    X, acts, cs, hs = cache
    n_batch, n_steps, h_dim = hs.shape
    dpre = np.empty_like(acts)
    dh_next = np.zeros((n_batch, h_dim))
    dc_next = np.zeros((n_batch, h_dim))
    for t in range(n_steps - 1, -1, -1):
        i, f, g, o = np.split(acts[:, t], 4, axis=1)
        c_prev = cs[:, t - 1] if t > 0 else 0.0
        tc = np.tanh(cs[:, t])
        dh = dH[:, t] + dh_next
        dc = dh * o * (1.0 - tc ** 2) + dc_next
        da = dpre[:, t]
        da[:, :h_dim] = dc * g * i * (1.0 - i)
        da[:, h_dim:2 * h_dim] = dc * c_prev * f * (1.0 - f)
        da[:, 2 * h_dim:3 * h_dim] = dc * i * (1.0 - g ** 2)
        da[:, 3 * h_dim:] = dh * tc * o * (1.0 - o)
        dh_next = da @ U
        dc_next = dc * f
    h_prev = np.zeros_like(hs)
    h_prev[:, 1:] = hs[:, :-1]
    grads = {
        "W": np.einsum("bta,bti->ai", dpre, X),
        "U": np.einsum("bta,bth->ah", dpre, h_prev),
        "b": dpre.sum(axis=(0, 1)),
    }
    return grads, dpre @ W


def _network(params, cfg, X):
    caches = []
    out = X
    for layer in range(cfg.layers):
        out, cache = _lstm_layer(params[f"l{layer}.W"], params[f"l{layer}.U"],
                                 params[f"l{layer}.b"], out)
        caches.append(cache)
    y = out @ params["head.W"].T + params["head.b"]
    return y, (caches, out)


def _network_backward(params, cfg, cache, dY):
    caches, top = cache
    grads = {
        "head.W": np.einsum("bto,bth->oh", dY, top),
        "head.b": dY.sum(axis=(0, 1)),
    }
    dH = dY @ params["head.W"]
    for layer in range(cfg.layers - 1, -1, -1):
        g, dH = _lstm_layer_backward(params[f"l{layer}.W"], params[f"l{layer}.U"], caches[layer], dH)
        for k, v in g.items():
            grads[f"l{layer}.{k}"] = v
    return {name: grads[name] for name in params}


def forward(w, frames):
    """Per-step final-hand estimates ``(n, 3)`` in meters."""
    x = standardize(w, frames)
    y, _ = _network(w.params, w.config, x[None])
    st = w.standardization
    return st.offset + st.scale * y[0]


def loss(trace, target):
    """Mean squared distance (m^2) of every step's estimate to ``target``."""
    trace = np.asarray(trace, dtype=float).reshape(-1, 3)
    if len(trace) == 0:
        raise ContractError("empty prediction trace")
    return float(np.mean(np.sum((trace - np.asarray(target, dtype=float)) ** 2, axis=-1)))


def _batch_loss_and_grad(w, X, mask, targets):
    """Mean over sequences of per-sequence :func:`loss`, and its gradient.

    ``X`` is ``(B, T, I)`` standardized input, ``mask`` ``(B, T)`` marks valid
    steps, ``targets`` ``(B, 3)`` final hand positions in meters.
    """
    st = w.standardization
    y, cache = _network(w.params, w.config, X)
    pred = st.offset + st.scale * y
    diff = pred - targets[:, None, :]
    lengths = mask.sum(axis=1)
    per_step = np.sum(diff ** 2, axis=-1) * mask
    value = float(np.mean(per_step.sum(axis=1) / lengths))
    weight = mask / (lengths[:, None] * len(X))
    dY = 2.0 * st.scale * diff * weight[..., None]
    return value, _network_backward(w.params, w.config, cache, dY)


def loss_and_grad(w, frames, target):
    """Loss of one sequence and its gradient for every parameter block."""
    x = standardize(w, frames)[None]
    mask = np.ones(x.shape[:2])
    return _batch_loss_and_grad(w, x, mask, np.asarray(target, dtype=float).reshape(1, 3))


def gradient_check(w, frames, target, h=1e-5, floor=1e-6):
    """Largest relative error between BPTT and central finite differences.

    The relative error of one parameter is ``|a - n| / max(|a|, |n|, floor)``;
    ``floor`` keeps parameters with vanishing gradients from dominating.
    """
    _, grads = loss_and_grad(w, frames, target)
    probe = w.copy()
    worst = 0.0
    for name, arr in probe.params.items():
        flat = arr.reshape(-1)
        g = grads[name].reshape(-1)
        for k in range(flat.size):
            old = flat[k]
            flat[k] = old + h
            up = loss(forward(probe, frames), target)
            flat[k] = old - h
            down = loss(forward(probe, frames), target)
            flat[k] = old
            num = (up - down) / (2.0 * h)
            err = abs(g[k] - num) / max(abs(g[k]), abs(num), floor)
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# incremental inference


class PredictorSession:
    """Carries recurrent state so each new frame costs one step."""

    def __init__(self, w):
        self.w = w
        h = w.config.hidden_dim
        self.h = [np.zeros(h) for _ in range(w.config.layers)]
        self.c = [np.zeros(h) for _ in range(w.config.layers)]
        self.steps = 0

    def step(self, frame):
        w = self.w
        p = w.params
        hd = w.config.hidden_dim
        x = standardize(w, np.asarray(frame, dtype=float)[None])[0]
        for layer in range(w.config.layers):
            a = p[f"l{layer}.W"] @ x + p[f"l{layer}.b"] + p[f"l{layer}.U"] @ self.h[layer]
            i = expit(a[:hd])
            f = expit(a[hd:2 * hd])
            g = np.tanh(a[2 * hd:3 * hd])
            o = expit(a[3 * hd:])
            self.c[layer] = f * self.c[layer] + i * g
            self.h[layer] = o * np.tanh(self.c[layer])
            x = self.h[layer]
        self.steps += 1
        y = p["head.W"] @ x + p["head.b"]
        return w.standardization.offset + w.standardization.scale * y


def predict_final_hand(w, prefix):
    """Estimate after the last frame of ``prefix``."""
    frames = _frames(prefix)
    if len(frames) == 0:
        raise ContractError("empty prefix")
    return forward(w, frames)[-1]


# ---------------------------------------------------------------------------
# training


class Adam:
    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.lr, self.betas, self.eps = lr, betas, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for k in params:
            g = grads[k]
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def _pad(xs, idx):
    n_steps = max(len(xs[i]) for i in idx)
    X = np.zeros((len(idx), n_steps, xs[idx[0]].shape[1]))
    mask = np.zeros((len(idx), n_steps))
    for row, i in enumerate(idx):
        X[row, :len(xs[i])] = xs[i]
        mask[row, :len(xs[i])] = 1.0
    return X, mask


def train(dataset, cfg=None, standardization=None, max_steps=None, callback=None):
    """Fit the predictor on ``[(frames, final_hand), ...]``.

    Returns the trained weights and the mean training loss (m^2) of every
    epoch. Sequences of a batch are zero-padded at the end and masked out of
    the loss. ``max_steps`` stops after that many optimizer updates.
    """
    cfg = cfg or PredictorConfig()
    if not dataset:
        raise ValidationError("empty training set")
    standardization = standardization or fit_standardization([f for f, _ in dataset])
    w = init_weights(cfg, standardization)
    xs = [standardize(w, f) for f, _ in dataset]
    targets = np.array([np.asarray(h, dtype=float).reshape(3) for _, h in dataset])
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(w.params, cfg.learning_rate, cfg.betas, cfg.eps)
    curve = []
    steps = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(dataset))
        total = 0.0
        seen = 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            X, mask = _pad(xs, idx)
            value, grads = _batch_loss_and_grad(w, X, mask, targets[idx])
            if not np.isfinite(value):
                norm = float(np.sqrt(sum(np.sum(g ** 2) for g in grads.values())))
                raise NumericalError(
                    f"non-finite loss at epoch {epoch}, batch {start // cfg.batch_size}, "
                    f"gradient norm {norm:.3g}")
            opt.step(w.params, grads)
            total += value * len(idx)
            seen += len(idx)
            steps += 1
            if max_steps is not None and steps >= max_steps:
                break
        curve.append(total / seen)
        if callback is not None:
            callback(epoch, curve[-1])
        if max_steps is not None and steps >= max_steps:
            break
    return w, curve

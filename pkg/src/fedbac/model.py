"""MLP learner, the additive global+cluster predictor, and local SGD.

Parameters live in flat float64 vectors (``ParamVector``); layer weights are
reshaped views into them. A network is described by a ``LearnerConfig``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .data import Dataset
from .errors import ConfigError, InputError
from .rng import RngStream

ParamVector = np.ndarray


@dataclass(frozen=True)
class LearnerConfig:
    input_dim: int
    hidden_dims: tuple[int, ...] = (32,)
    num_classes: int = 10
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.input_dim < 1 or any(h < 1 for h in self.hidden_dims):
            raise ConfigError("all layer widths must be >= 1")
        if self.activation != "relu":
            raise ConfigError(f"unsupported activation {self.activation!r}")

    @property
    def num_params(self) -> int:
        return _layout(self)[-1][1].stop

    def widened(self, factor: int) -> "LearnerConfig":
        return replace(self, hidden_dims=tuple(h * factor for h in self.hidden_dims))


@dataclass(frozen=True)
class SgdHyperparams:
    lr_init: float = 0.01
    lr_decay: float = 0.995
    momentum: float = 0.9
    weight_decay: float = 5e-4
    clip_norm: float = 1.0
    local_epochs: int = 5
    cluster_l2: float = 1e-3
    batch_size: int = 32

    def __post_init__(self):
        if not 0 < self.lr_decay <= 1:
            raise ConfigError("lr_decay must lie in (0, 1]")
        if self.clip_norm <= 0:
            raise ConfigError("clip_norm must be > 0")
        if self.local_epochs < 1:
            raise ConfigError("local_epochs must be >= 1")
        if self.cluster_l2 < 0 or self.weight_decay < 0 or self.lr_init < 0:
            raise ConfigError("lr_init, weight_decay and cluster_l2 must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")

    def lr(self, round_index: int) -> float:
        return self.lr_init * self.lr_decay**round_index


@dataclass(frozen=True, eq=False)
class AdditiveModel:
    """Logits = global network + cluster network.

    ``cluster_params is None`` means the residual network is absent (f == 0),
    which is how the single-model baselines are represented.
    """

    global_params: ParamVector
    cluster_params: ParamVector | None
    global_config: LearnerConfig
    cluster_config: LearnerConfig | None = field(default=None)

    def __post_init__(self):
        g = self.global_config
        if self.global_params.shape != (g.num_params,):
            raise ConfigError("global_params length does not match its config")
        if self.cluster_params is not None:
            c = self.cluster_config or g
            object.__setattr__(self, "cluster_config", c)
            if (c.input_dim, c.num_classes) != (g.input_dim, g.num_classes):
                raise ConfigError("global and cluster networks map different shapes")
            if self.cluster_params.shape != (c.num_params,):
                raise ConfigError("cluster_params length does not match its config")

    @property
    def num_classes(self) -> int:
        return self.global_config.num_classes

    def flat(self) -> np.ndarray:
        if self.cluster_params is None:
            return self.global_params.copy()
        return np.concatenate([self.global_params, self.cluster_params])

    def with_flat(self, theta: np.ndarray) -> "AdditiveModel":
        d = self.global_config.num_params
        cl = None if self.cluster_params is None else theta[d:].copy()
        return replace(self, global_params=theta[:d].copy(), cluster_params=cl)


@lru_cache(maxsize=None)
def _layout(cfg: LearnerConfig) -> tuple[tuple[slice, slice, tuple[int, int]], ...]:
    dims = (cfg.input_dim, *cfg.hidden_dims, cfg.num_classes)
    out = []
    pos = 0
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w = slice(pos, pos + fan_in * fan_out)
        pos = w.stop
        b = slice(pos, pos + fan_out)
        pos = b.stop
        out.append((w, b, (fan_in, fan_out)))
    return tuple(out)


def init_params(cfg: LearnerConfig, rng: RngStream) -> ParamVector:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases."""
    theta = np.empty(cfg.num_params)
    for w, b, (fan_in, _) in _layout(cfg):
        bound = 1.0 / np.sqrt(fan_in)
        theta[w] = rng.gen.uniform(-bound, bound, size=w.stop - w.start)
        theta[b] = rng.gen.uniform(-bound, bound, size=b.stop - b.start)
    return theta


def mlp_forward(cfg: LearnerConfig, theta: ParamVector, X: np.ndarray):
    """Returns ``(logits, cache)``; the cache feeds ``mlp_backward``."""
    layers = _layout(cfg)
    acts = [X]
    h = X
    last = len(layers) - 1
    for j, (w, b, shape) in enumerate(layers):
        z = h @ theta[w].reshape(shape) + theta[b]
        if j < last:
            h = np.maximum(z, 0.0)
            acts.append(h)
        else:
            h = z
    return h, acts


def mlp_backward(cfg: LearnerConfig, theta: ParamVector, acts, dout: np.ndarray) -> np.ndarray:
    grad = np.empty_like(theta)
    layers = _layout(cfg)
    for j in range(len(layers) - 1, -1, -1):
        w, b, shape = layers[j]
        grad[w] = (acts[j].T @ dout).ravel()
        grad[b] = dout.sum(axis=0)
        if j > 0:
            dout = (dout @ theta[w].reshape(shape).T) * (acts[j] > 0)
    return grad


def _check_input(model: AdditiveModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    squeeze = X.ndim == 1
    X2 = X[None, :] if squeeze else X
    if X2.ndim != 2 or X2.shape[1] != model.global_config.input_dim:
        raise ConfigError(
            f"input has shape {X.shape}, model expects input_dim={model.global_config.input_dim}"
        )
    return X2


def forward_additive(model: AdditiveModel, x: np.ndarray) -> np.ndarray:
    """h(x; global) + f(x; cluster). Accepts one sample or a batch."""
    X = _check_input(model, x)
    if not np.all(np.isfinite(X)):
        raise InputError("input must be finite")
    out, _ = mlp_forward(model.global_config, model.global_params, X)
    if model.cluster_params is not None:
        out = out + mlp_forward(model.cluster_config, model.cluster_params, X)[0]
    return out[0] if np.ndim(x) == 1 else out


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy_loss(logits: np.ndarray, label: int) -> float:
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= label < logits.shape[-1]:
        raise InputError(f"label {label} outside [0, {logits.shape[-1]})")
    return float(-_log_softmax(logits)[label])


def objective_and_grad(
    model: AdditiveModel,
    X: np.ndarray,
    y: np.ndarray,
    weight_decay: float = 0.0,
    cluster_l2: float = 0.0,
) -> tuple[float, np.ndarray]:
    """Mean cross-entropy + wd/2 * ||theta||^2 + cluster_l2 * ||theta_k||^2.

    The gradient is over the concatenation (global, cluster).
    """
    loss, grad = _data_loss_and_grad(model, X, y)
    theta = model.flat()
    loss += 0.5 * weight_decay * float(theta @ theta)
    grad += weight_decay * theta
    if model.cluster_params is not None and cluster_l2:
        d = model.global_params.size
        ck = model.cluster_params
        loss += cluster_l2 * float(ck @ ck)
        grad[d:] += 2.0 * cluster_l2 * ck
    return loss, grad


def _data_loss_and_grad(model: AdditiveModel, X, y):
    gcfg = model.global_config
    logits, gacts = mlp_forward(gcfg, model.global_params, X)
    if model.cluster_params is not None:
        flog, facts = mlp_forward(model.cluster_config, model.cluster_params, X)
        logits = logits + flog
    logp = _log_softmax(logits)
    n = y.shape[0]
    rows = np.arange(n)
    loss = float(-logp[rows, y].mean())
    dlog = np.exp(logp)
    dlog[rows, y] -= 1.0
    dlog /= n
    g = mlp_backward(gcfg, model.global_params, gacts, dlog)
    if model.cluster_params is None:
        return loss, g
    f = mlp_backward(model.cluster_config, model.cluster_params, facts, dlog)
    return loss, np.concatenate([g, f])


def clip_by_norm(g: np.ndarray, max_norm: float) -> np.ndarray:
    norm = float(np.sqrt(g @ g))
    if norm > max_norm:
        return g * (max_norm / norm)
    return g


def local_sgd(
    model: AdditiveModel, data: Dataset, hp: SgdHyperparams, round_index: int, rng: RngStream
) -> AdditiveModel:
    """E epochs of shuffled minibatch SGD over both networks jointly.

    Per step: gradient of (batch CE + cluster_l2 * ||theta_k||^2) clipped to
    ``clip_norm``; weight decay added after clipping; heavy-ball momentum with a
    buffer that starts at zero every call.
    """
    n = len(data)
    if n == 0:
        raise InputError("local_sgd needs a nonempty dataset")
    lr = hp.lr(round_index)
    theta = model.flat()
    if lr == 0.0:
        return model.with_flat(theta)
    d = model.global_params.size
    has_cluster = model.cluster_params is not None
    velocity = np.zeros_like(theta)
    work = model
    for _ in range(hp.local_epochs):
        order = rng.gen.permutation(n)
        for start in range(0, n, hp.batch_size):
            idx = order[start : start + hp.batch_size]
            _, g = _data_loss_and_grad(work, data.X[idx], data.y[idx])
            if has_cluster and hp.cluster_l2:
                g[d:] += 2.0 * hp.cluster_l2 * theta[d:]
            g = clip_by_norm(g, hp.clip_norm)
            if hp.weight_decay:
                g = g + hp.weight_decay * theta
            if hp.momentum:
                velocity = hp.momentum * velocity + g
                step = velocity
            else:
                step = g
            theta = theta - lr * step
            work = _view(model, theta, d, has_cluster)
    if not np.all(np.isfinite(theta)):
        raise FloatingPointError("local_sgd produced non-finite parameters")
    return model.with_flat(theta)


def _view(model: AdditiveModel, theta: np.ndarray, d: int, has_cluster: bool) -> AdditiveModel:
    # cheap rebinding without re-validating shapes every step
    m = object.__new__(AdditiveModel)
    object.__setattr__(m, "global_params", theta[:d])
    object.__setattr__(m, "cluster_params", theta[d:] if has_cluster else None)
    object.__setattr__(m, "global_config", model.global_config)
    object.__setattr__(m, "cluster_config", model.cluster_config)
    return m


def evaluate(model: AdditiveModel, data: Dataset) -> tuple[float, float]:
    """(accuracy, mean cross-entropy); argmax ties go to the lowest class."""
    if len(data) == 0:
        raise InputError("cannot evaluate on an empty dataset")
    logits = forward_additive(model, data.X)
    if logits.ndim == 1:
        logits = logits[None, :]
    logp = _log_softmax(logits)
    rows = np.arange(len(data))
    acc = float(np.mean(np.argmax(logits, axis=1) == data.y))
    return acc, float(-logp[rows, data.y].mean())


def gradient_check(
    config: LearnerConfig,
    rng: RngStream,
    n_samples: int = 8,
    weight_decay: float = 5e-4,
    cluster_l2: float = 1e-3,
    step: float = 1e-5,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Builds an additive model with two networks of ``config`` and a random batch.
    """
    if 2 * config.num_params > 1000:
        raise ConfigError("gradient_check is meant for configs of at most 500 parameters")
    model = AdditiveModel(
        init_params(config, rng), init_params(config, rng), config, config
    )
    X = rng.gen.standard_normal((n_samples, config.input_dim))
    y = rng.gen.integers(0, config.num_classes, size=n_samples)
    _, analytic = objective_and_grad(model, X, y, weight_decay, cluster_l2)
    theta = model.flat()
    numeric = np.empty_like(theta)
    for j in range(theta.size):
        tp = theta.copy()
        tp[j] += step
        tm = theta.copy()
        tm[j] -= step
        fp, _ = objective_and_grad(model.with_flat(tp), X, y, weight_decay, cluster_l2)
        fm, _ = objective_and_grad(model.with_flat(tm), X, y, weight_decay, cluster_l2)
        numeric[j] = (fp - fm) / (2 * step)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-5)
    return float(np.max(np.abs(analytic - numeric) / denom))

"""Feedforward network mapping bus loads to per-line binding indicators.

The output layer has ``2 * n_line`` sigmoid units: the first ``n_line`` are
the lower-limit (nu) indicators, the rest the upper-limit (mu) ones.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DivergenceError, DomainError
from .solution import BindingSet

FORMAT_TAG = "marketclear-mlp/1"
CLAMP = 1e-12


@dataclass
class LabeledSample:
    loads: np.ndarray
    target_nu: np.ndarray
    target_mu: np.ndarray

    def __post_init__(self):
        self.loads = np.asarray(self.loads, dtype=float)
        self.target_nu = np.asarray(self.target_nu, dtype=float)
        self.target_mu = np.asarray(self.target_mu, dtype=float)
        for t in (self.target_nu, self.target_mu):
            if not np.all((t == 0) | (t == 1)):
                raise ValueError("targets must be exactly 0 or 1")
        if np.any(self.target_nu * self.target_mu):
            raise ValueError("a line cannot bind at both limits")

    @classmethod
    def from_binding(cls, loads, bset, n_line):
        nu, mu = bset.masks(n_line)
        return cls(loads, nu, mu)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 100
    batch_size: int = 32
    seed: int = 0
    optimizer: str = "adam"
    loss_weights: np.ndarray | None = None

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.optimizer != "adam":
            raise ValueError(f"unsupported optimizer {self.optimizer!r}")


@dataclass
class MlpModel:
    layer_dims: list
    weights: list
    biases: list
    hidden_activation: str = "relu"
    output_activation: str = "sigmoid"
    input_offset: np.ndarray | None = None
    input_scale: np.ndarray | None = None

    @property
    def n_input(self):
        return self.layer_dims[0]

    @property
    def n_line(self):
        return self.layer_dims[-1] // 2

    def parameters(self):
        return [*self.weights, *self.biases]


def init_mlp(n_bus, n_line, hidden=(500, 500, 500, 500), seed=0, hidden_activation="relu"):
    """He-initialised hidden layers, zero-initialised output layer."""
    if hidden_activation not in _ACTIVATIONS:
        raise ValueError(f"unknown activation {hidden_activation!r}")
    dims = [int(n_bus), *map(int, hidden), 2 * int(n_line)]
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        if i == len(dims) - 2:
            weights.append(np.zeros((a, b)))
        else:
            weights.append(rng.standard_normal((a, b)) * np.sqrt(2.0 / a))
        biases.append(np.zeros(b))
    return MlpModel(layer_dims=dims, weights=weights, biases=biases,
                    hidden_activation=hidden_activation)


def _relu(z):
    return np.maximum(z, 0.0)


def _relu_grad(z):
    return (z > 0).astype(z.dtype)


def _tanh_grad(z):
    return 1.0 - np.tanh(z) ** 2


_ACTIVATIONS = {"relu": (_relu, _relu_grad), "tanh": (np.tanh, _tanh_grad)}


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _normalize(model, x):
    if model.input_offset is None:
        return x
    return (x - model.input_offset) / model.input_scale


def _forward_cache(model, x):
    act = _ACTIVATIONS[model.hidden_activation][0]
    a = _normalize(model, x)
    pre, post = [], [a]
    last = len(model.weights) - 1
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ W + b
        pre.append(z)
        a = z if i == last else act(z)
        post.append(a)
    return pre, post


def forward(model, x):
    """Return ``(y_nu, y_mu)``, each clamped into ``[1e-12, 1 - 1e-12]``."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.n_input:
        raise DimensionError(f"input has {x.shape[-1]} entries, expected {model.n_input}")
    _, post = _forward_cache(model, x)
    y = np.clip(_sigmoid(post[-1]), CLAMP, 1.0 - CLAMP)
    n = model.n_line
    return y[..., :n], y[..., n:]


def logistic_loss(y, target):
    y = np.asarray(y, dtype=float)
    if np.any(np.isnan(y)) or np.any((y <= 0) | (y >= 1)):
        raise DomainError("logistic loss needs outputs strictly inside (0, 1)")
    target = np.asarray(target)
    if not np.all((target == 0) | (target == 1)):
        raise DomainError("logistic loss needs 0/1 targets")
    return np.where(target == 1, -np.log(y), -np.log1p(-y))


def stack_samples(samples):
    X = np.stack([s.loads for s in samples])
    T = np.hstack([np.stack([s.target_nu for s in samples]),
                   np.stack([s.target_mu for s in samples])])
    return X, T


def _weights_row(weights, n_line):
    if weights is None:
        return None
    w = np.asarray(weights, dtype=float)
    if w.shape[-1] != n_line:
        raise DimensionError(f"loss weights have {w.shape[-1]} entries, expected {n_line}")
    return np.concatenate([w, w], axis=-1)


def _loss_arrays(model, X, T, weights=None):
    y_nu, y_mu = forward(model, X)
    per = logistic_loss(np.hstack([y_nu, y_mu]), T)
    w = _weights_row(weights, model.n_line)
    if w is not None:
        per = per * w
    return float(per.sum())


def batch_loss(model, samples, weights=None):
    """Sum over samples and lines of the nu- and mu-block logistic losses."""
    samples = list(samples)
    if not samples:
        raise ValueError("batch_loss needs at least one sample")
    X, T = stack_samples(samples)
    return _loss_arrays(model, X, T, weights)


def gradients(model, X, T, weights=None):
    """Analytic gradient of the summed loss; same order as ``parameters()``."""
    grad_act = _ACTIVATIONS[model.hidden_activation][1]
    pre, post = _forward_cache(model, X)
    delta = _sigmoid(pre[-1]) - T
    w = _weights_row(weights, model.n_line)
    if w is not None:
        delta = delta * w
    gW, gb = [None] * len(model.weights), [None] * len(model.weights)
    for i in range(len(model.weights) - 1, -1, -1):
        gW[i] = post[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i:
            delta = (delta @ model.weights[i].T) * grad_act(pre[i - 1])
    return [*gW, *gb]


def fit_normalization(model, X):
    """Z-score inputs with training statistics (constant inputs keep scale 1)."""
    model = copy.deepcopy(model)
    model.input_offset = X.mean(axis=0)
    std = X.std(axis=0)
    model.input_scale = np.where(std > 1e-12, std, 1.0)
    return model


def train(model, samples, config=None):
    """Adam on mini-batches; returns the trained copy and per-epoch loss.

    ``history[0]`` is the loss before the first update.
    """
    config = config or TrainConfig()
    samples = list(samples)
    if not samples:
        raise ValueError("cannot train on an empty dataset")
    X, T = stack_samples(samples)
    model = fit_normalization(model, X)
    rng = np.random.default_rng(config.seed)
    params = model.parameters()
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step = 0
    weights = config.loss_weights
    history = [_loss_arrays(model, X, T, weights)]
    for _ in range(config.epochs):
        order = rng.permutation(len(X))
        for start in range(0, len(X), config.batch_size):
            idx = order[start:start + config.batch_size]
            w = weights if weights is None or np.ndim(weights) == 1 else weights[idx]
            grads = gradients(model, X[idx], T[idx], w)
            step += 1
            lr = config.learning_rate * np.sqrt(1 - beta2 ** step) / (1 - beta1 ** step)
            for p, g, mi, vi in zip(params, grads, m, v):
                mi *= beta1
                mi += (1 - beta1) * g
                vi *= beta2
                vi += (1 - beta2) * g * g
                p -= lr * mi / (np.sqrt(vi) + eps)
        loss = _loss_arrays(model, X, T, weights)
        if not np.isfinite(loss):
            raise DivergenceError(f"training loss became {loss}")
        history.append(loss)
    return model, history


def predict_binding(model, x, threshold=0.5):
    """Threshold the outputs (strict ``>``); a line claimed by both blocks goes
    to whichever activation is larger, ties to the upper limit."""
    y_nu, y_mu = forward(model, x)
    nu = y_nu > threshold
    mu = y_mu > threshold
    both = nu & mu
    nu = nu & ~(both & (y_mu >= y_nu))
    mu = mu & ~(both & (y_nu > y_mu))
    return BindingSet.from_masks(nu, mu)


def misidentification_count(predicted, truth):
    """Lines labelled differently in either block, and that count relative to
    the number of truly binding entries (0 when nothing binds)."""
    count = (len(predicted.upper ^ truth.upper) + len(predicted.lower ^ truth.lower))
    n_true = len(truth)
    return count, (count / n_true if n_true else 0.0)


def format_cell(count, fraction):
    return f"{count}({fraction:.2f})"


def dual_loss_weights(mu, nu, floor=1.0):
    """Per-line weights growing with the mean dual magnitude of each line."""
    mag = np.mean(np.abs(np.asarray(mu)) + np.abs(np.asarray(nu)), axis=0)
    top = mag.max()
    return floor + (mag / top if top > 0 else mag)


# -- serialization ------------------------------------------------------------

def model_to_json(model):
    raw = {
        "format": FORMAT_TAG,
        "layer_dims": list(model.layer_dims),
        "hidden_activation": model.hidden_activation,
        "output_activation": model.output_activation,
        "weights": [W.tolist() for W in model.weights],
        "biases": [b.tolist() for b in model.biases],
        "input_offset": None if model.input_offset is None else model.input_offset.tolist(),
        "input_scale": None if model.input_scale is None else model.input_scale.tolist(),
    }
    return json.dumps(raw)


def model_from_json(text):
    raw = json.loads(text)
    if raw.get("format") != FORMAT_TAG:
        raise ValueError(f"unsupported model format {raw.get('format')!r}")

    def arr(x):
        return None if x is None else np.array(x, dtype=float)

    return MlpModel(
        layer_dims=list(raw["layer_dims"]),
        weights=[np.array(W, dtype=float).reshape(a, b) for W, a, b in
                 zip(raw["weights"], raw["layer_dims"][:-1], raw["layer_dims"][1:])],
        biases=[np.array(b, dtype=float) for b in raw["biases"]],
        hidden_activation=raw["hidden_activation"],
        output_activation=raw["output_activation"],
        input_offset=arr(raw["input_offset"]),
        input_scale=arr(raw["input_scale"]),
    )

"""Linear and single-hidden-layer classifiers with an extra size head.

The class path maps an input through an optional relu hidden layer to softmax
logits; the size head is a separate linear readout of the same representation
(the input itself for the linear model, the hidden activation otherwise).
A constant-1 feature is appended for every bias.  The optimizer is a
from-scratch adaptive-moment rule with per-parameter-group step sizes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class ModelParams:
    class_weights: np.ndarray  # (rep_dim + 1, n_classes), last row is the bias
    size_head: np.ndarray  # (rep_dim,), no bias
    hidden: np.ndarray | None = None  # (d + 1, width) when present

    @property
    def n_classes(self) -> int:
        return self.class_weights.shape[1]

    @property
    def rep_dim(self) -> int:
        return self.class_weights.shape[0] - 1


def init_params(n_features, n_classes, hidden_width=None, rng=None) -> ModelParams:
    """Symmetric uniform init scaled by 1/sqrt(fan_in)."""
    rng = np.random.default_rng(rng)

    def uniform(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    hidden = None
    rep_dim = n_features
    if hidden_width is not None:
        hidden = uniform((n_features + 1, hidden_width), n_features + 1)
        rep_dim = hidden_width
    class_weights = uniform((rep_dim + 1, n_classes), rep_dim + 1)
    size_head = uniform(rep_dim, rep_dim)
    return ModelParams(class_weights=class_weights, size_head=size_head, hidden=hidden)


def _with_bias(X: np.ndarray) -> np.ndarray:
    return np.concatenate([X, np.ones((X.shape[0], 1))], axis=1)


def representation(params: ModelParams, X: np.ndarray) -> np.ndarray:
    """Representation fed to both heads: the input, or the relu hidden layer."""
    if params.hidden is None:
        return X
    return np.maximum(_with_bias(X) @ params.hidden, 0.0)


def predict_logits(params: ModelParams, X: np.ndarray) -> np.ndarray:
    return _with_bias(representation(params, X)) @ params.class_weights


def forward(params: ModelParams, x: np.ndarray):
    """Single-example forward pass: (class logits, size margin, representation)."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size != (params.hidden.shape[0] - 1 if params.hidden is not None else params.rep_dim):
        raise ValueError("input dimension does not match the model")
    rep = representation(params, x[None, :])[0]
    logits = params.class_weights[:-1].T @ rep + params.class_weights[-1]
    margin = float(params.size_head @ rep)
    return logits, margin, rep


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def erm_loss_and_grad(params: ModelParams, X, y, weights=None):
    """Softmax cross-entropy and its gradient wrt the class-path parameters.

    ``weights`` reweights the per-example terms (default: uniform mean); the
    loss is ``sum_i weights_i * ce_i``.  Returns ``(loss, grads)`` with grads
    keyed like the parameter fields.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if X.shape[0] == 0:
        raise ValueError("batch must be nonempty")
    if np.any(y < 0) or np.any(y >= params.n_classes):
        raise ValueError("label out of range")
    if weights is None:
        weights = np.full(X.shape[0], 1.0 / X.shape[0])

    rep = representation(params, X)
    rep_b = _with_bias(rep)
    logits = rep_b @ params.class_weights
    logp = _log_softmax(logits)
    loss = float(-(weights * logp[np.arange(len(y)), y]).sum())

    delta = np.exp(logp)
    delta[np.arange(len(y)), y] -= 1.0
    delta *= weights[:, None]
    grads = {"class_weights": rep_b.T @ delta}
    if params.hidden is not None:
        d_rep = delta @ params.class_weights[:-1].T
        d_rep[rep <= 0] = 0.0
        grads["hidden"] = _with_bias(X).T @ d_rep
    return loss, grads


def representation_backward(params: ModelParams, X, d_rep) -> dict[str, np.ndarray]:
    """Backpropagate an upstream representation gradient into shared weights.

    Empty for the linear model (the representation is the input itself).
    """
    if params.hidden is None:
        return {}
    pre = _with_bias(np.asarray(X, dtype=float)) @ params.hidden
    d = np.where(pre > 0, d_rep, 0.0)
    return {"hidden": _with_bias(X).T @ d}


def per_example_grad_norms(params: ModelParams, X, y) -> np.ndarray:
    """Norm of each example's class-path cross-entropy gradient.

    Per-example gradients are outer products, so their Frobenius norms
    factor into vector norms; no materialization needed.  Used to probe the
    bounded-gradient and variance assumptions behind the convergence rate.
    """
    X = np.asarray(X, dtype=float)
    rep = representation(params, X)
    rep_b = _with_bias(rep)
    logp = _log_softmax(rep_b @ params.class_weights)
    delta = np.exp(logp)
    delta[np.arange(len(y)), y] -= 1.0
    sq = np.sum(rep_b**2, axis=1) * np.sum(delta**2, axis=1)
    if params.hidden is not None:
        d_rep = delta @ params.class_weights[:-1].T
        d_rep[rep <= 0] = 0.0
        sq += np.sum(_with_bias(X) ** 2, axis=1) * np.sum(d_rep**2, axis=1)
    return np.sqrt(sq)


class Adam:
    """Adaptive-moment optimizer over a dict of named parameter groups.

    Decay rates 0.9/0.999, denominator offset 1e-8, bias-corrected moments,
    one step size per group name.  ``step`` returns a new parameter dict and
    leaves groups without a gradient untouched.
    """

    def __init__(self, step_sizes: dict[str, float]):
        self.step_sizes = dict(step_sizes)
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        self.t += 1
        bc1 = 1.0 - ADAM_BETA1**self.t
        bc2 = 1.0 - ADAM_BETA2**self.t
        out = dict(params)
        for name, g in grads.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(params[name])
                self.v[name] = np.zeros_like(params[name])
            m = self.m[name] = ADAM_BETA1 * self.m[name] + (1.0 - ADAM_BETA1) * g
            v = self.v[name] = ADAM_BETA2 * self.v[name] + (1.0 - ADAM_BETA2) * g * g
            out[name] = params[name] - self.step_sizes[name] * (m / bc1) / (
                np.sqrt(v / bc2) + ADAM_EPS
            )
        return out


_CHECKPOINT_MAGIC = b"NT64"


def save_checkpoint(path, tensors: dict[str, np.ndarray]) -> None:
    """Write named tensors: magic, count, then (name, shape, float64 LE data) records."""
    with open(path, "wb") as fh:
        fh.write(_CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            arr = np.asarray(arr, dtype="<f8")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes(order="C"))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        if fh.read(4) != _CHECKPOINT_MAGIC:
            raise ValueError("not a checkpoint file")
        (count,) = struct.unpack("<I", fh.read(4))
        tensors = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", fh.read(4))
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim))
            data = np.frombuffer(fh.read(8 * int(np.prod(shape, dtype=np.int64))), dtype="<f8")
            tensors[name] = data.reshape(shape).copy()
    return tensors


def params_to_tensors(params: ModelParams) -> dict[str, np.ndarray]:
    tensors = {"class_weights": params.class_weights, "size_head": params.size_head}
    if params.hidden is not None:
        tensors["hidden"] = params.hidden
    return tensors


def tensors_to_params(tensors: dict[str, np.ndarray]) -> ModelParams:
    return ModelParams(
        class_weights=tensors["class_weights"],
        size_head=tensors["size_head"],
        hidden=tensors.get("hidden"),
    )

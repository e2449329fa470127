"""Tiny softmax classifiers with exact per-sample gradients.

Two architectures are supported: a single affine layer followed by softmax
(``linear``) and a one-hidden-layer ReLU network (``mlp``). All arithmetic is
float64 and gradients are analytic.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

LAST_LAYER = "last-layer"
FULL = "full"
SCOPES = (LAST_LAYER, FULL)


class ShapeError(ValueError):
    pass


class LabelError(ValueError):
    pass


@dataclass
class ModelParams:
    """Layer weights ``(out, in)`` and biases ``(out,)``.

    ``feature_block`` is how many leading layers (with their activation) form
    the feature extractor used by the stream filter; 0 means raw input.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    feature_block: int = 1

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("need one bias per weight matrix")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ShapeError(f"layer {k}: weight {w.shape} / bias {b.shape}")
            if k and w.shape[1] != self.weights[k - 1].shape[0]:
                raise ShapeError(f"layer {k} input {w.shape[1]} != previous output")

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def last_layer(self) -> int:
        return self.n_layers - 1

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def n_classes(self) -> int:
        return self.weights[-1].shape[0]

    def shapes(self) -> list[tuple[list[int], list[int]]]:
        return [(list(w.shape), list(b.shape)) for w, b in zip(self.weights, self.biases)]

    def copy(self) -> "ModelParams":
        return ModelParams([w.copy() for w in self.weights],
                           [b.copy() for b in self.biases], self.feature_block)

    def n_params(self, scope: str = FULL) -> int:
        layers = _scope_layers(self, scope)
        return sum(self.weights[k].size + self.biases[k].size for k in layers)

    def flatten(self, scope: str = FULL) -> np.ndarray:
        parts = []
        for k in _scope_layers(self, scope):
            parts.append(self.weights[k].ravel())
            parts.append(self.biases[k])
        return np.concatenate(parts)

    def unflatten(self, vec: np.ndarray, scope: str = FULL) -> "ModelParams":
        out = self.copy()
        pos = 0
        for k in _scope_layers(self, scope):
            w = out.weights[k]
            out.weights[k] = vec[pos:pos + w.size].reshape(w.shape).copy()
            pos += w.size
            nb = out.biases[k].size
            out.biases[k] = vec[pos:pos + nb].copy()
            pos += nb
        if pos != vec.size:
            raise ShapeError(f"vector of length {vec.size}, expected {pos}")
        return out


@dataclass
class PerSampleGradient:
    sample_id: int
    grad: np.ndarray
    norm: float = field(default=-1.0)

    def __post_init__(self):
        if self.norm < 0:
            self.norm = float(np.linalg.norm(self.grad))


def _scope_layers(params: ModelParams, scope: str) -> range:
    if scope == LAST_LAYER:
        return range(params.last_layer, params.n_layers)
    if scope == FULL:
        return range(params.n_layers)
    raise ValueError(f"unknown gradient scope {scope!r}")


def init_params(layer_sizes: list[int], seed: int = 0, feature_block: int = 1,
                scale: float | None = None) -> ModelParams:
    """He-style random init; ``layer_sizes=[d, C]`` gives a linear model."""
    if len(layer_sizes) < 2:
        raise ShapeError("need at least input and output sizes")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        s = np.sqrt(2.0 / n_in) if scale is None else scale
        weights.append(rng.normal(0.0, s, size=(n_out, n_in)))
        biases.append(np.zeros(n_out))
    fb = min(feature_block, len(weights) - 1)
    return ModelParams(weights, biases, fb)


def linear_model(d: int, n_classes: int, seed: int = 0) -> ModelParams:
    return init_params([d, n_classes], seed=seed, feature_block=0)


def mlp_model(d: int, hidden: int, n_classes: int, seed: int = 0) -> ModelParams:
    return init_params([d, hidden, n_classes], seed=seed, feature_block=1)


def _as_batch(params: ModelParams, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != params.input_dim:
        raise ShapeError(f"input of shape {x.shape}, model expects dimension {params.input_dim}")
    return X, single


def _activations(params: ModelParams, X: np.ndarray) -> list[np.ndarray]:
    """Inputs to each layer: ``acts[0] = X``, ``acts[k]`` = post-ReLU output of layer k-1."""
    acts = [X]
    h = X
    for k in range(params.n_layers - 1):
        h = np.maximum(h @ params.weights[k].T + params.biases[k], 0.0)
        acts.append(h)
    return acts


def forward(params: ModelParams, x) -> np.ndarray:
    """Pre-softmax logits for one sample ``(d,)`` or a batch ``(n, d)``."""
    X, single = _as_batch(params, x)
    h = _activations(params, X)[-1]
    z = h @ params.weights[-1].T + params.biases[-1]
    return z[0] if single else z


def extract_features(params: ModelParams, x) -> np.ndarray:
    """Output of the first ``feature_block`` layers (raw input when 0)."""
    X, single = _as_batch(params, x)
    h = X
    for k in range(params.feature_block):
        h = np.maximum(h @ params.weights[k].T + params.biases[k], 0.0)
    return h[0] if single else h


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits: np.ndarray, y) -> np.ndarray:
    logits = np.atleast_2d(logits)
    y = np.atleast_1d(np.asarray(y))
    m = logits.max(axis=1)
    lse = m + np.log(np.exp(logits - m[:, None]).sum(axis=1))
    return lse - logits[np.arange(len(y)), y]


def entropy(logits: np.ndarray) -> np.ndarray:
    p = softmax(np.atleast_2d(logits))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(p > 0, p * np.log(p), 0.0)
    return -t.sum(axis=1)


def loss(params: ModelParams, X, y) -> np.ndarray:
    return cross_entropy(forward(params, np.atleast_2d(X)), y)


def _check_labels(params: ModelParams, y: np.ndarray):
    if y.size and (y.min() < 0 or y.max() >= params.n_classes):
        raise LabelError(f"labels must lie in [0, {params.n_classes})")


def per_sample_gradients(params: ModelParams, X, y, scope: str = LAST_LAYER) -> np.ndarray:
    """Gradients of the per-sample cross-entropy, one flattened row per sample.

    Row layout follows :meth:`ModelParams.flatten` for the same scope. The
    last-layer block is ``(softmax(z) - onehot(y)) (x) h`` followed by the
    bias part ``softmax(z) - onehot(y)``.
    """
    X, _ = _as_batch(params, X)
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if y.shape != (X.shape[0],):
        raise ShapeError("one label per sample required")
    _check_labels(params, y)
    layers = _scope_layers(params, scope)
    acts = _activations(params, X)
    z = acts[-1] @ params.weights[-1].T + params.biases[-1]
    delta = softmax(z)
    delta[np.arange(len(y)), y] -= 1.0

    blocks = {}
    for k in range(params.n_layers - 1, layers.start - 1, -1):
        a = acts[k]
        blocks[k] = (np.einsum("ni,nj->nij", delta, a).reshape(len(y), -1), delta)
        if k > layers.start:
            # ReLU derivative taken as 0 at the kink
            delta = (delta @ params.weights[k]) * (acts[k] > 0)
    parts = []
    for k in layers:
        gw, gb = blocks[k]
        parts.append(gw)
        parts.append(gb)
    return np.concatenate(parts, axis=1)


def per_sample_gradient(params: ModelParams, x, y: int, scope: str = LAST_LAYER,
                        sample_id: int = 0) -> PerSampleGradient:
    g = per_sample_gradients(params, np.asarray(x, dtype=np.float64)[None, :], [y], scope)[0]
    return PerSampleGradient(sample_id, g)


def sgd_step(params: ModelParams, batch, lr: float) -> ModelParams:
    """One update ``w <- w - lr * g_hat`` over the full model."""
    from .importance import weighted_gradient_estimate

    if lr <= 0:
        raise ValueError("learning rate must be positive")
    if len(batch) == 0:
        raise ValueError("empty batch")
    grads = per_sample_gradients(params, batch.features, batch.labels, FULL)
    g_hat = weighted_gradient_estimate(batch, grads)
    return params.unflatten(params.flatten(FULL) - lr * g_hat, FULL)


def params_to_bytes(params: ModelParams) -> bytes:
    """JSON shape header line followed by the flat little-endian float64 payload."""
    header = {"layers": params.shapes(), "feature_block": params.feature_block,
              "dtype": "<f8"}
    head = json.dumps(header, sort_keys=True).encode()
    return struct.pack("<I", len(head)) + head + params.flatten(FULL).astype("<f8").tobytes()


def params_from_bytes(data: bytes) -> ModelParams:
    (n,) = struct.unpack_from("<I", data, 0)
    header = json.loads(data[4:4 + n])
    flat = np.frombuffer(data[4 + n:], dtype="<f8").astype(np.float64)
    weights, biases = [], []
    pos = 0
    for wshape, bshape in header["layers"]:
        size = int(np.prod(wshape))
        weights.append(flat[pos:pos + size].reshape(wshape).copy())
        pos += size
        biases.append(flat[pos:pos + bshape[0]].copy())
        pos += bshape[0]
    if pos != flat.size:
        raise ShapeError("payload length does not match header")
    return ModelParams(weights, biases, header["feature_block"])

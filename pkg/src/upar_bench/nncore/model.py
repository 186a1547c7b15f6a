"""Classifier head: affine stack with ReLU, inverted dropout, exact gradients.

With zero hidden layers the head is a single classification layer over pooled
features.  Dropout applies to the final feature layer (the input of the last
affine) only while training, with inverted scaling so inference needs no
rescale.  `forward` returns a cache holding everything `backward` needs,
including the drawn dropout mask, so gradients are exact for the recorded
stochastic pass.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


@dataclass
class ClassifierHead:
    weights: list[np.ndarray]  # layer l maps widths[l] -> widths[l+1]
    biases: list[np.ndarray]
    dropout_rate: float = 0.0

    def __post_init__(self):
        if not self.weights or len(self.weights) != len(self.biases):
            raise ValueError("need matching, non-empty weight and bias lists")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        for w, b in zip(self.weights, self.biases):
            if w.shape[1] != b.shape[0]:
                raise ValueError("bias width must match weight output width")

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    def parameters(self) -> list[np.ndarray]:
        """Parameter tensors in declaration order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def set_parameters(self, params: list[np.ndarray]):
        expected = self.parameters()
        if len(params) != len(expected):
            raise ValueError("parameter count mismatch")
        for dst, src in zip(expected, params):
            if dst.shape != src.shape:
                raise ValueError("parameter shape mismatch")
            dst[...] = src

    def copy_parameters(self) -> list[np.ndarray]:
        return [p.copy() for p in self.parameters()]


@dataclass
class ForwardCache:
    """Recorded forward pass; required by backward."""

    inputs: list[np.ndarray] = field(default_factory=list)  # input of each affine
    relu_masks: list[np.ndarray] = field(default_factory=list)
    dropout_scale: np.ndarray | None = None  # mask / (1 - rate), already combined
    train_mode: bool = False


def init_classifier_head(
    in_dim: int,
    out_dim: int,
    hidden: tuple[int, ...] = (),
    dropout_rate: float = 0.0,
    rng: np.random.Generator | None = None,
) -> ClassifierHead:
    """He-scaled random initialization, biases zero, seeded via rng."""
    rng = rng or np.random.default_rng(0)
    widths = [in_dim, *hidden, out_dim]
    weights, biases = [], []
    for i in range(len(widths) - 1):
        fan_in = widths[i]
        scale = np.sqrt(2.0 / fan_in) if i < len(widths) - 2 else np.sqrt(1.0 / fan_in)
        weights.append(scale * rng.standard_normal((widths[i], widths[i + 1])))
        biases.append(np.zeros(widths[i + 1]))
    return ClassifierHead(weights, biases, dropout_rate)


def global_avg_pool(features: np.ndarray) -> np.ndarray:
    """Per-channel mean over the spatial map: C x H x W -> C."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 3:
        raise ValueError("expected a 3-d C x H x W array")
    if features.shape[1] * features.shape[2] == 0:
        raise ValueError("cannot pool an empty spatial map")
    return features.mean(axis=(1, 2))


def forward(
    model: ClassifierHead,
    batch: np.ndarray,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
    dropout_mask: np.ndarray | None = None,
) -> tuple[np.ndarray, ForwardCache]:
    """Affine chain with ReLU between layers; returns logits and the cache.

    Dropout (inverted scaling) hits the final feature layer only when
    `train_mode` and the rate is positive.  `dropout_mask` overrides the drawn
    mask, which is how gradient checks freeze the stochastic pass.
    """
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.in_dim:
        raise ValueError(f"batch must be N x {model.in_dim}")
    cache = ForwardCache(train_mode=train_mode)
    n_layers = len(model.weights)
    for l in range(n_layers - 1):
        cache.inputs.append(x)
        z = x @ model.weights[l] + model.biases[l]
        relu_mask = z > 0
        cache.relu_masks.append(relu_mask)
        x = z * relu_mask
    if train_mode and model.dropout_rate > 0.0:
        if dropout_mask is None:
            if rng is None:
                raise ValueError("train-mode dropout needs an rng or explicit mask")
            dropout_mask = rng.random(x.shape) >= model.dropout_rate
        cache.dropout_scale = dropout_mask.astype(np.float64) / (1.0 - model.dropout_rate)
        x = x * cache.dropout_scale
    cache.inputs.append(x)
    logits = x @ model.weights[-1] + model.biases[-1]
    return logits, cache


def backward(
    model: ClassifierHead, cache: ForwardCache, grad_logits: np.ndarray
) -> list[np.ndarray]:
    """Exact gradients w.r.t. every parameter, in declaration order."""
    if cache is None or not cache.inputs:
        raise ValueError("backward requires the cache of a recorded forward pass")
    n_layers = len(model.weights)
    if len(cache.inputs) != n_layers:
        raise ValueError("cache does not match the model layer count")
    grads: list[np.ndarray | None] = [None] * (2 * n_layers)

    g = np.asarray(grad_logits, dtype=np.float64)
    grads[2 * (n_layers - 1)] = cache.inputs[-1].T @ g
    grads[2 * (n_layers - 1) + 1] = g.sum(axis=0)
    g = g @ model.weights[-1].T
    if cache.dropout_scale is not None:
        g = g * cache.dropout_scale
    for l in range(n_layers - 2, -1, -1):
        g = g * cache.relu_masks[l]
        grads[2 * l] = cache.inputs[l].T @ g
        grads[2 * l + 1] = g.sum(axis=0)
        if l > 0:
            g = g @ model.weights[l].T
    return grads  # type: ignore[return-value]


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def save_checkpoint(path, model: ClassifierHead, header_extra: dict | None = None):
    """Checkpoint file: one JSON header line, then raw little-endian float64
    blobs for each parameter tensor in declaration order."""
    params = model.parameters()
    header = {
        "format": 1,
        "shapes": [list(p.shape) for p in params],
        "dropout_rate": model.dropout_rate,
    }
    if header_extra:
        header.update(header_extra)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8"))
        fh.write(b"\n")
        for p in params:
            fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[ClassifierHead, dict]:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        header = json.loads(header_line.decode("utf-8"))
        params = []
        for shape in header["shapes"]:
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(8 * count)
            if len(buf) != 8 * count:
                raise ValueError(f"{path}: truncated checkpoint blob")
            params.append(np.frombuffer(buf, dtype="<f8").reshape(shape).copy())
    weights = params[0::2]
    biases = params[1::2]
    return ClassifierHead(weights, biases, header.get("dropout_rate", 0.0)), header

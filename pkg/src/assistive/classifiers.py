"""Differentiable classifiers.

Every classifier maps an image batch ``(N, H, W, 3)`` to class probabilities
and returns the gradient of the cross-entropy with respect to input pixels.
The reference model is a small numpy CNN with hand-written backprop, so
nothing here needs an autodiff framework.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import LOG_FLOOR, DimensionError, LabeledDataset, LossSpec, make_rng, softmax


class FormatError(ValueError):
    """A checkpoint or asset file is malformed."""


class Classifier:
    """Base class for anything the optimizers can attack or assist.

    Subclasses implement ``_probs`` and ``_ce_grad``; the public methods
    validate shapes.
    """

    num_classes: int
    input_shape: tuple
    identity: str

    def predict_probs(self, batch) -> np.ndarray:
        return self._probs(self._check(batch))

    def loss_and_grad(self, batch, labels):
        """Per-image cross-entropy ``(N,)`` and its pixel gradient ``(N, H, W, 3)``."""
        batch = self._check(batch)
        labels = np.broadcast_to(np.asarray(labels, dtype=np.int64), (len(batch),))
        if labels.min() < 0 or labels.max() >= self.num_classes:
            raise IndexError("label outside [0, num_classes)")
        return self._ce_grad(batch, labels)

    def input_gradient(self, batch, loss: LossSpec) -> np.ndarray:
        """Gradient of the batch-mean cross-entropy to ``loss.target_label``."""
        _, g = self.loss_and_grad(batch, loss.target_label)
        return g / len(g)

    def _check(self, batch) -> np.ndarray:
        batch = np.asarray(batch, dtype=np.float64)
        if batch.ndim == 3:
            batch = batch[None]
        if batch.ndim != 4 or len(batch) == 0:
            raise DimensionError("expected a non-empty (N, H, W, 3) batch")
        if batch.shape[1:] != tuple(self.input_shape):
            raise DimensionError(f"{self.identity} expects {tuple(self.input_shape)}, got {batch.shape[1:]}")
        return batch

    def _probs(self, batch):
        raise NotImplementedError

    def _ce_grad(self, batch, labels):
        raise NotImplementedError


def predict_probs(c: Classifier, batch) -> np.ndarray:
    return c.predict_probs(batch)


def input_gradient(c: Classifier, batch, loss: LossSpec) -> np.ndarray:
    return c.input_gradient(batch, loss)


def _ce_from_probs(p, labels):
    picked = p[np.arange(len(p)), labels]
    return -np.log(np.maximum(picked, LOG_FLOOR)), picked


class LogisticModel(Classifier):
    """Two-class logistic model, ``p(1) = sigmoid(<w, x> + b)``.

    Used as a closed-form oracle for the attack and hardening kernels.
    """

    def __init__(self, weights, bias: float, identity: str = "logistic"):
        self.weights = np.asarray(weights, dtype=np.float64)
        if self.weights.ndim != 3 or self.weights.shape[-1] != 3:
            raise DimensionError("weights must be (H, W, 3)")
        self.bias = float(bias)
        self.num_classes = 2
        self.input_shape = self.weights.shape
        self.identity = identity

    @classmethod
    def single_pixel(cls, w: float, b: float) -> "LogisticModel":
        """One-pixel image whose red channel carries weight ``w``."""
        return cls(np.array([[[w, 0.0, 0.0]]]), b)

    def _probs(self, batch):
        z = np.einsum("nhwc,hwc->n", batch, self.weights) + self.bias
        p1 = 1.0 / (1.0 + np.exp(-z))
        return np.stack([1.0 - p1, p1], axis=1)

    def _ce_grad(self, batch, labels):
        p = self._probs(batch)
        ce, _ = _ce_from_probs(p, labels)
        # dCE/dz = p1 - [label == 1]; exact zero once the floored optimum is reached
        dz = p[:, 1] - (labels == 1)
        dz = np.where(p[np.arange(len(p)), labels] >= 1.0 - LOG_FLOOR, 0.0, dz)
        return ce, dz[:, None, None, None] * self.weights[None]


class RedProbe(Classifier):
    """Two-class probe whose ``target`` probability is the mean red value.

    The optimum of any assistive objective against it is analytic (pure red
    albedo under full light), which makes it an oracle for the 3D optimizers.
    """

    def __init__(self, input_shape, target: int = 1, identity: str = "red-probe"):
        self.input_shape = tuple(input_shape)
        self.num_classes = 2
        self.target = target
        self.identity = identity

    def _probs(self, batch):
        m = batch[..., 0].mean(axis=(1, 2)).clip(0.0, 1.0)
        out = np.empty((len(batch), 2))
        out[:, self.target] = m
        out[:, 1 - self.target] = 1.0 - m
        return out

    def _ce_grad(self, batch, labels):
        p = self._probs(batch)
        ce, picked = _ce_from_probs(p, labels)
        h, w = self.input_shape[:2]
        sgn = np.where(labels == self.target, 1.0, -1.0)
        coef = -sgn / np.maximum(picked, LOG_FLOOR) / (h * w)
        coef = np.where(picked >= 1.0 - LOG_FLOOR, 0.0, coef)
        g = np.zeros_like(batch)
        g[..., 0] = coef[:, None, None]
        return ce, g


class CallableClassifier(Classifier):
    """Adapter for external models given as plain functions.

    ``probs_fn(batch) -> (N, K)``; ``grad_fn(batch, labels) -> (N, H, W, 3)``
    returning the per-image cross-entropy gradient.
    """

    def __init__(self, probs_fn: Callable, grad_fn: Callable, num_classes: int, input_shape, identity: str):
        self.probs_fn, self.grad_fn = probs_fn, grad_fn
        self.num_classes, self.input_shape, self.identity = num_classes, tuple(input_shape), identity

    def _probs(self, batch):
        return np.asarray(self.probs_fn(batch), dtype=np.float64)

    def _ce_grad(self, batch, labels):
        ce, _ = _ce_from_probs(self._probs(batch), labels)
        return ce, np.asarray(self.grad_fn(batch, labels), dtype=np.float64)


# ---------------------------------------------------------------------------
# reference CNN

def conv3x3_forward(x, w, b):
    """Same-padded 3x3 convolution. ``x`` (N,H,W,C), ``w`` (C*9, F)."""
    n, h, wd, c = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = sliding_window_view(xp, (3, 3), axis=(1, 2)).reshape(n * h * wd, c * 9)
    out = (cols @ w + b).reshape(n, h, wd, -1)
    return out, cols


def conv3x3_backward(dout, cols, w, x_shape, need_weights=True):
    n, h, wd, c = x_shape
    d2 = dout.reshape(n * h * wd, -1)
    dcols = (d2 @ w.T).reshape(n, h, wd, c, 3, 3)
    dxp = np.zeros((n, h + 2, wd + 2, c))
    for i in range(3):
        for j in range(3):
            dxp[:, i:i + h, j:j + wd, :] += dcols[..., i, j]
    dx = dxp[:, 1:-1, 1:-1, :]
    if not need_weights:
        return dx, None, None
    return dx, cols.T @ d2, d2.sum(axis=0)


def maxpool2_forward(x):
    n, h, w, c = x.shape
    win = x.reshape(n, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, h // 2, w // 2, c, 4)
    arg = win.argmax(axis=-1)  # first max wins on ties
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return out, arg


def maxpool2_backward(dout, arg, x_shape):
    n, h, w, c = x_shape
    d = np.zeros((*arg.shape, 4))
    np.put_along_axis(d, arg[..., None], dout[..., None], axis=-1)
    return d.reshape(n, h // 2, w // 2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(x_shape)


LAYER_ORDER = ("conv1.w", "conv1.b", "conv2.w", "conv2.b", "dense.w", "dense.b")


class ReferenceCNN(Classifier):
    """conv3x3x8 - relu - pool - conv3x3x16 - relu - pool - dense - softmax.

    Weights are stored as float32 values so checkpoints round-trip exactly;
    arithmetic runs in float64.
    """

    architecture = "reference_cnn"
    channels = (8, 16)

    def __init__(self, params: dict, input_shape, num_classes: int, seed: int = 0, identity: Optional[str] = None):
        h, w, c = input_shape
        if h % 4 or w % 4 or c != 3:
            raise DimensionError("input height/width must be multiples of 4 with 3 channels")
        self.input_shape = (h, w, c)
        self.num_classes = num_classes
        self.seed = seed
        self.params = {k: np.asarray(params[k], dtype=np.float32) for k in LAYER_ORDER}
        for k, shape in self.layer_shapes().items():
            if self.params[k].shape != shape:
                raise DimensionError(f"{k} has shape {self.params[k].shape}, expected {shape}")
        self.identity = identity or f"{self.architecture}-seed{seed}"
        self._p64 = {k: v.astype(np.float64) for k, v in self.params.items()}

    def layer_shapes(self) -> dict:
        h, w, _ = self.input_shape
        c1, c2 = self.channels
        flat = (h // 4) * (w // 4) * c2
        return {
            "conv1.w": (3 * 9, c1), "conv1.b": (c1,),
            "conv2.w": (c1 * 9, c2), "conv2.b": (c2,),
            "dense.w": (flat, self.num_classes), "dense.b": (self.num_classes,),
        }

    @classmethod
    def initialize(cls, input_shape, num_classes: int, seed: int = 0) -> "ReferenceCNN":
        """He-normal weights from ``seed``, zero biases."""
        rng = make_rng(seed, 0)
        proto = cls.__new__(cls)
        proto.input_shape, proto.num_classes = tuple(input_shape), num_classes
        params = {}
        for k, shape in proto.layer_shapes().items():
            if k.endswith(".b"):
                params[k] = np.zeros(shape)
            else:
                params[k] = rng.standard_normal(shape) * np.sqrt(2.0 / shape[0])
        return cls(params, input_shape, num_classes, seed=seed)

    # forward/backward -----------------------------------------------------
    def _forward(self, x, p=None):
        p = p or self._p64
        a1, cols1 = conv3x3_forward(x, p["conv1.w"], p["conv1.b"])
        r1 = np.maximum(a1, 0.0)
        m1, arg1 = maxpool2_forward(r1)
        a2, cols2 = conv3x3_forward(m1, p["conv2.w"], p["conv2.b"])
        r2 = np.maximum(a2, 0.0)
        m2, arg2 = maxpool2_forward(r2)
        flat = m2.reshape(len(x), -1)
        logits = flat @ p["dense.w"] + p["dense.b"]
        cache = (x.shape, a1, cols1, r1.shape, m1.shape, arg1, a2, cols2, r2.shape, m2.shape, arg2, flat)
        return logits, cache

    def _backward(self, dlogits, cache, p=None, need_weights=False):
        p = p or self._p64
        x_shape, a1, cols1, r1_shape, m1_shape, arg1, a2, cols2, r2_shape, m2_shape, arg2, flat = cache
        grads = {}
        if need_weights:
            grads["dense.w"] = flat.T @ dlogits
            grads["dense.b"] = dlogits.sum(axis=0)
        dm2 = (dlogits @ p["dense.w"].T).reshape(m2_shape)
        dr2 = maxpool2_backward(dm2, arg2, r2_shape)
        da2 = dr2 * (a2 > 0)
        dm1, gw, gb = conv3x3_backward(da2, cols2, p["conv2.w"], m1_shape, need_weights)
        grads["conv2.w"], grads["conv2.b"] = gw, gb
        dr1 = maxpool2_backward(dm1, arg1, r1_shape)
        da1 = dr1 * (a1 > 0)
        dx, gw, gb = conv3x3_backward(da1, cols1, p["conv1.w"], x_shape, need_weights)
        grads["conv1.w"], grads["conv1.b"] = gw, gb
        return dx, grads

    def logits(self, batch) -> np.ndarray:
        return self._forward(self._check(batch))[0]

    def _probs(self, batch):
        return softmax(self._forward(batch)[0])

    def _ce_grad(self, batch, labels):
        logits, cache = self._forward(batch)
        p = softmax(logits)
        ce, picked = _ce_from_probs(p, labels)
        dlogits = p.copy()
        dlogits[np.arange(len(p)), labels] -= 1.0
        # below the log floor the loss is flat
        dlogits[picked < LOG_FLOOR] = 0.0
        dx, _ = self._backward(dlogits, cache)
        return ce, dx


@dataclass
class TrainStats:
    train_accuracy: float
    test_accuracy: Optional[float]
    epoch_losses: list


def train_reference(
    dataset: LabeledDataset,
    epochs: int,
    batch_size: int = 32,
    learning_rate: float = 0.05,
    seed: int = 0,
    test: Optional[LabeledDataset] = None,
    momentum: float = 0.9,
):
    """SGD-with-momentum training of a fresh :class:`ReferenceCNN`.

    Returns ``(model, TrainStats)``. Deterministic for a given seed.
    """
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    model = ReferenceCNN.initialize(dataset.images.shape[1:], dataset.num_classes, seed)
    p = {k: v.astype(np.float64) for k, v in model.params.items()}
    vel = {k: np.zeros_like(v) for k, v in p.items()}
    rng = make_rng(seed, 1)
    losses = []
    n = len(dataset)
    for _ in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            x, y = dataset.images[idx], dataset.labels[idx]
            logits, cache = model._forward(x, p)
            prob = softmax(logits)
            total += float(-np.log(np.maximum(prob[np.arange(len(y)), y], LOG_FLOOR)).sum())
            dlogits = prob
            dlogits[np.arange(len(y)), y] -= 1.0
            dlogits /= len(y)
            _, grads = model._backward(dlogits, cache, p, need_weights=True)
            for k in LAYER_ORDER:
                vel[k] = momentum * vel[k] - learning_rate * grads[k]
                p[k] += vel[k]
        losses.append(total / n)
    model = ReferenceCNN(p, model.input_shape, model.num_classes, seed=seed)
    train_acc = accuracy(model, dataset)
    test_acc = accuracy(model, test) if test is not None and len(test) else None
    return model, TrainStats(train_acc, test_acc, losses)


def accuracy(c: Classifier, d: LabeledDataset, batch_size: int = 256) -> float:
    hits = 0
    for s in range(0, len(d), batch_size):
        probs = c.predict_probs(d.images[s:s + batch_size])
        hits += int((probs.argmax(axis=1) == d.labels[s:s + batch_size]).sum())
    return hits / len(d)


# ---------------------------------------------------------------------------
# ensembles

class Ensemble(Classifier):
    """Mean-of-losses ensemble; probabilities are averaged member outputs."""

    def __init__(self, members: Sequence[Classifier]):
        members = list(members)
        if not members:
            raise ValueError("ensemble needs at least one member")
        first = members[0]
        for m in members[1:]:
            if m.num_classes != first.num_classes or tuple(m.input_shape) != tuple(first.input_shape):
                raise DimensionError("ensemble members disagree on num_classes or input_shape")
        self.members = members
        self.num_classes = first.num_classes
        self.input_shape = tuple(first.input_shape)
        self.identity = "ensemble(" + ",".join(m.identity for m in members) + ")"

    def _probs(self, batch):
        return sum(m._probs(batch) for m in self.members) / len(self.members)

    def _ce_grad(self, batch, labels):
        ce = np.zeros(len(batch))
        g = np.zeros_like(batch)
        for m in self.members:
            c, gm = m._ce_grad(batch, labels)
            ce += c
            g += gm
        return ce / len(self.members), g / len(self.members)


def ensemble_gradient(e: Ensemble, batch, loss: LossSpec) -> np.ndarray:
    return e.input_gradient(batch, loss)


# ---------------------------------------------------------------------------
# checkpoints

MAGIC = b"ASSISTIVE-CKPT\n"
FORMAT_VERSION = 1


def save_checkpoint(model: ReferenceCNN, path) -> Path:
    """Write a text header line followed by little-endian float32 blobs."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    shapes = model.layer_shapes()
    header = {
        "format_version": FORMAT_VERSION,
        "architecture": model.architecture,
        "input_shape": list(model.input_shape),
        "num_classes": model.num_classes,
        "seed": model.seed,
        "identity": model.identity,
        "layers": [{"name": k, "shape": list(shapes[k])} for k in LAYER_ORDER],
    }
    blob = b"".join(model.params[k].astype("<f4").tobytes() for k in LAYER_ORDER)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        f.write(blob)
    return path


def load_checkpoint(path) -> ReferenceCNN:
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise FormatError("magic: not a checkpoint file")
    nl = raw.find(b"\n", len(MAGIC))
    if nl < 0:
        raise FormatError("header: missing terminator")
    try:
        header = json.loads(raw[len(MAGIC):nl])
    except json.JSONDecodeError as e:
        raise FormatError(f"header: {e}") from None
    for field in ("format_version", "architecture", "input_shape", "num_classes", "seed", "layers"):
        if field not in header:
            raise FormatError(f"{field}: missing")
    if header["format_version"] != FORMAT_VERSION:
        raise FormatError(f"format_version: unsupported {header['format_version']}")
    if header["architecture"] != ReferenceCNN.architecture:
        raise FormatError(f"architecture: unknown {header['architecture']!r}")
    proto = ReferenceCNN.__new__(ReferenceCNN)
    try:
        proto.input_shape = tuple(int(v) for v in header["input_shape"])
        proto.num_classes = int(header["num_classes"])
    except (TypeError, ValueError):
        raise FormatError("input_shape: not integers") from None
    expected = proto.layer_shapes()
    declared = [(layer.get("name"), tuple(layer.get("shape", ()))) for layer in header["layers"]]
    if [name for name, _ in declared] != list(LAYER_ORDER):
        raise FormatError("layers: unexpected layer list")
    for name, shape in declared:
        if shape != expected[name]:
            field = "num_classes" if name.startswith("dense") else f"layers.{name}.shape"
            raise FormatError(f"{field}: {name} declared {shape}, architecture implies {expected[name]}")
    body = memoryview(raw)[nl + 1:]
    need = sum(int(np.prod(s)) for _, s in declared) * 4
    if len(body) != need:
        raise FormatError(f"weights: expected {need} bytes, found {len(body)}")
    params, off = {}, 0
    for name, shape in declared:
        count = int(np.prod(shape))
        params[name] = np.frombuffer(body, dtype="<f4", count=count, offset=off).reshape(shape)
        off += count * 4
    return ReferenceCNN(params, proto.input_shape, proto.num_classes, seed=int(header["seed"]),
                        identity=header.get("identity"))

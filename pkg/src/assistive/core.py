"""Numeric primitives shared by the whole toolkit.

Images are ``float64`` numpy arrays of shape ``(H, W, 3)`` with values in
``[0, 1]``; batches stack them along a leading axis. Probability vectors are
1-D arrays. Everything here is a pure function.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image as PILImage

LOG_FLOOR = 1e-12


class Direction(str, enum.Enum):
    ASSISTIVE = "assistive"
    DECEPTIVE = "deceptive"


@dataclass(frozen=True)
class LossSpec:
    """Cross-entropy objective and which way to push it.

    ``assistive`` lowers the cross-entropy to ``target_label``. ``deceptive``
    raises it when ``target_label`` is the true class (untargeted) or lowers
    it towards a wrong class when ``targeted`` is set.
    """

    target_label: int
    direction: Direction = Direction.ASSISTIVE
    targeted: bool = False

    @property
    def descend(self) -> bool:
        """True when the optimizer should step against the CE gradient."""
        return self.direction is Direction.ASSISTIVE or self.targeted


@dataclass(frozen=True)
class OptimConfig:
    step_size: float
    iterations: int
    epsilon: Optional[float] = None
    use_sign_gradient: bool = True
    seed: int = 0

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError("step_size must be > 0")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.epsilon is not None and self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")


class DimensionError(ValueError):
    """Array shapes disagree with the declared contract."""


@dataclass
class LabeledDataset:
    """Ordered (image, label) pairs. Iteration follows insertion order."""

    images: np.ndarray  # (N, H, W, 3)
    labels: np.ndarray  # (N,)
    num_classes: int

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.images.ndim != 4 and not (self.images.size == 0 and len(self.labels) == 0):
            raise DimensionError(f"images must be (N, H, W, 3), got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise DimensionError("images and labels differ in length")
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise IndexError("label outside [0, num_classes)")

    def __len__(self):
        return len(self.labels)

    def __iter__(self):
        return iter(zip(self.images, self.labels))

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx)
        return LabeledDataset(self.images[idx], self.labels[idx], self.num_classes)

    @classmethod
    def empty(cls, num_classes: int, shape=(0, 0)) -> "LabeledDataset":
        return cls(np.zeros((0, *shape, 3)), np.zeros(0, dtype=np.int64), num_classes)


def cross_entropy(probs: Sequence[float], target: int) -> float:
    probs = np.asarray(probs, dtype=np.float64)
    if not 0 <= target < len(probs):
        raise IndexError(f"target {target} outside [0, {len(probs)})")
    return float(-np.log(max(probs[target], LOG_FLOOR)))


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def clip_unit(image: np.ndarray) -> np.ndarray:
    return np.clip(image, 0.0, 1.0)


def project_linf(image: np.ndarray, origin: np.ndarray, epsilon: float) -> np.ndarray:
    """Clamp ``image`` into the L-inf ball around ``origin`` intersected with [0, 1]."""
    image = np.asarray(image, dtype=np.float64)
    origin = np.asarray(origin, dtype=np.float64)
    if image.shape != origin.shape:
        raise DimensionError(f"shape mismatch {image.shape} vs {origin.shape}")
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    lo = np.maximum(origin - epsilon, 0.0)
    hi = np.minimum(origin + epsilon, 1.0)
    # origin itself may lie outside [0, 1]; keep the box non-empty
    lo = np.minimum(lo, 1.0)
    hi = np.maximum(hi, 0.0)
    return np.clip(image, lo, hi)


def argmax_label(probs: Sequence[float]) -> int:
    probs = np.asarray(probs)
    if probs.size == 0:
        raise ValueError("argmax of an empty probability vector")
    # np.argmax already returns the first maximal index
    return int(np.argmax(probs))


def sign(x: np.ndarray) -> np.ndarray:
    """Elementwise sign with sign(0) = 0."""
    return np.sign(x)


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based generator for ``seed`` and an optional sub-stream path.

    Distinct ``stream`` tuples give statistically independent generators, so
    callers split randomness by naming streams instead of sharing state.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(ss))


def to_bytes(image: np.ndarray) -> np.ndarray:
    """Quantize unit-interval values to uint8, rounding half up."""
    return np.floor(clip_unit(image) * 255.0 + 0.5).astype(np.uint8)


def save_png(path, image: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # fixed encoder settings keep the output byte-stable
    PILImage.fromarray(to_bytes(image), mode="RGB").save(path, format="PNG", optimize=False, compress_level=6)
    return path


def load_png(path) -> np.ndarray:
    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0

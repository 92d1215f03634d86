"""Image-space assistive and deceptive signals.

FGSM and PGD push the cross-entropy to the true label up; hardening runs the
same machinery in the other direction so each image becomes easier for the
model. Patches are trained with location sampling and random erasing so they
do not depend on where they are pasted.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from PIL import Image as PILImage

from .classifiers import Classifier
from .core import (
    Direction,
    LabeledDataset,
    OptimConfig,
    clip_unit,
    make_rng,
    project_linf,
    sign,
)


class BoundsError(IndexError):
    pass


class PreconditionError(ValueError):
    pass


class ConfidenceDropWarning(RuntimeWarning):
    """Hardening ended with a lower true-class confidence than it started."""


def _batch(image):
    image = np.asarray(image, dtype=np.float64)
    return image[None] if image.ndim == 3 else image


def fgsm_attack(c: Classifier, image, true_label, epsilon: float) -> np.ndarray:
    """One signed-gradient ascent step of size ``epsilon`` on the true-label CE."""
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    x = _batch(image)
    _, g = c.loss_and_grad(x, true_label)
    out = clip_unit(x + epsilon * sign(g))
    return out.reshape(np.shape(image))


def pgd_attack(c: Classifier, image, true_label, epsilon: float, step_size: float, steps: int) -> np.ndarray:
    if steps < 0:
        raise ValueError("steps must be >= 0")
    x0 = _batch(image)
    x = x0.copy()
    for _ in range(steps):
        _, g = c.loss_and_grad(x, true_label)
        x = project_linf(clip_unit(x + step_size * sign(g)), x0, epsilon)
    return x.reshape(np.shape(image))


def _true_conf(c, x, labels):
    p = c.predict_probs(x)
    return p[np.arange(len(x)), labels]


def harden_batch(c: Classifier, images, labels, cfg: OptimConfig) -> np.ndarray:
    """Hardening for a stack of images; each image follows its own gradient."""
    x0 = _batch(images)
    labels = np.broadcast_to(np.asarray(labels, dtype=np.int64), (len(x0),))
    x = x0.copy()
    for _ in range(cfg.iterations):
        _, g = c.loss_and_grad(x, labels)
        step = sign(g) if cfg.use_sign_gradient else g
        x = clip_unit(x - cfg.step_size * step)
        if cfg.epsilon is not None:
            x = project_linf(x, x0, cfg.epsilon)
    if cfg.iterations:
        before, after = _true_conf(c, x0, labels), _true_conf(c, x, labels)
        worse = np.flatnonzero(after < before)
        if len(worse):
            warnings.warn(f"true-class confidence dropped for {len(worse)} image(s), first index {int(worse[0])}",
                          ConfidenceDropWarning, stacklevel=2)
    return x


def harden_image(c: Classifier, image, true_label: int, cfg: OptimConfig) -> np.ndarray:
    """Descend the cross-entropy to ``true_label`` from ``image``."""
    if not 0 <= true_label < c.num_classes:
        raise IndexError(f"label {true_label} outside [0, {c.num_classes})")
    return harden_batch(c, image, true_label, cfg).reshape(np.shape(image))


def harden_dataset(c: Classifier, d: LabeledDataset, cfg: OptimConfig, chunk: int = 100) -> LabeledDataset:
    """Replace every image by its hardened version; labels and order kept."""
    if len(d) == 0:
        return LabeledDataset(d.images.copy(), d.labels.copy(), d.num_classes)
    for i, y in enumerate(d.labels):
        if not 0 <= y < c.num_classes:
            raise IndexError(f"item {i}: label {y} outside [0, {c.num_classes})")
    out = np.empty_like(d.images)
    for s in range(0, len(d), chunk):
        try:
            out[s:s + chunk] = harden_batch(c, d.images[s:s + chunk], d.labels[s:s + chunk], cfg)
        except (ValueError, IndexError) as e:
            raise type(e)(f"items {s}..{min(s + chunk, len(d)) - 1}: {e}") from e
    return LabeledDataset(out, d.labels.copy(), d.num_classes)


# ---------------------------------------------------------------------------
# patches

@dataclass
class Patch:
    pixels: np.ndarray
    target_label: int

    @property
    def size(self):
        return self.pixels.shape[:2]


def apply_patch(image, patch, location) -> np.ndarray:
    """Paste ``patch`` (array or :class:`Patch`) with its top-left at ``location``."""
    pixels = patch.pixels if isinstance(patch, Patch) else np.asarray(patch)
    image = np.asarray(image, dtype=np.float64)
    ph, pw = pixels.shape[:2]
    r, col = location
    h, w = image.shape[:2]
    if r < 0 or col < 0 or r + ph > h or col + pw > w:
        raise BoundsError(f"{ph}x{pw} patch at {location} does not fit a {h}x{w} image")
    out = image.copy()
    out[r:r + ph, col:col + pw] = pixels
    return out


def resize_patch(pixels, size) -> np.ndarray:
    """Bilinear resize of a patch raster to ``(h, w)``."""
    h, w = size
    chans = [np.asarray(PILImage.fromarray(np.ascontiguousarray(pixels[..., k], dtype=np.float32), mode="F")
                        .resize((w, h), PILImage.BILINEAR)) for k in range(3)]
    return clip_unit(np.stack(chans, -1).astype(np.float64))


@dataclass(frozen=True)
class EraseParams:
    """Random-erasing settings; ``area`` is a fraction of the image area."""

    probability: float = 0.5
    area: Tuple[float, float] = (0.02, 0.4)
    aspect: Tuple[float, float] = (0.3, 3.3)
    fill: str = "random"

    def __post_init__(self):
        if not 0 <= self.probability <= 1:
            raise ValueError("erase probability must lie in [0, 1]")
        lo, hi = self.area
        if not 0 < lo <= hi <= 1:
            raise ValueError("area fraction range must be non-empty within (0, 1]")
        if not 0 < self.aspect[0] <= self.aspect[1]:
            raise ValueError("aspect range must be non-empty and positive")
        if self.fill not in ("random", "gray"):
            raise ValueError("fill must be 'random' or 'gray'")


def erase_rect(shape, rng: np.random.Generator, params: EraseParams):
    """Sample the rectangle ``(row, col, h, w)`` to erase, or None."""
    if rng.random() >= params.probability:
        return None
    H, W = shape[:2]
    for _ in range(100):
        area = rng.uniform(*params.area) * H * W
        aspect = rng.uniform(*params.aspect)
        h = int(round(math.sqrt(area * aspect)))
        w = int(round(math.sqrt(area / aspect)))
        if 0 < h <= H and 0 < w <= W:
            break
    else:
        h, w = max(1, min(H, h)), max(1, min(W, w))
    r = int(rng.integers(0, H - h + 1))
    c = int(rng.integers(0, W - w + 1))
    return r, c, h, w


def random_erase(image, rng: np.random.Generator, params: EraseParams) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    rect = erase_rect(image.shape, rng, params)
    if rect is None:
        return image.copy()
    r, c, h, w = rect
    out = image.copy()
    if params.fill == "gray":
        out[r:r + h, c:c + w] = 0.5
    else:
        out[r:r + h, c:c + w] = rng.random((h, w, 3))
    return out


@dataclass
class PatchTrainConfig:
    patch_size: Tuple[int, int] = (8, 8)
    iterations: int = 100
    step_size: float = 0.01
    random_location: bool = True
    random_erase: Optional[EraseParams] = field(default_factory=EraseParams)
    resize_for_eval: Optional[Tuple[int, int]] = None
    batch_size: int = 16
    init: str = "random"

    def __post_init__(self):
        if min(self.patch_size) <= 0:
            raise ValueError("patch_size must be positive")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.init not in ("random", "gray"):
            raise ValueError("init must be 'random' or 'gray'")


def init_patch(size, seed: int, init: str = "random") -> np.ndarray:
    if init == "gray":
        return np.full((*size, 3), 0.5)
    return make_rng(seed, 20).random((*size, 3))


def sample_location(rng, image_shape, patch_size):
    H, W = image_shape[:2]
    ph, pw = patch_size
    if ph > H or pw > W:
        raise BoundsError("patch larger than image")
    return int(rng.integers(0, H - ph + 1)), int(rng.integers(0, W - pw + 1))


def train_patch_2d(c: Classifier, positives: LabeledDataset, target_label: int, cfg: PatchTrainConfig,
                   optim: Optional[OptimConfig] = None, direction: Direction = Direction.ASSISTIVE) -> Patch:
    """Patch optimized over random locations and erased backgrounds.

    Assistive patches are trained only on images of ``target_label`` and
    descend its cross-entropy; the deceptive variant ascends it instead.
    Step size and iteration count come from ``cfg``; ``optim`` supplies the
    seed and the sign-versus-raw gradient choice.
    """
    optim = optim or OptimConfig(step_size=cfg.step_size, iterations=cfg.iterations)
    wrong = np.flatnonzero(positives.labels != target_label)
    if len(wrong):
        raise PreconditionError(
            f"patch training set must contain only class {target_label}; item {int(wrong[0])} "
            f"has label {int(positives.labels[wrong[0]])}")
    if len(positives) == 0 and cfg.iterations:
        raise PreconditionError("no positive images to train on")
    ph, pw = cfg.patch_size
    patch = init_patch(cfg.patch_size, optim.seed, cfg.init)
    rng = make_rng(optim.seed, 21)
    shape = positives.images.shape[1:]
    sgn = 1.0 if direction is Direction.ASSISTIVE else -1.0
    for _ in range(cfg.iterations):
        idx = rng.choice(len(positives), size=min(cfg.batch_size, len(positives)), replace=False)
        batch, locs = [], []
        for i in idx:
            img = positives.images[i]
            if cfg.random_erase is not None:
                img = random_erase(img, rng, cfg.random_erase)
            if cfg.random_location:
                loc = sample_location(rng, shape, cfg.patch_size)
            else:
                loc = ((shape[0] - ph) // 2, (shape[1] - pw) // 2)
            batch.append(apply_patch(img, patch, loc))
            locs.append(loc)
        _, g = c.loss_and_grad(np.stack(batch), target_label)
        grad = np.zeros_like(patch)
        for k, (r, col) in enumerate(locs):
            grad += g[k, r:r + ph, col:col + pw]
        grad /= len(locs)
        step = sign(grad) if optim.use_sign_gradient else grad
        patch = clip_unit(patch - sgn * cfg.step_size * step)
    return Patch(patch, target_label)


def mean_patch_confidence(c: Classifier, d: LabeledDataset, patch, target_label: int, seed: int,
                          locations: int = 4) -> float:
    """Mean target confidence with the patch at random locations (None = no patch)."""
    rng = make_rng(seed, 22)
    confs = []
    for img in d.images:
        for _ in range(locations):
            if patch is None:
                x = img
            else:
                pixels = patch.pixels if isinstance(patch, Patch) else patch
                x = apply_patch(img, pixels, sample_location(rng, img.shape, pixels.shape[:2]))
            confs.append(x)
    probs = c.predict_probs(np.stack(confs))
    return float(probs[:, target_label].mean())

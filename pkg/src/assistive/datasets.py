"""Synthetic desk-scale datasets.

Two families: a 10-class set of rendered objects (five shapes, two paint
schemes each, so shape alone does not determine the class) and a noisy
10-class 2D pattern set whose classifiers sit close enough to their decision
boundaries for small-budget attacks to matter.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Tuple

import numpy as np

from . import assets
from .core import LabeledDataset, make_rng
from .renderer import Scene, SceneRanges, render_batch, sample_scene_params

TEXTURE_RES = 64

RED = (0.85, 0.1, 0.1)
BLUE = (0.1, 0.25, 0.85)
DARK = (0.08, 0.08, 0.2)
BLACK = (0.05, 0.05, 0.05)
WHITE = (0.92, 0.92, 0.92)
YELLOW = (0.95, 0.85, 0.15)
GREEN = (0.3, 0.45, 0.15)
GRAY = (0.55, 0.55, 0.55)


def _car(body, roof):
    return {"body_left": body, "body_right": body, "body_top": body, "body_front": body, "body_back": body,
            "body_bottom": BLACK, "roof": roof, "window": DARK, "wheel": BLACK, "light": YELLOW}


def _bands(tex, color, axis, period, width):
    idx = np.arange(tex.shape[0])
    on = (idx % period) < width
    if axis == 0:
        tex[on, :, :] = color
    else:
        tex[:, on, :] = color
    return tex


def _ball_orange(a, res):
    tex = assets.paint(a, res, {"surface": (0.95, 0.5, 0.05)})
    return _bands(tex, BLACK, 0, res // 4, res // 16)


def _ball_cyan(a, res):
    tex = assets.paint(a, res, {"surface": (0.1, 0.8, 0.85)})
    tex[:, : res // 2] = (0.85, 0.15, 0.7)
    return tex


def _crate_brown(a, res):
    tex = assets.paint(a, res, {"side": (0.55, 0.33, 0.12)})
    return _bands(tex, (0.3, 0.17, 0.05), 0, res // 8, 1)


def _crate_purple(a, res):
    tex = assets.paint(a, res, {"side": (0.45, 0.1, 0.6)})
    cell = res // assets.ATLAS_CELLS
    mid = (np.arange(res) % cell >= cell // 2 - 1) & (np.arange(res) % cell <= cell // 2)
    tex[mid, :] = YELLOW
    tex[:, mid] = YELLOW
    return tex


@dataclass(frozen=True)
class RenderClass:
    name: str
    asset: str
    painter: Callable


RENDER_CLASSES: Tuple[RenderClass, ...] = (
    RenderClass("car_red", "car", lambda a, r: assets.paint(a, r, _car(RED, RED))),
    RenderClass("car_blue", "car", lambda a, r: assets.paint(a, r, _car(BLUE, WHITE))),
    RenderClass("plane_white", "airplane",
                lambda a, r: assets.paint(a, r, {"fuselage": WHITE, "wing": WHITE, "tail": RED})),
    RenderClass("plane_green", "airplane",
                lambda a, r: assets.paint(a, r, {"fuselage": GREEN, "wing": GREEN, "tail": BLACK})),
    RenderClass("sign_stop", "sign",
                lambda a, r: assets.paint(a, r, {"pole": GRAY, "plate": RED, "plate_back": GRAY, "plate_edge": WHITE})),
    RenderClass("sign_yield", "sign",
                lambda a, r: assets.paint(a, r, {"pole": GRAY, "plate": YELLOW, "plate_back": GRAY, "plate_edge": BLACK})),
    RenderClass("ball_orange", "ball", _ball_orange),
    RenderClass("ball_cyan", "ball", _ball_cyan),
    RenderClass("crate_brown", "crate", _crate_brown),
    RenderClass("crate_purple", "crate", _crate_purple),
)

CLASS_NAMES = tuple(c.name for c in RENDER_CLASSES)

# camera/light distribution for the render datasets and 3D experiments
DEFAULT_RANGES = SceneRanges(azimuth=(0.0, 360.0), elevation=(5.0, 35.0), distance=(2.6, 3.4),
                             light_cone=(0.0, 50.0), ambient=(0.3, 0.6), diffuse=(0.3, 0.7))
BACKGROUND = (0.35, 0.35, 0.35)


@lru_cache(maxsize=None)
def asset(name: str) -> assets.Asset:
    return assets.build(name)


def class_texture(label: int, res: int = TEXTURE_RES) -> np.ndarray:
    rc = RENDER_CLASSES[label]
    return rc.painter(asset(rc.asset), res)


def class_index(name: str) -> int:
    return CLASS_NAMES.index(name)


def render_dataset(n_per_class: int, image_size=(32, 32), seed: int = 0,
                   ranges: SceneRanges = DEFAULT_RANGES, jitter: float = 0.15) -> LabeledDataset:
    """Random views of every class; per-image color jitter and background shade."""
    images, labels = [], []
    for label, rc in enumerate(RENDER_CLASSES):
        base = class_texture(label)
        rng = make_rng(seed, 100, label)
        views = sample_scene_params(rng, ranges, n_per_class)
        for cam, light in views:
            tex = np.clip(base * rng.uniform(1 - jitter, 1 + jitter, size=3)
                          + rng.normal(0, 0.02, size=base.shape), 0, 1)
            bg = tuple(np.clip(np.array(BACKGROUND) + rng.uniform(-0.15, 0.15), 0, 1))
            scene = Scene(asset(rc.asset).mesh, tex, [cam], [light], image_size, bg)
            images.append(render_batch(scene).images[0])
            labels.append(label)
    order = make_rng(seed, 101).permutation(len(labels))
    return LabeledDataset(np.stack(images)[order], np.array(labels)[order], len(RENDER_CLASSES))


def pattern_dataset(n: int, size: int = 16, seed: int = 0, contrast: float = 0.12,
                    noise: float = 0.12, num_classes: int = 10) -> LabeledDataset:
    """Noisy oriented color gratings; class = (orientation, tint) pair.

    Each image is ``0.5 + contrast * grating * tint + gaussian noise``, clipped.
    Orientation and tint palettes are fixed; phase, frequency and noise are
    drawn per image.
    """
    pal = make_rng(12345, 0)
    tints = pal.uniform(-1, 1, size=(num_classes, 3))
    tints /= np.abs(tints).max(axis=1, keepdims=True)
    angles = np.pi * np.arange(num_classes) / num_classes
    rng = make_rng(seed, 200)
    labels = rng.integers(0, num_classes, size=n)
    yy, xx = np.mgrid[0:size, 0:size] / size
    images = np.empty((n, size, size, 3))
    for i, k in enumerate(labels):
        freq = rng.uniform(2.0, 3.5)
        phase = rng.uniform(0, 2 * np.pi)
        g = np.sin(2 * np.pi * freq * (xx * np.cos(angles[k]) + yy * np.sin(angles[k])) + phase)
        img = 0.5 + contrast * g[..., None] * tints[k] + rng.normal(0, noise, size=(size, size, 3))
        images[i] = np.clip(img, 0, 1)
    return LabeledDataset(images, labels, num_classes)


def blobs_dataset(n: int, size: int = 8, seed: int = 0) -> LabeledDataset:
    """Two linearly separable classes: bright-left versus bright-right blobs."""
    rng = make_rng(seed, 300)
    labels = np.arange(n) % 2
    images = rng.uniform(0.0, 0.2, size=(n, size, size, 3))
    half = size // 2
    for i, y in enumerate(labels):
        sl = slice(0, half) if y == 0 else slice(half, size)
        images[i, :, sl, :] += 0.6
    return LabeledDataset(np.clip(images, 0, 1), labels, 2)

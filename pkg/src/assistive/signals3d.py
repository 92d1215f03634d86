"""Assistive and deceptive textures and patches optimized through the renderer.

Every iteration renders a batch of views, classifies them, pulls the pixel
gradients back to texture space through the renderer's Jacobian and takes one
texture step. Views are resampled each iteration unless ``fixed_views`` is set.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .classifiers import Classifier
from .core import DimensionError, Direction, LossSpec, OptimConfig, clip_unit, make_rng, project_linf, sign
from .renderer import Mesh, check_texture, Scene, render_batch, sample_scene_params, texture_gradient
from .signals2d import BoundsError, PreconditionError

DEFAULT_VIEWS_PER_STEP = 15


def init_texture_gray(mesh: Mesh) -> np.ndarray:
    return np.full((len(mesh.vertices), 3), 0.5)


def signal_mode(direction, true_label: int, target_label: Optional[int] = None) -> LossSpec:
    """Build the loss for a job on an object of class ``true_label``.

    Assistive jobs always target the true class. Deceptive jobs ascend the
    true-class loss, or descend towards ``target_label`` when it names a
    different class.
    """
    direction = Direction(direction)
    if direction is Direction.ASSISTIVE:
        if target_label is not None and target_label != true_label:
            raise ValueError("assistive signals must target the object's true class")
        return LossSpec(true_label, direction)
    if target_label is None or target_label == true_label:
        return LossSpec(true_label, direction, targeted=False)
    return LossSpec(target_label, direction, targeted=True)


@dataclass
class TextureMask:
    """Boolean mask over texture slots (``(T, T)`` texels or ``(N,)`` vertices)."""

    mask: np.ndarray
    frozen_values: np.ndarray  # texture values kept where mask is False

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        self.frozen_values = np.asarray(self.frozen_values, dtype=np.float64)
        if self.frozen_values.shape[:-1] != self.mask.shape:
            raise DimensionError(f"mask {self.mask.shape} does not match texture {self.frozen_values.shape}")

    @classmethod
    def from_texture(cls, texture, mask) -> "TextureMask":
        return cls(mask, np.array(texture, dtype=np.float64, copy=True))


@dataclass(frozen=True)
class PatchRegion:
    row: int
    col: int
    height: int
    width: int

    def check(self, res: int):
        if self.height <= 0 or self.width <= 0:
            raise BoundsError("patch region must have positive size")
        if self.row < 0 or self.col < 0 or self.row + self.height > res or self.col + self.width > res:
            raise BoundsError(f"region {self} outside a {res}x{res} texture")

    def mask(self, res: int) -> np.ndarray:
        self.check(res)
        m = np.zeros((res, res), dtype=bool)
        m[self.row:self.row + self.height, self.col:self.col + self.width] = True
        return m


@dataclass
class TraceRow:
    iteration: int
    loss: float
    confidence: float  # mean probability of the loss target over the batch


@dataclass
class TextureResult:
    texture: np.ndarray
    trace: List[TraceRow] = field(default_factory=list)
    patch: Optional[np.ndarray] = None
    region: Optional[PatchRegion] = None


def _views(scene: Scene, rng, views_per_step: int, fixed_views: bool):
    if fixed_views:
        return list(zip(scene.cameras, scene.lights))
    if scene.ranges is None:
        raise ValueError("scene has no sampling ranges; set scene.ranges or use fixed_views")
    return sample_scene_params(rng, scene.ranges, views_per_step)


def _optimize(c: Classifier, scene: Scene, mode: LossSpec, cfg: OptimConfig, views_per_step: int,
              mask: Optional[TextureMask], fixed_views: bool) -> TextureResult:
    if fixed_views:
        scene.validate()
    else:
        check_texture(scene.mesh, scene.texture)
    tex = scene.texture.copy()
    original = tex.copy()
    keep = None
    if mask is not None:
        if mask.mask.shape != tex.shape[:-1]:
            raise DimensionError(f"mask {mask.mask.shape} does not match texture {tex.shape}")
        if not mask.mask.any():
            raise PreconditionError("mask has no optimizable entries")
        keep = ~mask.mask
        tex[keep] = mask.frozen_values[keep]
        original = tex.copy()
    rng = make_rng(cfg.seed, 30)
    direction = -1.0 if mode.descend else 1.0
    trace = []
    for it in range(cfg.iterations):
        try:
            views = _views(scene, rng, views_per_step, fixed_views)
            batch = render_batch(scene.with_texture(tex).with_views(views))
            ce, g = c.loss_and_grad(batch.images, mode.target_label)
        except Exception as e:
            raise type(e)(f"iteration {it}: {e}") from e
        probs = c.predict_probs(batch.images)[:, mode.target_label]
        trace.append(TraceRow(it, float(ce.mean()), float(probs.mean())))
        tgrad = texture_gradient(batch, g / len(g))
        if keep is not None:
            tgrad[keep] = 0.0
        step = sign(tgrad) if cfg.use_sign_gradient else tgrad
        tex = clip_unit(tex + direction * cfg.step_size * step)
        if cfg.epsilon is not None:
            tex = project_linf(tex, original, cfg.epsilon)
        if keep is not None:
            tex[keep] = mask.frozen_values[keep]
    return TextureResult(tex, trace)


def optimize_full_texture(c: Classifier, scene: Scene, mode: LossSpec, cfg: OptimConfig,
                          views_per_step: int = DEFAULT_VIEWS_PER_STEP, fixed_views: bool = False) -> TextureResult:
    """Optimize every slot of the scene's bound texture, starting from it."""
    return _optimize(c, scene, mode, cfg, views_per_step, None, fixed_views)


def optimize_masked_texture(c: Classifier, scene: Scene, mask: TextureMask, mode: LossSpec, cfg: OptimConfig,
                            views_per_step: int = DEFAULT_VIEWS_PER_STEP, fixed_views: bool = False) -> TextureResult:
    """As :func:`optimize_full_texture` but only where ``mask`` is set.

    Slots outside the mask are rewritten with ``mask.frozen_values`` after
    every step, so they come back bit-identical.
    """
    return _optimize(c, scene, mode, cfg, views_per_step, mask, fixed_views)


def extract_patch(texture, region: PatchRegion) -> np.ndarray:
    texture = np.asarray(texture)
    region.check(texture.shape[0])
    return texture[region.row:region.row + region.height, region.col:region.col + region.width].copy()


def insert_patch(texture, patch, region: PatchRegion) -> np.ndarray:
    texture = np.asarray(texture, dtype=np.float64)
    region.check(texture.shape[0])
    if np.shape(patch)[:2] != (region.height, region.width):
        raise DimensionError(f"patch {np.shape(patch)} does not match region {region}")
    out = texture.copy()
    out[region.row:region.row + region.height, region.col:region.col + region.width] = patch
    return out


def init_patch_texture(texture, region: PatchRegion, seed: int) -> np.ndarray:
    """Texture with uniform random values inside ``region``."""
    p = make_rng(seed, 31).random((region.height, region.width, 3))
    return insert_patch(texture, p, region)


def optimize_patch_3d(c: Classifier, scene: Scene, region: PatchRegion, mode: LossSpec, cfg: OptimConfig,
                      views_per_step: int = DEFAULT_VIEWS_PER_STEP, fixed_views: bool = False) -> TextureResult:
    """Rectangular UV patch optimized through the renderer.

    The patch starts from seeded uniform noise; everything outside the region
    keeps the scene's texture.
    """
    if not scene.uv_mode:
        raise DimensionError("3D patches need a UV-textured scene")
    res = scene.texture.shape[0]
    m = region.mask(res)
    start = init_patch_texture(scene.texture, region, cfg.seed)
    result = optimize_masked_texture(c, scene.with_texture(start), TextureMask.from_texture(start, m), mode, cfg,
                                     views_per_step, fixed_views)
    result.patch = extract_patch(result.texture, region)
    result.region = region
    return result

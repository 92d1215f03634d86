"""Batched texture renderer with an exact sparse Jacobian.

Geometry, cameras and lights are fixed inputs; only texture values vary.
Under hard z-buffer visibility with Lambert + ambient shading every covered
pixel is a fixed non-negative combination of a few texels (UV mode, bilinear)
or vertex colors (vertex mode), so the render is linear in the texture and
the Jacobian transpose is a scatter-add.

Conventions: UV ``(u, v)`` map to texel ``(column, row)`` with ``v`` growing
downward (row 0 is the top of the raster). Camera looks at the origin with
+Y up; azimuth rotates about Y starting from +Z, elevation tilts toward +Y.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .core import DimensionError


class GeometryError(ValueError):
    """Mesh violates its invariants."""


@dataclass
class Mesh:
    vertices: np.ndarray  # (N, 3)
    faces: np.ndarray  # (M, 3)
    uv: Optional[np.ndarray] = None  # (M, 3, 2) per face corner
    name: str = "mesh"
    groups: dict = field(default_factory=dict)  # part name -> face indices
    normals: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.uv is not None:
            self.uv = np.asarray(self.uv, dtype=np.float64).reshape(len(self.faces), 3, 2)
        self.validate()
        self.normals = vertex_normals(self.vertices, self.faces)

    def validate(self):
        n = len(self.vertices)
        if len(self.faces) == 0:
            raise GeometryError("mesh has no faces")
        if self.faces.min() < 0 or self.faces.max() >= n:
            raise GeometryError("face index out of range")
        area = face_areas(self.vertices, self.faces)
        bad = np.flatnonzero(area <= 1e-12)
        if len(bad):
            raise GeometryError(f"degenerate face {int(bad[0])} (area {area[bad[0]]:.3g})")

    @property
    def has_uv(self) -> bool:
        return self.uv is not None

    def group_vertices(self, names) -> np.ndarray:
        """Sorted vertex indices used by the faces of the named groups."""
        faces = [self.faces[self.groups[n]] for n in names if n in self.groups]
        if not faces:
            return np.zeros(0, dtype=np.int64)
        return np.unique(np.concatenate(faces).ravel())

    @property
    def radius(self) -> float:
        return float(np.linalg.norm(self.vertices, axis=1).max())


def face_areas(vertices, faces):
    a, b, c = (vertices[faces[:, i]] for i in range(3))
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def vertex_normals(vertices, faces):
    """Area-weighted average of incident face normals, normalized."""
    a, b, c = (vertices[faces[:, i]] for i in range(3))
    fn = np.cross(b - a, c - a)  # length = 2 * area
    vn = np.zeros_like(vertices)
    for i in range(3):
        np.add.at(vn, faces[:, i], fn)
    norm = np.linalg.norm(vn, axis=1, keepdims=True)
    # isolated vertices keep a zero normal
    return np.divide(vn, norm, out=np.zeros_like(vn), where=norm > 0)


@dataclass(frozen=True)
class Camera:
    distance: float
    azimuth: float = 0.0
    elevation: float = 0.0
    fov_y: float = 40.0

    def __post_init__(self):
        if not self.distance > 0:
            raise ValueError("camera distance must be > 0")
        if not 0 < self.fov_y < 180:
            raise ValueError("fov_y must lie in (0, 180)")
        if not -90 < self.elevation < 90:
            raise ValueError("elevation must lie in (-90, 90)")

    @property
    def eye(self) -> np.ndarray:
        az, el = np.radians(self.azimuth), np.radians(self.elevation)
        return self.distance * np.array([np.cos(el) * np.sin(az), np.sin(el), np.cos(el) * np.cos(az)])

    def frame(self):
        """Right, up and forward unit vectors of the right-handed view frame."""
        f = -self.eye / np.linalg.norm(self.eye)
        r = np.cross(f, [0.0, 1.0, 0.0])
        r /= np.linalg.norm(r)
        u = np.cross(r, f)
        return r, u, f

    def to_dict(self):
        return {"distance": self.distance, "azimuth": self.azimuth, "elevation": self.elevation, "fov_y": self.fov_y}


@dataclass(frozen=True)
class Light:
    """Directional light; ``direction`` is the way the light travels."""

    direction: Tuple[float, float, float] = (0.0, 0.0, -1.0)
    ambient: float = 0.5
    diffuse: float = 0.5

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise ValueError("light direction must be a unit vector")
        if self.ambient < 0 or self.diffuse < 0 or self.ambient + self.diffuse > 1 + 1e-12:
            raise ValueError("need ambient, diffuse >= 0 and ambient + diffuse <= 1")
        object.__setattr__(self, "direction", tuple(float(v) for v in d))

    @classmethod
    def toward(cls, vector, ambient=0.5, diffuse=0.5) -> "Light":
        v = np.asarray(vector, dtype=np.float64)
        return cls(tuple(v / np.linalg.norm(v)), ambient, diffuse)

    def to_dict(self):
        return {"direction": list(self.direction), "ambient": self.ambient, "diffuse": self.diffuse}


@dataclass
class Scene:
    """Mesh plus its bound texture and paired camera/light lists.

    ``texture`` is ``(T, T, 3)`` for UV meshes or ``(N, 3)`` per-vertex colors.
    """

    mesh: Mesh
    texture: np.ndarray
    cameras: List[Camera]
    lights: List[Light]
    image_size: Tuple[int, int] = (32, 32)
    background: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    ranges: Optional["SceneRanges"] = None  # view/light distribution for sampling

    def __post_init__(self):
        self.texture = np.asarray(self.texture, dtype=np.float64)
        self.cameras = list(self.cameras)
        self.lights = list(self.lights)

    @property
    def uv_mode(self) -> bool:
        return self.texture.ndim == 3

    def with_texture(self, texture) -> "Scene":
        return replace(self, texture=texture)

    def with_views(self, views: Sequence[Tuple[Camera, Light]]) -> "Scene":
        views = list(views)
        return replace(self, cameras=[c for c, _ in views], lights=[l for _, l in views])

    def validate(self):
        if not self.cameras:
            raise ValueError("scene has no cameras")
        if len(self.lights) != len(self.cameras):
            raise ValueError("need exactly one light per camera")
        check_texture(self.mesh, self.texture)


def check_texture(mesh: Mesh, texture: np.ndarray):
    if texture.ndim == 3:
        t = texture.shape[0]
        if texture.shape != (t, t, 3) or t < 4 or t & (t - 1):
            raise DimensionError(f"UV texture must be TxTx3 with T a power of two >= 4, got {texture.shape}")
        if not mesh.has_uv:
            raise DimensionError("UV texture bound to a mesh without UV coordinates")
    elif texture.shape != (len(mesh.vertices), 3):
        raise DimensionError(f"vertex texture must be ({len(mesh.vertices)}, 3), got {texture.shape}")


@dataclass
class ViewJacobian:
    """Sparse map from texture slots to pixels of one view.

    Covered pixel ``pix[k]`` (flat index, ascending) has value
    ``sum_j weight[k, j] * texture[index[k, j]]`` per channel.
    """

    pix: np.ndarray  # (K,)
    index: np.ndarray  # (K, m)
    weight: np.ndarray  # (K, m)
    shape: Tuple[int, int]


@dataclass
class RenderedBatch:
    images: np.ndarray  # (V, H, W, 3)
    jacobians: List[ViewJacobian]
    texture_shape: Tuple[int, ...]


def sample_bilinear_arrays(res: int, u, v):
    """Vectorized bilinear lookup: returns flat texel indices (K, 4) and weights (K, 4)."""
    x = np.asarray(u, dtype=np.float64) * res - 0.5
    y = np.asarray(v, dtype=np.float64) * res - 0.5
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx, fy = x - x0, y - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    xs = np.clip(np.stack([x0, x0 + 1], -1), 0, res - 1)
    ys = np.clip(np.stack([y0, y0 + 1], -1), 0, res - 1)
    idx = np.stack([ys[..., 0] * res + xs[..., 0], ys[..., 0] * res + xs[..., 1],
                    ys[..., 1] * res + xs[..., 0], ys[..., 1] * res + xs[..., 1]], -1)
    w = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy], -1)
    return idx, w


def sample_bilinear(texture: np.ndarray, u: float, v: float):
    """Bilinear sample at ``(u, v)`` with border clamping.

    Returns ``(rgb, pairs)`` where ``pairs`` lists ``(flat texel index, weight)``
    with zero weights dropped and clamped duplicates merged.
    """
    texture = np.asarray(texture, dtype=np.float64)
    res = texture.shape[0]
    idx, w = sample_bilinear_arrays(res, u, v)
    merged = {}
    for i, wi in zip(idx.tolist(), w.tolist()):
        if wi != 0.0:
            merged[i] = merged.get(i, 0.0) + wi
    pairs = sorted(merged.items())
    flat = texture.reshape(-1, 3)
    rgb = sum(wi * flat[i] for i, wi in pairs)
    return np.asarray(rgb), pairs


NEAR = 1e-3


def rasterize(mesh: Mesh, camera: Camera, light: Light, image_size, uv_res: Optional[int]) -> ViewJacobian:
    """Visibility, interpolation and shading for one view, as a sparse Jacobian.

    ``uv_res`` selects UV mode (bilinear texels); ``None`` selects vertex colors.
    """
    h, w = image_size
    r, u, f = camera.frame()
    rel = mesh.vertices - camera.eye
    xc, yc, zc = rel @ r, rel @ u, rel @ f
    t = np.tan(np.radians(camera.fov_y) / 2)
    aspect = w / h
    safe_z = np.where(zc > NEAR, zc, 1.0)
    col = ((xc / (safe_z * t * aspect)) + 1) / 2 * w - 0.5
    row = (1 - yc / (safe_z * t)) / 2 * h - 0.5

    faces = mesh.faces
    fz = zc[faces]
    keep = (fz > NEAR).all(axis=1)
    fc, fr = col[faces], row[faces]
    x0 = np.clip(np.ceil(fc.min(1)), 0, w).astype(np.int64)
    x1 = np.clip(np.floor(fc.max(1)), -1, w - 1).astype(np.int64)
    y0 = np.clip(np.ceil(fr.min(1)), 0, h).astype(np.int64)
    y1 = np.clip(np.floor(fr.max(1)), -1, h - 1).astype(np.int64)
    bw = np.maximum(x1 - x0 + 1, 0)
    bh = np.maximum(y1 - y0 + 1, 0)
    # signed doubled area in screen space; near-zero means edge-on
    area = (fc[:, 1] - fc[:, 0]) * (fr[:, 2] - fr[:, 0]) - (fc[:, 2] - fc[:, 0]) * (fr[:, 1] - fr[:, 0])
    keep &= np.abs(area) > 1e-12
    counts = np.where(keep, bw * bh, 0)
    m = 3 if uv_res is None else 4
    total = int(counts.sum())
    if total == 0:
        return ViewJacobian(np.zeros(0, np.int64), np.zeros((0, m), np.int64), np.zeros((0, m)), (h, w))

    fid = np.repeat(np.arange(len(faces)), counts)
    starts = np.cumsum(counts) - counts
    local = np.arange(total) - np.repeat(starts, counts)
    px = x0[fid] + local % bw[fid]
    py = y0[fid] + local // bw[fid]

    c0, c1, c2 = fc[fid, 0], fc[fid, 1], fc[fid, 2]
    r0, r1, r2 = fr[fid, 0], fr[fid, 1], fr[fid, 2]
    a = area[fid]
    l0 = ((c1 - px) * (r2 - py) - (c2 - px) * (r1 - py)) / a
    l1 = ((c2 - px) * (r0 - py) - (c0 - px) * (r2 - py)) / a
    l2 = 1.0 - l0 - l1
    inside = (l0 >= 0) & (l1 >= 0) & (l2 >= 0)
    fid, px, py = fid[inside], px[inside], py[inside]
    lam = np.stack([l0[inside], l1[inside], l2[inside]], 1)
    if len(fid) == 0:
        return ViewJacobian(np.zeros(0, np.int64), np.zeros((0, m), np.int64), np.zeros((0, m)), (h, w))

    # perspective-correct barycentrics and depth
    inv_z = lam / fz[fid]
    depth = 1.0 / inv_z.sum(1)
    bary = inv_z * depth[:, None]

    pix = py * w + px
    order = np.lexsort((fid, depth, pix))
    pix_sorted = pix[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = pix_sorted[1:] != pix_sorted[:-1]
    win = order[first]
    pix, fid, bary = pix[win], fid[win], bary[win]

    vf = faces[fid]
    n = np.einsum("kj,kjd->kd", bary, mesh.normals[vf])
    nn = np.linalg.norm(n, axis=1, keepdims=True)
    n = np.divide(n, nn, out=np.zeros_like(n), where=nn > 0)
    pos = np.einsum("kj,kjd->kd", bary, mesh.vertices[vf])
    # two-sided lighting: use the normal facing the camera
    facing = np.einsum("kd,kd->k", n, camera.eye - pos)
    n = np.where(facing[:, None] < 0, -n, n)
    ldir = np.asarray(light.direction)
    shade = light.ambient + light.diffuse * np.maximum(0.0, -(n @ ldir))

    if uv_res is None:
        index, weight = vf, bary * shade[:, None]
    else:
        uvs = np.einsum("kj,kjd->kd", bary, mesh.uv[fid])
        index, bw_ = sample_bilinear_arrays(uv_res, uvs[:, 0], uvs[:, 1])
        weight = bw_ * shade[:, None]
    return ViewJacobian(pix, index, weight, (h, w))


def apply_jacobian(jac: ViewJacobian, texture: np.ndarray, background) -> np.ndarray:
    h, w = jac.shape
    flat_tex = texture.reshape(-1, 3)
    img = np.empty((h * w, 3))
    img[:] = np.asarray(background, dtype=np.float64)
    img[jac.pix] = np.einsum("km,kmc->kc", jac.weight, flat_tex[jac.index])
    return img.reshape(h, w, 3)


def render_batch(scene: Scene) -> RenderedBatch:
    scene.validate()
    uv_res = scene.texture.shape[0] if scene.uv_mode else None
    jacs = [rasterize(scene.mesh, cam, light, scene.image_size, uv_res)
            for cam, light in zip(scene.cameras, scene.lights)]
    images = np.stack([apply_jacobian(j, scene.texture, scene.background) for j in jacs])
    return RenderedBatch(images, jacs, scene.texture.shape)


def texture_gradient(batch: RenderedBatch, pixel_grads) -> np.ndarray:
    """Pull pixel-space gradients back to texture space (Jacobian transpose).

    Contributions from all views are summed in view order, then pixel-major,
    then per-pixel list order.
    """
    pixel_grads = np.asarray(pixel_grads, dtype=np.float64)
    if pixel_grads.shape != batch.images.shape:
        raise DimensionError(f"pixel_grads {pixel_grads.shape} != images {batch.images.shape}")
    slots = int(np.prod(batch.texture_shape[:-1]))
    out = np.zeros((slots, 3))
    for v, jac in enumerate(batch.jacobians):
        if len(jac.pix) == 0:
            continue
        g = pixel_grads[v].reshape(-1, 3)[jac.pix]
        contrib = jac.weight[:, :, None] * g[:, None, :]
        idx = jac.index.ravel()
        for ch in range(3):
            out[:, ch] += np.bincount(idx, weights=contrib[:, :, ch].ravel(), minlength=slots)
    return out.reshape(batch.texture_shape)


def coverage_mask(batch: RenderedBatch) -> np.ndarray:
    """Boolean ``(V, H, W)`` mask of covered pixels."""
    v = len(batch.jacobians)
    h, w = batch.images.shape[1:3]
    mask = np.zeros((v, h * w), dtype=bool)
    for i, jac in enumerate(batch.jacobians):
        mask[i, jac.pix] = True
    return mask.reshape(v, h, w)


@dataclass(frozen=True)
class SceneRanges:
    """Uniform sampling ranges for cameras and lights.

    ``light_cone`` is the half-angle (degrees) of the cone of light directions
    around the camera's viewing direction. Diffuse strength is capped so that
    ambient + diffuse stays within 1.
    """

    azimuth: Tuple[float, float] = (0.0, 360.0)
    elevation: Tuple[float, float] = (0.0, 40.0)
    distance: Tuple[float, float] = (2.0, 3.0)
    light_cone: Tuple[float, float] = (0.0, 45.0)
    ambient: Tuple[float, float] = (0.3, 0.6)
    diffuse: Tuple[float, float] = (0.4, 0.7)
    fov_y: float = 40.0

    def __post_init__(self):
        for name in ("azimuth", "elevation", "distance", "light_cone", "ambient", "diffuse"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"empty range for {name}: ({lo}, {hi})")

    def scaled_distance(self, radius: float) -> "SceneRanges":
        lo, hi = self.distance
        return replace(self, distance=(lo * radius, hi * radius))


def sample_scene_params(rng: np.random.Generator, ranges: SceneRanges, count: int) -> List[Tuple[Camera, Light]]:
    if count < 1:
        raise ValueError("count must be >= 1")
    out = []
    for _ in range(count):
        az = rng.uniform(*ranges.azimuth)
        el = rng.uniform(*ranges.elevation)
        dist = rng.uniform(*ranges.distance)
        theta = np.radians(rng.uniform(*ranges.light_cone))
        phi = rng.uniform(0.0, 2 * np.pi)
        ka = rng.uniform(*ranges.ambient)
        kd = min(rng.uniform(*ranges.diffuse), 1.0 - ka)
        cam = Camera(dist, az, el, ranges.fov_y)
        r, u, f = cam.frame()
        d = np.cos(theta) * f + np.sin(theta) * (np.cos(phi) * r + np.sin(phi) * u)
        out.append((cam, Light.toward(d, ka, kd)))
    return out

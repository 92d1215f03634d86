"""Procedural low-poly meshes with UV atlases and named parts.

Each asset lays its parts out on an ``n x n`` grid of atlas cells so that
textures can be painted per part and masks built per part.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, Tuple

import numpy as np

from .renderer import Mesh

ATLAS_CELLS = 4


@dataclass
class Asset:
    mesh: Mesh
    cells: Dict[str, List[Tuple[int, int]]]  # part -> atlas cells
    atlas_cells: int = ATLAS_CELLS

    def cell_rect(self, cell, res: int):
        """Texel rectangle ``(row, col, h, w)`` of an atlas cell at resolution ``res``."""
        size = res // self.atlas_cells
        return cell[0] * size, cell[1] * size, size, size

    def texel_mask(self, parts, res: int) -> np.ndarray:
        mask = np.zeros((res, res), dtype=bool)
        for p in parts:
            for cell in self.cells.get(p, []):
                r, c, h, w = self.cell_rect(cell, res)
                mask[r:r + h, c:c + w] = True
        return mask


class _Builder:
    def __init__(self, res_hint: int = 64, n: int = ATLAS_CELLS):
        self.v, self.f, self.uv = [], [], []
        self.groups: Dict[str, List[int]] = {}
        self.cells: Dict[str, List[Tuple[int, int]]] = {}
        self.n = n
        self.inset = 0.5 / res_hint

    def _cell_uv(self, cell):
        r, c = cell
        return (c / self.n + self.inset, r / self.n + self.inset,
                (c + 1) / self.n - self.inset, (r + 1) / self.n - self.inset)

    def _register(self, group, cell, faces):
        self.groups.setdefault(group, []).extend(faces)
        cells = self.cells.setdefault(group, [])
        if cell not in cells:
            cells.append(cell)

    def quad(self, p00, p10, p01, p11, cell, group, nu=1, nv=1):
        """Bilinear patch; ``p00`` maps to the cell's top-left texel."""
        p00, p10, p01, p11 = (np.asarray(p, dtype=np.float64) for p in (p00, p10, p01, p11))
        u0, v0, u1, v1 = self._cell_uv(cell)
        base = len(self.v)
        for j in range(nv + 1):
            t = j / nv
            for i in range(nu + 1):
                s = i / nu
                self.v.append((1 - s) * (1 - t) * p00 + s * (1 - t) * p10 + (1 - s) * t * p01 + s * t * p11)
        uvs = {}
        for j in range(nv + 1):
            for i in range(nu + 1):
                uvs[base + j * (nu + 1) + i] = (u0 + (u1 - u0) * i / nu, v0 + (v1 - v0) * j / nv)
        new = []
        for j in range(nv):
            for i in range(nu):
                a = base + j * (nu + 1) + i
                b, c, d = a + 1, a + nu + 1, a + nu + 2
                for tri in ((a, c, b), (b, c, d)):
                    new.append(len(self.f))
                    self.f.append(tri)
                    self.uv.append([uvs[k] for k in tri])
        self._register(group, cell, new)

    def box(self, center, size, cells: Dict[str, Tuple[Tuple[int, int], str]], subdiv=(1, 1)):
        """Axis-aligned box. ``cells`` maps side (+x, -x, +y, -y, +z, -z) to (cell, group)."""
        c = np.asarray(center, dtype=np.float64)
        hx, hy, hz = np.asarray(size, dtype=np.float64) / 2
        x0, x1, y0, y1, z0, z1 = c[0] - hx, c[0] + hx, c[1] - hy, c[1] + hy, c[2] - hz, c[2] + hz
        nu, nv = subdiv
        sides = {
            "+z": ((x0, y1, z1), (x1, y1, z1), (x0, y0, z1), (x1, y0, z1)),
            "-z": ((x1, y1, z0), (x0, y1, z0), (x1, y0, z0), (x0, y0, z0)),
            "+x": ((x1, y1, z1), (x1, y1, z0), (x1, y0, z1), (x1, y0, z0)),
            "-x": ((x0, y1, z0), (x0, y1, z1), (x0, y0, z0), (x0, y0, z1)),
            "+y": ((x0, y1, z0), (x1, y1, z0), (x0, y1, z1), (x1, y1, z1)),
            "-y": ((x0, y0, z1), (x1, y0, z1), (x0, y0, z0), (x1, y0, z0)),
        }
        for side, corners in sides.items():
            if side in cells:
                cell, group = cells[side]
                self.quad(*corners, cell=cell, group=group, nu=nu, nv=nv)

    def cylinder(self, center, axis, radius, length, cell, group, segments=12, caps=True):
        c = np.asarray(center, dtype=np.float64)
        ax = {"x": 0, "y": 1, "z": 2}[axis]
        o1, o2 = [k for k in range(3) if k != ax]
        u0, v0, u1, v1 = self._cell_uv(cell)

        def point(theta, h):
            p = c.copy()
            p[ax] += h
            p[o1] += radius * np.cos(theta)
            p[o2] += radius * np.sin(theta)
            return p

        new = []
        thetas = np.linspace(0, 2 * np.pi, segments + 1)
        vm = (v0 + v1) / 2
        for k in range(segments):
            a, b = thetas[k], thetas[k + 1]
            ua, ub = u0 + (u1 - u0) * k / segments, u0 + (u1 - u0) * (k + 1) / segments
            quad = [point(a, -length / 2), point(b, -length / 2), point(a, length / 2), point(b, length / 2)]
            quv = [(ua, v0), (ub, v0), (ua, vm), (ub, vm)]
            base = len(self.v)
            self.v.extend(quad)
            for tri in ((0, 2, 1), (1, 2, 3)):
                new.append(len(self.f))
                self.f.append(tuple(base + t for t in tri))
                self.uv.append([quv[t] for t in tri])
        if caps:
            uc, vc = (u0 + u1) / 2, (vm + v1) / 2
            ru, rv = (u1 - u0) / 2, (v1 - vm) / 2
            for h in (-length / 2, length / 2):
                centre = c.copy()
                centre[ax] += h
                for k in range(segments):
                    a, b = thetas[k], thetas[k + 1]
                    base = len(self.v)
                    self.v.extend([centre, point(a, h), point(b, h)])
                    new.append(len(self.f))
                    self.f.append((base, base + 1, base + 2))
                    self.uv.append([(uc, vc), (uc + ru * np.cos(a), vc + rv * np.sin(a)),
                                    (uc + ru * np.cos(b), vc + rv * np.sin(b))])
        self._register(group, cell, new)

    def build(self, name) -> Asset:
        groups = {g: np.asarray(ix, dtype=np.int64) for g, ix in self.groups.items()}
        mesh = Mesh(np.array(self.v), np.array(self.f), np.array(self.uv), name=name, groups=groups)
        return Asset(mesh, self.cells, self.n)


def car(res_hint: int = 64) -> Asset:
    """Sedan-like car, front toward +x, left side facing +z."""
    b = _Builder(res_hint)
    body = {"+z": ((0, 0), "body_left"), "-z": ((0, 1), "body_right"), "+y": ((0, 2), "body_top"),
            "+x": ((0, 3), "body_front"), "-x": ((1, 0), "body_back"), "-y": ((1, 1), "body_bottom")}
    b.box((0, -0.03, 0), (2.0, 0.45, 0.9), body, subdiv=(8, 3))
    cabin = {"+z": ((1, 3), "window"), "-z": ((1, 3), "window"), "+x": ((1, 3), "window"),
             "-x": ((1, 3), "window"), "+y": ((1, 2), "roof")}
    b.box((-0.05, 0.37, 0), (0.95, 0.35, 0.76), cabin, subdiv=(4, 2))
    for x in (-0.6, 0.6):
        for z in (-0.45, 0.45):
            b.cylinder((x, -0.25, z), "z", 0.2, 0.12, (2, 0), "wheel", segments=12)
    for z in (-0.3, 0.3):
        b.box((1.01, 0.05, z), (0.04, 0.1, 0.16), {s: ((2, 1), "light") for s in ("+x", "+y", "-y", "+z", "-z")})
    return b.build("car")


def airplane(res_hint: int = 64) -> Asset:
    b = _Builder(res_hint)
    b.cylinder((0, 0, 0), "x", 0.16, 1.9, (0, 0), "fuselage", segments=12)
    wing = {s: ((0, 1), "wing") for s in ("+y", "-y", "+z", "-z", "+x", "-x")}
    b.box((0.1, 0, 0), (0.45, 0.04, 2.0), wing, subdiv=(2, 6))
    tail = {s: ((0, 2), "tail") for s in ("+z", "-z", "+x", "-x", "+y")}
    b.box((-0.85, 0.25, 0), (0.25, 0.4, 0.04), tail)
    stab = {s: ((0, 2), "tail") for s in ("+y", "-y", "+x", "-x")}
    b.box((-0.85, 0.02, 0), (0.22, 0.03, 0.7), stab)
    return b.build("airplane")


def sign(res_hint: int = 64) -> Asset:
    b = _Builder(res_hint)
    b.cylinder((0, -0.45, 0), "y", 0.04, 1.1, (0, 0), "pole", segments=8)
    plate = {"+z": ((0, 1), "plate"), "-z": ((0, 2), "plate_back"), "+x": ((0, 3), "plate_edge"),
             "-x": ((0, 3), "plate_edge"), "+y": ((0, 3), "plate_edge"), "-y": ((0, 3), "plate_edge")}
    b.box((0, 0.5, 0), (0.95, 0.95, 0.05), plate, subdiv=(4, 4))
    return b.build("sign")


def crate(res_hint: int = 64) -> Asset:
    b = _Builder(res_hint)
    sides = {s: ((k // 4, k % 4), "side") for k, s in enumerate(("+x", "-x", "+y", "-y", "+z", "-z"))}
    b.box((0, 0, 0), (1.1, 1.1, 1.1), sides, subdiv=(3, 3))
    return b.build("crate")


def uv_sphere(radius: float = 0.8, n_lat: int = 10, n_lon: int = 16, name: str = "sphere") -> Asset:
    """Latitude/longitude sphere whose UVs cover the whole texture."""
    verts, faces, uvs = [], [], []

    def pt(lat, lon):
        return radius * np.array([np.cos(lat) * np.sin(lon), np.sin(lat), np.cos(lat) * np.cos(lon)])

    for i in range(n_lat):
        la0 = np.pi / 2 - np.pi * i / n_lat
        la1 = np.pi / 2 - np.pi * (i + 1) / n_lat
        for j in range(n_lon):
            lo0, lo1 = 2 * np.pi * j / n_lon, 2 * np.pi * (j + 1) / n_lon
            u0, u1, v0, v1 = j / n_lon, (j + 1) / n_lon, i / n_lat, (i + 1) / n_lat
            quad = [(pt(la0, lo0), (u0, v0)), (pt(la0, lo1), (u1, v0)),
                    (pt(la1, lo0), (u0, v1)), (pt(la1, lo1), (u1, v1))]
            tris = []
            if i > 0:
                tris.append((0, 2, 1))
            if i < n_lat - 1:
                tris.append((1, 2, 3))
            if i == 0:
                tris = [(0, 2, 3)]
            if i == n_lat - 1:
                tris = [(0, 2, 1)]
            for tri in tris:
                base = len(verts)
                for t in tri:
                    verts.append(quad[t][0])
                faces.append((base, base + 1, base + 2))
                uvs.append([quad[t][1] for t in tri])
    faces = np.array(faces)
    mesh = Mesh(np.array(verts), faces, np.array(uvs), name=name,
                groups={"surface": np.arange(len(faces))})
    cells = {"surface": [(r, c) for r in range(ATLAS_CELLS) for c in range(ATLAS_CELLS)]}
    return Asset(mesh, cells)


def quad(size: float = 1.0, name: str = "quad") -> Asset:
    """Square in the z=0 plane facing +z; UVs span the full texture."""
    h = size / 2
    verts = np.array([[-h, h, 0], [h, h, 0], [-h, -h, 0], [h, -h, 0]], dtype=np.float64)
    faces = np.array([[0, 2, 1], [1, 2, 3]])
    corner_uv = {0: (0, 0), 1: (1, 0), 2: (0, 1), 3: (1, 1)}
    uv = np.array([[corner_uv[k] for k in f] for f in faces], dtype=np.float64)
    mesh = Mesh(verts, faces, uv, name=name, groups={"surface": np.arange(2)})
    return Asset(mesh, {"surface": [(r, c) for r in range(ATLAS_CELLS) for c in range(ATLAS_CELLS)]})


BUILDERS: Dict[str, Callable[[], Asset]] = {
    "car": car, "airplane": airplane, "sign": sign, "crate": crate,
    "ball": lambda: uv_sphere(0.8, name="ball"), "sphere": uv_sphere, "quad": quad,
    "panel": lambda: quad(4.0, name="panel"),
}


def build(name: str) -> Asset:
    try:
        return BUILDERS[name]()
    except KeyError:
        raise ValueError(f"unknown asset {name!r}; choose from {sorted(BUILDERS)}") from None


def paint(asset: Asset, res: int, colors: Dict[str, Tuple[float, float, float]],
          base=(0.5, 0.5, 0.5)) -> np.ndarray:
    """UV texture with each part's atlas cells filled by its color."""
    tex = np.empty((res, res, 3))
    tex[:] = base
    for part, color in colors.items():
        for cell in asset.cells.get(part, []):
            r, c, h, w = asset.cell_rect(cell, res)
            tex[r:r + h, c:c + w] = color
    return tex

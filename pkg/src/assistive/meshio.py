"""Wavefront OBJ/MTL and ASCII PLY reading and writing."""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .core import load_png, save_png
from .renderer import Mesh


class MeshFormatError(ValueError):
    pass


def _index(token: str, count: int, lineno: int) -> int:
    i = int(token)
    if i < 0:
        i += count
    else:
        i -= 1
    if not 0 <= i < count:
        raise MeshFormatError(f"line {lineno}: index {token} out of range")
    return i


def load_obj(path) -> Tuple[Mesh, Optional[np.ndarray]]:
    """Read an OBJ file, triangulating polygons as fans.

    Returns the mesh and, when an MTL ``map_Kd`` image is referenced, the
    diffuse texture as a float array. OBJ ``vt`` rows count from the bottom,
    so ``v`` is flipped into the renderer's row-down convention.
    """
    path = Path(path)
    verts, tex, faces, face_uv = [], [], [], []
    mtllibs = []
    any_vt, any_plain = False, False
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        parts = line.split("#", 1)[0].split()
        if not parts:
            continue
        tag = parts[0]
        try:
            if tag == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif tag == "vt":
                tex.append([float(parts[1]), 1.0 - float(parts[2])])
            elif tag == "f":
                corners = []
                for tok in parts[1:]:
                    fields = tok.split("/")
                    vi = _index(fields[0], len(verts), lineno)
                    ti = _index(fields[1], len(tex), lineno) if len(fields) > 1 and fields[1] else None
                    corners.append((vi, ti))
                if len(corners) < 3:
                    raise MeshFormatError(f"line {lineno}: face with fewer than 3 corners")
                for k in range(1, len(corners) - 1):
                    tri = (corners[0], corners[k], corners[k + 1])
                    faces.append([c[0] for c in tri])
                    if all(c[1] is not None for c in tri):
                        any_vt = True
                        face_uv.append([tex[c[1]] for c in tri])
                    else:
                        any_plain = True
                        face_uv.append(None)
            elif tag == "mtllib":
                mtllibs.append(" ".join(parts[1:]))
        except (ValueError, IndexError) as e:
            if isinstance(e, MeshFormatError):
                raise
            raise MeshFormatError(f"line {lineno}: cannot parse {tag!r} record") from None
    if any_vt and any_plain:
        raise MeshFormatError("faces mix records with and without texture coordinates")
    uv = np.array(face_uv) if any_vt else None
    mesh = Mesh(np.array(verts), np.array(faces), uv, name=path.stem)
    texture = None
    for lib in mtllibs:
        mtl = path.parent / lib
        if mtl.exists():
            for line in mtl.read_text().splitlines():
                parts = line.split()
                if parts and parts[0] == "map_Kd":
                    texture = load_png(mtl.parent / parts[-1])
                    break
    return mesh, texture


def save_obj(path, mesh: Mesh, texture: Optional[np.ndarray] = None) -> Path:
    """Write ``mesh`` as OBJ; a UV texture is written as PNG next to an MTL."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    if texture is not None and mesh.has_uv:
        png = path.with_suffix(".png")
        save_png(png, texture)
        path.with_suffix(".mtl").write_text(f"newmtl material0\nKd 1 1 1\nmap_Kd {png.name}\n")
        lines += [f"mtllib {path.with_suffix('.mtl').name}", "usemtl material0"]
    lines += [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.vertices]
    if mesh.has_uv:
        for tri in mesh.uv:
            lines += [f"vt {u:.9g} {1.0 - v:.9g}" for u, v in tri]
        for k, (a, b, c) in enumerate(mesh.faces):
            t = 3 * k
            lines.append(f"f {a + 1}/{t + 1} {b + 1}/{t + 2} {c + 1}/{t + 3}")
    else:
        lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    path.write_text("\n".join(lines) + "\n")
    return path


def save_ply(path, mesh: Mesh, colors: np.ndarray) -> Path:
    """ASCII PLY with per-vertex 8-bit RGB."""
    from .core import to_bytes

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rgb = to_bytes(np.asarray(colors).reshape(-1, 1, 3)).reshape(-1, 3)
    head = [
        "ply", "format ascii 1.0",
        f"element vertex {len(mesh.vertices)}",
        "property float x", "property float y", "property float z",
        "property uchar red", "property uchar green", "property uchar blue",
        f"element face {len(mesh.faces)}",
        "property list uchar int vertex_indices", "end_header",
    ]
    body = [f"{x:.9g} {y:.9g} {z:.9g} {r} {g} {b}" for (x, y, z), (r, g, b) in zip(mesh.vertices, rgb)]
    body += [f"3 {a} {b} {c}" for a, b, c in mesh.faces]
    path.write_text("\n".join(head + body) + "\n")
    return path


def load_ply(path) -> Tuple[Mesh, Optional[np.ndarray]]:
    """Read an ASCII PLY; returns the mesh and per-vertex colors if present."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise MeshFormatError("missing 'ply' magic")
    nv = nf = 0
    props, current = [], None
    i = 1
    while i < len(lines) and lines[i].strip() != "end_header":
        parts = lines[i].split()
        if parts[:1] == ["format"] and parts[1] != "ascii":
            raise MeshFormatError("only ASCII PLY is supported")
        if parts[:1] == ["element"]:
            current = parts[1]
            if current == "vertex":
                nv = int(parts[2])
            elif current == "face":
                nf = int(parts[2])
        elif parts[:1] == ["property"] and current == "vertex":
            props.append(parts[-1])
        i += 1
    if i == len(lines):
        raise MeshFormatError("missing end_header")
    body = lines[i + 1:]
    if len(body) < nv + nf:
        raise MeshFormatError("file ends before all elements were read")
    try:
        vrows = np.array([[float(x) for x in body[k].split()[:len(props)]] for k in range(nv)])
        faces = []
        for k in range(nv, nv + nf):
            vals = [int(x) for x in body[k].split()]
            idx = vals[1:1 + vals[0]]
            faces += [[idx[0], idx[j], idx[j + 1]] for j in range(1, len(idx) - 1)]
    except ValueError:
        raise MeshFormatError("non-numeric element data") from None
    col = {p: j for j, p in enumerate(props)}
    verts = vrows[:, [col["x"], col["y"], col["z"]]]
    colors = None
    if all(k in col for k in ("red", "green", "blue")):
        colors = vrows[:, [col["red"], col["green"], col["blue"]]] / 255.0
    return Mesh(verts, np.array(faces), name=Path(path).stem), colors

import numpy as np
import pytest

from assistive import assets
from assistive.core import to_bytes
from assistive.meshio import MeshFormatError, load_obj, load_ply, save_obj, save_ply
from assistive.renderer import Camera, Light, Scene, render_batch


def test_obj_round_trip_with_texture(tmp_path, rng):
    mesh = assets.car().mesh
    tex = to_bytes(rng.random((16, 16, 3))) / 255.0
    save_obj(tmp_path / "car.obj", mesh, tex)
    back, tex2 = load_obj(tmp_path / "car.obj")
    np.testing.assert_allclose(back.vertices, mesh.vertices, atol=1e-8)
    np.testing.assert_array_equal(back.faces, mesh.faces)
    np.testing.assert_allclose(back.uv, mesh.uv, atol=1e-8)
    np.testing.assert_array_equal(tex2, tex)


def test_obj_render_matches(tmp_path):
    mesh = assets.crate().mesh
    save_obj(tmp_path / "c.obj", mesh)
    back, tex = load_obj(tmp_path / "c.obj")
    assert tex is None
    colors = np.full((len(mesh.vertices), 3), 0.5)
    views = ([Camera(3.0, 30, 20)], [Light((0, 0, -1.0), 0.5, 0.5)])
    a = render_batch(Scene(mesh, colors, *views, (16, 16))).images
    b = render_batch(Scene(back, colors, *views, (16, 16))).images
    np.testing.assert_allclose(a, b, atol=1e-6)


def test_obj_polygon_fan_and_negative_indices(tmp_path):
    (tmp_path / "q.obj").write_text(
        "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\n"
        "vt 0 0\nvt 1 0\nvt 1 1\nvt 0 1\n"
        "f -4/-4 -3/-3 -2/-2 -1/-1  # quad\n")
    mesh, _ = load_obj(tmp_path / "q.obj")
    np.testing.assert_array_equal(mesh.faces, [[0, 1, 2], [0, 2, 3]])
    # v is flipped: OBJ vt (0, 0) is the bottom-left, row-down v = 1
    np.testing.assert_allclose(mesh.uv[0, 0], [0.0, 1.0])


@pytest.mark.parametrize("text,match", [
    ("v 0 0 0\nv 1 0 0\nf 1 2 3\n", "out of range"),
    ("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2\n", "fewer than 3"),
    ("v 0 0 x\n", "line 1"),
    ("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nvt 0 0\nf 1/1 2/1 3/1\nf 2 4 3\n", "mix"),
])
def test_obj_errors(tmp_path, text, match):
    (tmp_path / "bad.obj").write_text(text)
    with pytest.raises(MeshFormatError, match=match):
        load_obj(tmp_path / "bad.obj")


def test_ply_round_trip(tmp_path, rng):
    mesh = assets.crate().mesh
    colors = rng.random((len(mesh.vertices), 3))
    save_ply(tmp_path / "c.ply", mesh, colors)
    back, cols = load_ply(tmp_path / "c.ply")
    np.testing.assert_allclose(back.vertices, mesh.vertices, atol=1e-8)
    np.testing.assert_array_equal(back.faces, mesh.faces)
    np.testing.assert_array_equal(cols, to_bytes(colors[:, None]).reshape(-1, 3) / 255.0)


@pytest.mark.parametrize("text,match", [
    ("obj\n", "magic"),
    ("ply\nformat binary_little_endian 1.0\nend_header\n", "ASCII"),
    ("ply\nformat ascii 1.0\nelement vertex 3\n", "end_header"),
    ("ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nend_header\n0\n", "ends before"),
])
def test_ply_errors(tmp_path, text, match):
    (tmp_path / "bad.ply").write_text(text)
    with pytest.raises(MeshFormatError, match=match):
        load_ply(tmp_path / "bad.ply")

import math

import numpy as np
import pytest
from conftest import random_scene
from oracles import render_fd_check

from assistive import assets
from assistive.core import DimensionError, make_rng
from assistive.renderer import (
    Camera, GeometryError, Light, Mesh, Scene, SceneRanges, coverage_mask, render_batch, sample_bilinear,
    sample_scene_params, texture_gradient,
)

FIT_FOV = math.degrees(2 * math.atan(0.25))  # unit quad exactly fills the frame at distance 2


def quad_scene(texture, light=None, size=(8, 8)):
    light = light or Light((0.0, 0.0, -1.0), 1.0, 0.0)
    return Scene(assets.quad().mesh, texture, [Camera(2.0, 0, 0, FIT_FOV)], [light], size, (0.0, 0.0, 0.0))


class TestMesh:
    def test_degenerate_face(self):
        with pytest.raises(GeometryError, match="degenerate"):
            Mesh([[0, 0, 0], [1, 0, 0], [2, 0, 0]], [[0, 1, 2]])

    def test_index_out_of_range(self):
        with pytest.raises(GeometryError):
            Mesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 3]])

    def test_normals_unit_and_deterministic(self):
        m = assets.car().mesh
        np.testing.assert_allclose(np.linalg.norm(m.normals, axis=1), 1.0, atol=1e-12)
        again = Mesh(m.vertices, m.faces, m.uv)
        assert again.normals.tobytes() == m.normals.tobytes()

    def test_car_face_budget(self):
        assert len(assets.car().mesh.faces) <= 5000


class TestCamera:
    def test_frame_right_handed(self):
        for az, el in [(0, 0), (37, 20), (200, -30)]:
            r, u, f = Camera(3.0, az, el).frame()
            np.testing.assert_allclose(np.cross(r, u), -f, atol=1e-12)
            np.testing.assert_allclose(f, -Camera(3.0, az, el).eye / 3.0, atol=1e-12)

    @pytest.mark.parametrize("kw", [dict(distance=0), dict(distance=1, fov_y=180), dict(distance=1, elevation=90)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            Camera(**kw)

    def test_light_validation(self):
        with pytest.raises(ValueError):
            Light((1.0, 1.0, 0.0))
        with pytest.raises(ValueError):
            Light((0.0, 0.0, 1.0), 0.7, 0.7)


class TestRenderExamples:
    def test_ambient_uniform(self):
        tex = np.tile([0.2, 0.4, 0.8], (8, 8, 1))
        img = render_batch(quad_scene(tex)).images[0]
        np.testing.assert_allclose(img.reshape(-1, 3), np.tile([0.2, 0.4, 0.8], (64, 1)), atol=1e-12)

    def test_halving(self, rng):
        tex = rng.random((8, 8, 3))
        a = render_batch(quad_scene(tex)).images
        b = render_batch(quad_scene(0.5 * tex)).images
        np.testing.assert_allclose(b, 0.5 * a, atol=1e-15)

    def test_lambert_cosine(self):
        tex = np.tile([0.2, 0.4, 0.8], (8, 8, 1))
        s60 = math.radians(60)
        light = Light((math.sin(s60), 0.0, -math.cos(s60)), 0.0, 1.0)
        img = render_batch(quad_scene(tex, light)).images[0]
        np.testing.assert_allclose(img.reshape(-1, 3), np.tile([0.1, 0.2, 0.4], (64, 1)), atol=1e-12)

    def test_texel_center_gradient(self):
        scene = quad_scene(np.full((8, 8, 3), 0.5))
        batch = render_batch(scene)
        g = np.zeros_like(batch.images)
        g[0, 3, 5] = 1.0
        grad = texture_gradient(batch, g)
        assert grad[3, 5] == pytest.approx([1.0, 1.0, 1.0], abs=1e-9)
        rest = grad.copy()
        rest[3, 5] = 0
        assert np.abs(rest).max() <= 1e-9

    def test_pixels_map_to_texels(self, rng):
        tex = rng.random((8, 8, 3))
        np.testing.assert_allclose(render_batch(quad_scene(tex)).images[0], tex, atol=1e-9)

    def test_background(self):
        scene = quad_scene(np.ones((4, 4, 3)))
        scene.cameras = [Camera(6.0, 0, 0, FIT_FOV)]
        scene.background = (0.1, 0.2, 0.3)
        batch = render_batch(scene)
        cov = coverage_mask(batch)[0]
        assert 0 < cov.sum() < cov.size
        np.testing.assert_array_equal(batch.images[0][~cov], np.tile([0.1, 0.2, 0.3], ((~cov).sum(), 1)))

    def test_no_cameras(self):
        scene = quad_scene(np.ones((4, 4, 3)))
        scene.cameras, scene.lights = [], []
        with pytest.raises(ValueError, match="no cameras"):
            render_batch(scene)

    def test_bad_texture_shapes(self):
        with pytest.raises(DimensionError):
            render_batch(quad_scene(np.ones((6, 6, 3))))
        with pytest.raises(DimensionError):
            render_batch(quad_scene(np.ones((5, 3))))

    def test_occlusion_nearest_wins(self):
        # two parallel quads; the nearer one (red) hides the farther (green)
        v = np.array([[-1, 1, 0], [1, 1, 0], [-1, -1, 0], [1, -1, 0]], float)
        verts = np.vstack([v + [0, 0, 0.5], v])
        faces = np.array([[0, 2, 1], [1, 2, 3], [4, 6, 5], [5, 6, 7]])
        mesh = Mesh(verts, faces)
        tex = np.array([[1, 0, 0]] * 4 + [[0, 1, 0]] * 4, float)
        img = render_batch(Scene(mesh, tex, [Camera(3.0)], [Light((0, 0, -1.0), 1.0, 0.0)], (8, 8))).images[0]
        cov = img.sum(-1) > 0
        np.testing.assert_allclose(img[cov], np.tile([1.0, 0, 0], (cov.sum(), 1)), atol=1e-12)


class TestBilinear:
    def test_texel_center(self, rng):
        tex = rng.random((4, 4, 3))
        rgb, pairs = sample_bilinear(tex, (2 + 0.5) / 4, (1 + 0.5) / 4)
        assert pairs == [(1 * 4 + 2, 1.0)]
        np.testing.assert_array_equal(rgb, tex[1, 2])

    def test_horizontal_midpoint(self, rng):
        tex = rng.random((4, 4, 3))
        rgb, pairs = sample_bilinear(tex, 2 / 4, 0.5 / 4)
        assert pairs == [(1, 0.5), (2, 0.5)]
        np.testing.assert_allclose(rgb, (tex[0, 1] + tex[0, 2]) / 2)

    def test_uniform(self, rng):
        tex = np.full((8, 8, 3), 0.3)
        for u, v in rng.random((20, 2)):
            rgb, pairs = sample_bilinear(tex, u, v)
            np.testing.assert_allclose(rgb, 0.3)
            assert sum(w for _, w in pairs) == pytest.approx(1.0)

    def test_border_clamp(self, rng):
        tex = rng.random((4, 4, 3))
        rgb, pairs = sample_bilinear(tex, 0.0, 0.0)
        assert pairs == [(0, 1.0)]


class TestSceneParams:
    def test_degenerate_ranges(self):
        r = SceneRanges((30, 30), (10, 10), (2.5, 2.5), (0, 0), (0.4, 0.4), (0.5, 0.5))
        views = sample_scene_params(make_rng(0), r, 5)
        assert len(views) == 5 and all(v == views[0] for v in views)

    def test_determinism(self):
        a = sample_scene_params(make_rng(3), SceneRanges(), 10)
        b = sample_scene_params(make_rng(3), SceneRanges(), 10)
        assert a == b

    def test_azimuth_uniform(self):
        views = sample_scene_params(make_rng(1), SceneRanges(azimuth=(0, 360)), 10_000)
        assert abs(np.mean([c.azimuth for c, _ in views]) - 180) < 5

    def test_light_in_cone(self):
        for cam, light in sample_scene_params(make_rng(2), SceneRanges(light_cone=(0, 30)), 200):
            cos = np.dot(light.direction, cam.frame()[2])
            assert cos >= math.cos(math.radians(30)) - 1e-12
            assert light.ambient + light.diffuse <= 1 + 1e-12

    def test_empty_range(self):
        with pytest.raises(ValueError, match="azimuth"):
            SceneRanges(azimuth=(10, 0))
        with pytest.raises(ValueError):
            sample_scene_params(make_rng(0), SceneRanges(), 0)


class TestLinearAdjoint:
    @pytest.mark.parametrize("uv", [True, False])
    def test_linearity(self, uv):
        scene = random_scene(11, uv=uv)
        r = np.random.default_rng(0)
        t1, t2 = r.random(scene.texture.shape), r.random(scene.texture.shape)
        a, b = 0.3, 0.6
        bg = np.zeros(3)
        scene.background = tuple(bg)
        lhs = render_batch(scene.with_texture(a * t1 + b * t2)).images
        rhs = a * render_batch(scene.with_texture(t1)).images + b * render_batch(scene.with_texture(t2)).images
        np.testing.assert_allclose(lhs, rhs, atol=1e-6)

    def test_adjoint(self):
        for seed in range(4):
            scene = random_scene(seed, uv=seed % 2 == 0)
            batch = render_batch(scene)
            r = np.random.default_rng(seed)
            G = r.normal(size=batch.images.shape)
            D = r.normal(size=scene.texture.shape)
            JD = render_batch(scene.with_texture(D)).images
            cov = coverage_mask(batch)
            lhs = np.sum(G[cov] * JD[cov])
            rhs = np.sum(texture_gradient(batch, G) * D)
            assert abs(lhs - rhs) <= 1e-6 * max(abs(lhs), 1.0)

    def test_background_zero_gradient(self):
        scene = random_scene(3)
        batch = render_batch(scene)
        G = np.zeros_like(batch.images)
        G[~coverage_mask(batch)] = 1.0
        assert np.all(texture_gradient(batch, G) == 0)

    def test_zero_grads(self):
        batch = render_batch(random_scene(4))
        assert np.all(texture_gradient(batch, np.zeros_like(batch.images)) == 0)

    def test_shape_mismatch(self):
        batch = render_batch(random_scene(4))
        with pytest.raises(DimensionError):
            texture_gradient(batch, np.zeros((1, 3, 3, 3)))

    def test_weights_non_negative(self):
        for j in render_batch(random_scene(5)).jacobians:
            assert (j.weight >= 0).all()

    def test_bit_identical(self):
        scene = random_scene(6)
        a, b = render_batch(scene), render_batch(scene)
        assert a.images.tobytes() == b.images.tobytes()

    @pytest.mark.parametrize("uv", [True, False])
    def test_finite_differences(self, uv):
        scene = random_scene(8, uv=uv)
        errs, _ = render_fd_check(scene, np.random.default_rng(1), n_coords=100)
        assert errs.max() <= 1e-4

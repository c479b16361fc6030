import math

import numpy as np
import pytest

from anamorph.errors import FormatError, GeometryError
from anamorph.image import Image, constant_image
from anamorph.pyramid import build_gaussian, default_depth
from anamorph.uvmap import compute_lod, write_uvm
from anamorph.views import (
    ViewScene,
    load_scene,
    make_2d_map,
    parse_scene,
    reflect,
    refract,
    render_validation,
    trace_points,
    trace_view,
)
from anamorph.warp import forward_warp
from conftest import rand_image, smooth_image


def pixel_grid(n):
    centers = (np.arange(n) + 0.5) / n
    px = np.broadcast_to(centers[None, :], (n, n))
    py = np.broadcast_to(centers[:, None], (n, n))
    return px, py


class TestMake2dMap:
    def test_flip_twice_is_identity(self, rng):
        img = rand_image(rng, 32, 32)
        m = make_2d_map("flip", 0.0, 32)
        lod = compute_lod(m, 32)
        once = forward_warp(build_gaussian(img, 3), m, lod)
        twice = forward_warp(build_gaussian(once, 3), m, lod)
        assert np.array_equal(twice.data, img.data)

    def test_rotate_zero_is_identity(self):
        m = make_2d_map("rotate", 0.0, 64)
        px, py = pixel_grid(64)
        assert np.array_equal(m.u, px)
        assert np.array_equal(m.v, py)
        assert m.valid.all()

    def test_rotate_90_is_index_permutation(self, rng):
        img = rand_image(rng, 32, 32)
        m = make_2d_map("rotate", 90.0, 32)
        assert m.valid.all()
        out = forward_warp(build_gaussian(img, 3), m, compute_lod(m, 32))
        assert np.array_equal(out.data, np.rot90(img.data, 1, axes=(0, 1)))

    def test_rotate_135_restricted_to_disc(self):
        m = make_2d_map("rotate", 135.0, 64)
        px, py = pixel_grid(64)
        inside = (px - 0.5) ** 2 + (py - 0.5) ** 2 <= 0.25
        assert np.array_equal(m.valid, inside)

    def test_permutation_is_bijection(self):
        m = make_2d_map("permutation", 0.0, 16, seed=5)
        cols = np.floor(m.u * 16).astype(int)
        rows = np.floor(m.v * 16).astype(int)
        flat = rows * 16 + cols
        assert np.array_equal(np.sort(flat.ravel()), np.arange(256))

    def test_unknown_kind(self):
        with pytest.raises(FormatError):
            make_2d_map("swirl", 0.0, 16)


class TestRayPrimitives:
    def test_reflection_preserves_norm(self, rng):
        d = rng.standard_normal((200, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        n = rng.standard_normal((200, 3))
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        r = reflect(d, n)
        assert np.abs(np.linalg.norm(r, axis=1) - 1.0).max() <= 1e-9

    def test_refraction_satisfies_snell(self, rng):
        d = rng.standard_normal((500, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        n = rng.standard_normal((500, 3))
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        eta = 1.0 / 1.5
        t, tir = refract(d, n, eta)
        ok = ~tir
        assert ok.any()
        cos_i = np.abs((d * n).sum(axis=1))
        sin_i = np.sqrt(1 - cos_i**2)
        cos_t = np.abs((t * n).sum(axis=1))
        sin_t = np.sqrt(np.clip(1 - cos_t**2, 0, None))
        assert np.abs(np.linalg.norm(t[ok], axis=1) - 1.0).max() <= 1e-9
        assert np.abs(sin_t[ok] - eta * sin_i[ok]).max() <= 1e-9

    def test_total_internal_reflection_flagged(self):
        # grazing exit from dense glass
        d = np.array([[math.sin(math.radians(80)), 0.0, -math.cos(math.radians(80))]])
        n = np.array([[0.0, 0.0, 1.0]])
        _, tir = refract(d, n, 1.5)
        assert tir.all()


class TestConeScene:
    scene = ViewScene(kind="cone")

    def test_exterior_is_identity(self):
        m, _ = trace_view(self.scene, 96)
        px, py = pixel_grid(96)
        outside = np.hypot(px - 0.5, py - 0.5) >= self.scene.base_radius
        assert m.valid[outside].all()
        assert np.abs(m.u[outside] - px[outside]).max() <= 1e-6
        assert np.abs(m.v[outside] - py[outside]).max() <= 1e-6

    def test_rotational_commutation(self, rng):
        pts = rng.uniform(0.1, 0.9, (400, 2))
        for phi_deg in (25.0, 90.0, 161.0):
            phi = math.radians(phi_deg)
            rot_mat = np.array(
                [[math.cos(phi), -math.sin(phi)], [math.sin(phi), math.cos(phi)]]
            )
            rotated = (pts - 0.5) @ rot_mat.T + 0.5
            in_square = (rotated.min(axis=1) >= 0.0) & (rotated.max(axis=1) <= 1.0)
            u1, v1, ok1 = trace_points(self.scene, pts[:, 0], pts[:, 1])
            u2, v2, ok2 = trace_points(self.scene, rotated[:, 0], rotated[:, 1])
            both = ok1 & ok2 & in_square
            assert both.sum() > 100
            uv_rot = (np.stack([u1, v1], axis=-1) - 0.5) @ rot_mat.T + 0.5
            err = np.abs(uv_rot[both] - np.stack([u2, v2], axis=-1)[both]).max()
            assert err <= 1e-3

    def test_degenerate_45_degrees_errors(self):
        with pytest.raises(GeometryError):
            trace_view(ViewScene(kind="cone", apex_half_angle=45.0), 64)

    def test_bad_parameters(self):
        with pytest.raises(GeometryError):
            trace_view(ViewScene(kind="cone", base_radius=0.0), 16)


class TestCylinderScene:
    scene = ViewScene(kind="cylinder")

    def test_bilateral_symmetry(self):
        m, _ = trace_view(self.scene, 96)
        mirrored_u = m.u[:, ::-1]
        mirrored_v = m.v[:, ::-1]
        both = m.valid & m.valid[:, ::-1]
        assert both.any()
        assert np.abs((1.0 - mirrored_u[both]) - m.u[both]).max() <= 1e-3
        assert np.abs(mirrored_v[both] - m.v[both]).max() <= 1e-3

    def test_mirror_region_lands_in_square(self):
        m, _ = trace_view(self.scene, 96)
        assert m.valid.any()
        assert (m.u[m.valid] >= 0).all() and (m.u[m.valid] <= 1).all()

    def test_camera_inside_mirror_rejected(self):
        with pytest.raises(GeometryError):
            trace_view(ViewScene(kind="cylinder", camera_distance=0.1), 16)


class TestLensScene:
    scene = ViewScene(kind="lens")

    def test_some_refracted_coverage(self):
        m, _ = trace_view(self.scene, 96)
        px, py = pixel_grid(96)
        assert m.valid.mean() > 0.2
        # lens pixels land away from the identity mapping
        near_axis = np.hypot(px - 0.5, py - 0.5) < 0.03
        lens_valid = m.valid & near_axis
        assert lens_valid.any()
        shift = np.hypot(m.u - px, m.v - py)[lens_valid]
        assert shift.min() > 0.01

    def test_rotation_changes_map(self):
        a, _ = trace_view(self.scene, 48)
        b, _ = trace_view(ViewScene(kind="lens", rotation=25.0), 48)
        assert not np.array_equal(a.u, b.u)

    def test_steep_facets_rejected(self):
        with pytest.raises(GeometryError):
            trace_view(ViewScene(kind="lens", facet_angle=80.0), 16)

    def test_facet_tir_invalidates_not_errors(self):
        # heavy tilt plus dense glass produces some totally reflected exits
        scene = ViewScene(kind="lens", facet_angle=17.0, refractive_index=2.4, thickness=0.06)
        m, _ = trace_view(scene, 64)
        assert not m.valid.all()


class TestDeterminism:
    def test_bytes_stable_across_runs_and_threads(self, tmp_path):
        scene = ViewScene(kind="cylinder")
        blobs = []
        for threads in (1, 1, 8):
            m, _ = trace_view(scene, 64, threads=threads)
            path = tmp_path / f"t{threads}_{len(blobs)}.uvm"
            write_uvm(m, str(path))
            blobs.append(path.read_bytes())
        assert blobs[0] == blobs[1] == blobs[2]


class TestRenderValidation:
    def test_constant_image_renders_constant(self):
        out = render_validation(ViewScene(kind="cone"), constant_image(64, 64, 1, 0.25), 64)
        defined = ~out.missing_mask()
        assert np.abs(out.data[defined] - 0.25).max() <= 1e-9

    def test_matches_forward_warp_composition(self):
        canonical = smooth_image(64)
        scene = ViewScene(kind="cone")
        got = render_validation(scene, canonical, 64)
        m, _ = trace_view(scene, 64)
        want = forward_warp(
            build_gaussian(canonical, default_depth(64, 64)), m, compute_lod(m, 64)
        )
        assert np.array_equal(np.nan_to_num(got.data), np.nan_to_num(want.data))

    def test_identity_region_reproduces_canonical(self):
        canonical = smooth_image(64)
        out = render_validation(ViewScene(kind="cone"), canonical, 64)
        px, py = pixel_grid(64)
        outside = np.hypot(px - 0.5, py - 0.5) >= 0.3 + 2.0 / 64
        assert np.abs(out.data[outside] - canonical.data[outside]).max() <= 1e-9


class TestSceneFiles:
    def test_parse_and_defaults(self):
        scene = parse_scene("kind = cone\napex_half_angle = 25 # degrees\n")
        assert scene.kind == "cone"
        assert scene.apex_half_angle == 25.0
        assert scene.base_radius == 0.3

    def test_unknown_key(self):
        with pytest.raises(FormatError):
            parse_scene("kind = cone\nwobble = 3\n")

    def test_bad_line(self):
        with pytest.raises(FormatError):
            parse_scene("kind cone\n")

    def test_bad_value(self):
        with pytest.raises(FormatError):
            parse_scene("kind = cone\nbase_radius = big\n")

    def test_missing_kind(self):
        with pytest.raises(FormatError):
            parse_scene("base_radius = 0.2\n")

    def test_load_from_file(self, tmp_path):
        path = tmp_path / "s.scene"
        path.write_text("kind = lens\nrotation = 12.5\n")
        scene = load_scene(str(path))
        assert scene.kind == "lens" and scene.rotation == 12.5

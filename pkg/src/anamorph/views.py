"""View generation: closed-form 2D maps and raytraced catadioptric scenes.

The canonical image is the unit square [0,1]^2 lying in the z = 0 plane
(x to the right, y increasing downward to match image rows, z up). A view
is traced by sending one ray through each target pixel center, bouncing
it off the scene's mirror or through its lens, and recording where it
lands on the canonical plane. Rays that never reach the unit square give
invalid map pixels.

Scenes:
  cone      orthographic top-down camera over a mirrored cone standing at
            the plane center; rays outside the silhouette hit the plane
            directly, so that region is exactly the identity map.
  cylinder  perspective camera at an elevation angle looking at a mirrored
            cylinder standing on the upper half of the plane.
  lens      perspective camera looking straight down through a faceted
            glass disc suspended above the plane; each facet refracts its
            sector toward a different part of the canonical image.

All tracing is analytic (quadrics and planes), single ray per pixel, and
bit-deterministic regardless of the worker thread count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, GeometryError, SizeError
from .image import Image
from .pyramid import build_gaussian, default_depth
from .uvmap import UvMap, compute_lod
from .warp import forward_warp

_EPS = 1e-12


@dataclass(frozen=True)
class ViewScene:
    """Geometric description from which a UvMap is traced."""

    kind: str
    angle: float = 0.0                 # rotate: rotation in degrees
    seed: int = 0                      # permutation: shuffle seed
    base_radius: float = 0.3           # cone
    apex_half_angle: float = 30.0      # cone, degrees from the axis
    radius: float = 0.15               # cylinder / lens
    height: float = 0.6                # cylinder
    camera_elevation: float = 30.0     # cylinder, degrees above the plane
    camera_distance: float = 2.0       # cylinder / lens, canonical units
    camera_fov: float = 45.0           # perspective cameras, degrees
    facet_count: int = 7               # lens
    refractive_index: float = 1.5      # lens
    thickness: float = 0.05            # lens
    distance_to_plane: float = 1.0     # lens
    rotation: float = 0.0              # lens, facet wheel rotation in degrees
    facet_angle: float = 10.0          # lens, facet tilt in degrees
    output_resolution: int = 512

    def validate(self) -> None:
        k = self.kind
        if k in ("flip", "rotate", "permutation"):
            return
        if k == "cone":
            if not 0.0 < self.base_radius <= 0.5:
                raise GeometryError("cone base_radius must be in (0, 0.5]")
            if not 0.0 < self.apex_half_angle < 90.0:
                raise GeometryError("apex_half_angle must be in (0, 90) degrees")
        elif k == "cylinder":
            if self.radius <= 0 or self.height <= 0:
                raise GeometryError("cylinder radius and height must be positive")
            if not 0.0 < self.camera_elevation <= 90.0:
                raise GeometryError("camera_elevation must be in (0, 90] degrees")
            if self.camera_distance <= self.radius:
                raise GeometryError("camera_distance places the camera inside the mirror")
        elif k == "lens":
            if self.refractive_index <= 1.0:
                raise GeometryError("refractive_index must exceed 1")
            if self.thickness <= 0 or self.radius <= 0 or self.distance_to_plane <= 0:
                raise GeometryError("lens dimensions must be positive")
            if self.facet_count < 3:
                raise GeometryError("a faceted lens needs at least 3 facets")
            rim_rise = math.tan(math.radians(self.facet_angle)) * self.radius
            if rim_rise >= self.thickness:
                raise GeometryError("facet tilt cuts through the front face")
            if self.camera_distance <= self.distance_to_plane + self.thickness:
                raise GeometryError("camera must sit above the lens")
        else:
            raise FormatError(f"unknown scene kind {k!r}")


# --------------------------------------------------------------------------
# Closed-form 2D maps
# --------------------------------------------------------------------------


def make_2d_map(kind: str, angle: float = 0.0, resolution: int = 512, seed: int = 0) -> UvMap:
    """flip, rotate(angle degrees), or a seeded pixel permutation."""
    if resolution < 2:
        raise SizeError("resolution must be at least 2")
    n = resolution
    centers = (np.arange(n) + 0.5) / n
    px = np.broadcast_to(centers[None, :], (n, n))
    py = np.broadcast_to(centers[:, None], (n, n))

    if kind == "flip":
        return UvMap(px.copy(), 1.0 - py, np.ones((n, n), dtype=bool))
    if kind == "rotate":
        theta = math.radians(angle)
        cx = px - 0.5
        cy = py - 0.5
        qx = 0.5 + math.cos(theta) * cx - math.sin(theta) * cy
        qy = 0.5 + math.sin(theta) * cx + math.cos(theta) * cy
        inside = (qx >= 0.0) & (qx <= 1.0) & (qy >= 0.0) & (qy <= 1.0)
        if not math.isclose(angle % 90.0, 0.0, abs_tol=1e-12) and not math.isclose(
            angle % 90.0, 90.0, abs_tol=1e-12
        ):
            # off-axis rotations keep only the inscribed disc, where the
            # rotated square always covers the map
            inside &= cx * cx + cy * cy <= 0.25
        qx = np.clip(qx, 0.0, 1.0)
        qy = np.clip(qy, 0.0, 1.0)
        return UvMap(qx, qy, inside)
    if kind == "permutation":
        rng = np.random.default_rng(seed)
        perm = rng.permutation(n * n)
        u = centers[perm % n].reshape(n, n)
        v = centers[perm // n].reshape(n, n)
        return UvMap(u, v, np.ones((n, n), dtype=bool))
    raise FormatError(f"unknown 2D map kind {kind!r}")


# --------------------------------------------------------------------------
# Ray primitives
# --------------------------------------------------------------------------


def reflect(d: np.ndarray, n: np.ndarray) -> np.ndarray:
    """Mirror directions d about unit normals n; both (..., 3)."""
    return d - 2.0 * (d * n).sum(axis=-1, keepdims=True) * n


def refract(d: np.ndarray, n: np.ndarray, eta: float) -> tuple[np.ndarray, np.ndarray]:
    """Snell refraction of unit directions through unit normals.

    ``eta`` is n_incident / n_transmitted. Normals may face either way;
    they are flipped to oppose the incident ray. Returns (directions,
    total_internal_reflection mask); TIR rows hold unspecified directions.
    """
    cos_i = -(d * n).sum(axis=-1, keepdims=True)
    n_oriented = np.where(cos_i < 0.0, -n, n)
    cos_i = np.abs(cos_i)
    sin2_t = eta * eta * (1.0 - cos_i * cos_i)
    tir = sin2_t[..., 0] > 1.0
    cos_t = np.sqrt(np.clip(1.0 - sin2_t, 0.0, None))
    out = eta * d + (eta * cos_i - cos_t) * n_oriented
    return out, tir


def _plane_uv(origin: np.ndarray, direction: np.ndarray, valid: np.ndarray):
    """Intersect rays with z = 0 and keep hits inside the unit square."""
    dz = direction[:, 2]
    going_down = valid & (dz < -_EPS)
    t = np.zeros(len(origin))
    t[going_down] = -origin[going_down, 2] / dz[going_down]
    hit = origin + t[:, None] * direction
    u = hit[:, 0]
    v = hit[:, 1]
    ok = going_down & (t > _EPS) & (u >= 0.0) & (u <= 1.0) & (v >= 0.0) & (v <= 1.0)
    return u, v, ok


# --------------------------------------------------------------------------
# Scene tracing
# --------------------------------------------------------------------------


def _trace_cone(scene: ViewScene, px: np.ndarray, py: np.ndarray):
    """Orthographic top-down rays over a mirrored cone at the plane center."""
    alpha = math.radians(scene.apex_half_angle)
    r_base = scene.base_radius
    apex_h = r_base / math.tan(alpha)

    dx = px - 0.5
    dy = py - 0.5
    rho = np.hypot(dx, dy)
    on_mirror = rho < r_base

    u = px.copy()
    v = py.copy()
    valid = np.ones(px.shape, dtype=bool)

    m = on_mirror & (rho > _EPS)
    if m.any():
        z_hit = apex_h * (1.0 - rho[m] / r_base)
        radial = np.stack([dx[m] / rho[m], dy[m] / rho[m]], axis=-1)
        normal = np.concatenate(
            [math.cos(alpha) * radial, np.full((int(m.sum()), 1), math.sin(alpha))],
            axis=-1,
        )
        d = np.zeros((int(m.sum()), 3))
        d[:, 2] = -1.0
        r_dir = reflect(d, normal)
        origin = np.concatenate(
            [px[m][:, None], py[m][:, None], z_hit[:, None]], axis=-1
        )
        uu, vv, ok = _plane_uv(origin, r_dir, np.ones(int(m.sum()), dtype=bool))
        u[m] = np.where(ok, uu, 0.0)
        v[m] = np.where(ok, vv, 0.0)
        valid[m] = ok
    # the apex itself has no defined normal
    valid[on_mirror & (rho <= _EPS)] = False
    u[~valid] = 0.0
    v[~valid] = 0.0
    return u, v, valid


def _camera_basis(eye: np.ndarray, target: np.ndarray):
    forward = target - eye
    forward = forward / np.linalg.norm(forward)
    up = np.array([0.0, 0.0, 1.0])
    side = np.cross(up, forward)
    if np.linalg.norm(side) < 1e-9:
        side = np.array([1.0, 0.0, 0.0])
    side = side / np.linalg.norm(side)
    down = np.cross(side, forward)
    down = down / np.linalg.norm(down)
    return forward, side, down


def _perspective_rays(eye, forward, side, down, fov_deg, px, py):
    tan_half = math.tan(math.radians(fov_deg) / 2.0)
    d = (
        forward[None, :]
        + (2.0 * px[:, None] - 1.0) * tan_half * side[None, :]
        + (2.0 * py[:, None] - 1.0) * tan_half * down[None, :]
    )
    d = d / np.linalg.norm(d, axis=-1, keepdims=True)
    o = np.broadcast_to(eye, d.shape).copy()
    return o, d


def _trace_cylinder(scene: ViewScene, px: np.ndarray, py: np.ndarray):
    phi = math.radians(scene.camera_elevation)
    base = np.array([0.5, 0.25, 0.0])
    eye = np.array(
        [0.5, 0.5 + scene.camera_distance * math.cos(phi), scene.camera_distance * math.sin(phi)]
    )
    if np.hypot(eye[0] - base[0], eye[1] - base[1]) <= scene.radius:
        raise GeometryError("camera is inside the cylinder")
    forward, side, down = _camera_basis(eye, np.array([0.5, 0.5, 0.0]))
    flat_p = px.ravel()
    flat_q = py.ravel()
    o, d = _perspective_rays(eye, forward, side, down, scene.camera_fov, flat_p, flat_q)
    npix = len(flat_p)

    # lateral-surface intersection of the infinite cylinder
    ox = o[:, 0] - base[0]
    oy = o[:, 1] - base[1]
    a = d[:, 0] ** 2 + d[:, 1] ** 2
    b = 2.0 * (ox * d[:, 0] + oy * d[:, 1])
    c = ox * ox + oy * oy - scene.radius ** 2
    disc = b * b - 4.0 * a * c
    has = (disc > 0.0) & (a > _EPS)
    sq = np.sqrt(np.where(has, disc, 0.0))
    t1 = np.where(has, (-b - sq) / (2.0 * a), np.inf)
    z1 = o[:, 2] + t1 * d[:, 2]
    lateral = has & (t1 > _EPS) & (z1 >= 0.0) & (z1 <= scene.height)

    # rays that meet the top cap before anything else see the cap, not a mirror
    dz = d[:, 2]
    t_top = np.where(np.abs(dz) > _EPS, (scene.height - o[:, 2]) / dz, np.inf)
    top_hit = np.isfinite(t_top) & (t_top > _EPS)
    tx = o[:, 0] + t_top * d[:, 0] - base[0]
    ty = o[:, 1] + t_top * d[:, 1] - base[1]
    top_hit &= tx * tx + ty * ty <= scene.radius ** 2
    capped = top_hit & ~lateral

    u = np.zeros(npix)
    v = np.zeros(npix)
    valid = np.zeros(npix, dtype=bool)

    if lateral.any():
        t_m = t1[lateral]
        p = o[lateral] + t_m[:, None] * d[lateral]
        normal = np.concatenate(
            [
                (p[:, 0:1] - base[0]) / scene.radius,
                (p[:, 1:2] - base[1]) / scene.radius,
                np.zeros((int(lateral.sum()), 1)),
            ],
            axis=-1,
        )
        r_dir = reflect(d[lateral], normal)
        uu, vv, ok = _plane_uv(p, r_dir, np.ones(int(lateral.sum()), dtype=bool))
        u[lateral] = np.where(ok, uu, 0.0)
        v[lateral] = np.where(ok, vv, 0.0)
        valid[lateral] = ok

    direct = ~lateral & ~capped
    if direct.any():
        uu, vv, ok = _plane_uv(o[direct], d[direct], np.ones(int(direct.sum()), dtype=bool))
        u[direct] = np.where(ok, uu, 0.0)
        v[direct] = np.where(ok, vv, 0.0)
        valid[direct] = ok

    shape = px.shape
    return u.reshape(shape), v.reshape(shape), valid.reshape(shape)


def _trace_lens(scene: ViewScene, px: np.ndarray, py: np.ndarray):
    n_glass = scene.refractive_index
    delta = math.radians(scene.facet_angle)
    rot = math.radians(scene.rotation)
    k_count = scene.facet_count
    z_back = scene.distance_to_plane
    z_front = z_back + scene.thickness
    r_lens = scene.radius
    center = np.array([0.5, 0.5])
    apex = np.array([0.5, 0.5, z_back])

    eye = np.array([0.5, 0.5, scene.camera_distance])
    forward = np.array([0.0, 0.0, -1.0])
    side = np.array([1.0, 0.0, 0.0])
    down = np.array([0.0, 1.0, 0.0])
    flat_p = px.ravel()
    flat_q = py.ravel()
    o, d = _perspective_rays(eye, forward, side, down, scene.camera_fov, flat_p, flat_q)
    npix = len(flat_p)

    u = np.zeros(npix)
    v = np.zeros(npix)
    valid = np.zeros(npix, dtype=bool)

    dz = d[:, 2]
    going_down = dz < -_EPS
    t_front = np.where(going_down, (z_front - o[:, 2]) / dz, np.inf)
    p1 = o + t_front[:, None] * d
    rho1 = np.hypot(p1[:, 0] - center[0], p1[:, 1] - center[1])
    through = going_down & (rho1 <= r_lens)

    # ---- refracted path through the glass
    if through.any():
        d_in = d[through]
        p_in = p1[through]
        front_normal = np.broadcast_to(np.array([0.0, 0.0, 1.0]), d_in.shape)
        g, tir_in = refract(d_in, front_normal, 1.0 / n_glass)
        alive = ~tir_in  # entering denser glass never reflects totally

        sector_width = 2.0 * math.pi / k_count
        best_t = np.full(len(d_in), np.inf)
        best_k = np.full(len(d_in), -1, dtype=np.int64)
        for k in range(k_count):
            phi_k = rot + (k + 0.5) * sector_width
            m_k = np.array(
                [
                    math.sin(delta) * math.cos(phi_k),
                    math.sin(delta) * math.sin(phi_k),
                    -math.cos(delta),
                ]
            )
            denom = g @ m_k
            t_k = np.where(np.abs(denom) > _EPS, ((apex - p_in) @ m_k) / denom, np.inf)
            q = p_in + t_k[:, None] * g
            az = np.arctan2(q[:, 1] - center[1], q[:, 0] - center[0])
            sector = np.floor(((az - rot) % (2.0 * math.pi)) / sector_width).astype(int)
            rho_q = np.hypot(q[:, 0] - center[0], q[:, 1] - center[1])
            ok = alive & (t_k > _EPS) & (sector == k) & (rho_q <= r_lens) & (t_k < best_t)
            best_t[ok] = t_k[ok]
            best_k[ok] = k
        exited = alive & (best_k >= 0)

        if exited.any():
            te = best_t[exited]
            qe = p_in[exited] + te[:, None] * g[exited]
            phis = rot + (best_k[exited] + 0.5) * sector_width
            m_e = np.stack(
                [
                    math.sin(delta) * np.cos(phis),
                    math.sin(delta) * np.sin(phis),
                    -math.cos(delta) * np.ones(len(phis)),
                ],
                axis=-1,
            )
            w_dir, tir_out = refract(g[exited], m_e, n_glass)
            uu, vv, ok = _plane_uv(qe, w_dir, ~tir_out)
            idx = np.flatnonzero(through)[exited]
            u[idx] = np.where(ok, uu, 0.0)
            v[idx] = np.where(ok, vv, 0.0)
            valid[idx] = ok

    # ---- rays beside the lens: blocked by its rim band, else direct
    outside = ~through
    if outside.any():
        o_out = o[outside]
        d_out = d[outside]
        ox = o_out[:, 0] - center[0]
        oy = o_out[:, 1] - center[1]
        a = d_out[:, 0] ** 2 + d_out[:, 1] ** 2
        b = 2.0 * (ox * d_out[:, 0] + oy * d_out[:, 1])
        c = ox * ox + oy * oy - r_lens ** 2
        disc = b * b - 4.0 * a * c
        has = (disc > 0.0) & (a > _EPS)
        sq = np.sqrt(np.where(has, disc, 0.0))
        blocked = np.zeros(len(d_out), dtype=bool)
        for t_side in ((-b - sq) / (2.0 * np.where(a > _EPS, a, 1.0)),
                       (-b + sq) / (2.0 * np.where(a > _EPS, a, 1.0))):
            z_side = o_out[:, 2] + t_side * d_out[:, 2]
            blocked |= has & (t_side > _EPS) & (z_side > z_back) & (z_side < z_front)
        uu, vv, ok = _plane_uv(o_out, d_out, ~blocked)
        idx = np.flatnonzero(outside)
        u[idx] = np.where(ok, uu, 0.0)
        v[idx] = np.where(ok, vv, 0.0)
        valid[idx] = ok

    shape = px.shape
    return u.reshape(shape), v.reshape(shape), valid.reshape(shape)


_TRACERS = {"cone": _trace_cone, "cylinder": _trace_cylinder, "lens": _trace_lens}


def trace_points(scene: ViewScene, px: np.ndarray, py: np.ndarray):
    """Trace arbitrary normalized target coordinates; returns (u, v, valid)."""
    scene.validate()
    if scene.kind in ("flip", "rotate", "permutation"):
        raise GeometryError("2D transforms are analytic; use make_2d_map")
    return _TRACERS[scene.kind](scene, np.asarray(px, float), np.asarray(py, float))


def trace_view(scene: ViewScene, resolution: int | None = None, threads: int = 1):
    """Trace the full pixel grid. Returns (UvMap, render hook).

    The hook renders any canonical image through this view with the LOD
    pyramid machinery; it backs :func:`render_validation`.
    """
    scene.validate()
    n = resolution or scene.output_resolution
    if n < 2:
        raise SizeError("resolution must be at least 2")
    if scene.kind in ("flip", "rotate", "permutation"):
        m = make_2d_map(scene.kind, scene.angle, n, scene.seed)
        return m, _make_render_hook(m)

    centers = (np.arange(n) + 0.5) / n
    px = np.broadcast_to(centers[None, :], (n, n))
    py = np.broadcast_to(centers[:, None], (n, n))

    u = np.empty((n, n))
    v = np.empty((n, n))
    valid = np.empty((n, n), dtype=bool)

    def run_rows(lo: int, hi: int) -> None:
        uu, vv, ok = _TRACERS[scene.kind](scene, px[lo:hi], py[lo:hi])
        u[lo:hi] = uu
        v[lo:hi] = vv
        valid[lo:hi] = ok

    if threads <= 1:
        run_rows(0, n)
    else:
        block = max(1, -(-n // threads))
        spans = [(i, min(i + block, n)) for i in range(0, n, block)]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(lambda s: run_rows(*s), spans))

    if scene.kind == "cone":
        rho = np.hypot(px - 0.5, py - 0.5)
        mirror_pixels = rho < scene.base_radius
        if mirror_pixels.any() and not valid[mirror_pixels].any():
            raise GeometryError(
                "mirror reflects nothing onto the canonical plane; "
                "check apex_half_angle against the top-down camera"
            )

    m = UvMap(u, v, valid)
    return m, _make_render_hook(m)


def _make_render_hook(m: UvMap):
    def render(canonical: Image, depth: int | None = None, mode: str = "nearest") -> Image:
        if canonical.height != canonical.width:
            raise SizeError("canonical images are square")
        d = depth or default_depth(canonical.height, canonical.width)
        lod = compute_lod(m, canonical.width)
        return forward_warp(build_gaussian(canonical, d), m, lod, mode)

    return render


def render_validation(
    scene: ViewScene,
    canonical: Image,
    resolution: int | None = None,
    depth: int | None = None,
    mode: str = "nearest",
) -> Image:
    """Physically-set-up preview: trace the scene and warp the canonical image."""
    _, hook = trace_view(scene, resolution)
    return hook(canonical, depth, mode)


# --------------------------------------------------------------------------
# Flat key = value scene files
# --------------------------------------------------------------------------

_FIELD_TYPES = {
    "kind": str,
    "angle": float,
    "seed": int,
    "base_radius": float,
    "apex_half_angle": float,
    "radius": float,
    "height": float,
    "camera_elevation": float,
    "camera_distance": float,
    "camera_fov": float,
    "facet_count": int,
    "refractive_index": float,
    "thickness": float,
    "distance_to_plane": float,
    "rotation": float,
    "facet_angle": float,
    "output_resolution": int,
}


def parse_key_values(text: str) -> dict[str, str]:
    """Parse 'key = value' lines; '#' starts a comment."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def parse_scene(text: str) -> ViewScene:
    pairs = parse_key_values(text)
    if "kind" not in pairs:
        raise FormatError("scene file must set 'kind'")
    kwargs = {}
    for key, value in pairs.items():
        if key not in _FIELD_TYPES:
            raise FormatError(f"unknown scene key {key!r}")
        caster = _FIELD_TYPES[key]
        try:
            kwargs[key] = caster(value)
        except ValueError as exc:
            raise FormatError(f"bad value for {key!r}: {value!r}") from exc
    scene = ViewScene(**kwargs)
    scene.validate()
    return scene


def load_scene(path: str) -> ViewScene:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_scene(fh.read())

"""Deterministic synthetic rendering of the tracker camera's view.

Draws what the camera mounted on the heliostat sees: sky gradient, sun
disk with mild glare, the white aiming target on the tower, neighbor
heliostat facets, and drifting semi-transparent clouds. Every frame
comes with an exact GroundTruth answer key so detector and controller
behavior can be scored against sub-pixel truth.

Rasterization rule: a pixel is inside an object iff the backprojected
direction of its center passes the object's 3D test. Identical
(scene, axis, time, seed) inputs produce bit-identical images.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ephemeris import GeoTime, SunPosition, sun_direction
from .geometry import (
    CameraModel,
    bisector,
    camera_basis,
    normalize,
    project_direction,
    world_to_camera,
)

SUN_ANGULAR_RADIUS_MRAD = 4.65  # solar half-angle, fixed physical constant

SKY_TOP = np.array([70, 130, 220], dtype=np.float64)
SKY_BOTTOM = np.array([140, 180, 235], dtype=np.float64)
SUN_COLOR = np.array([255, 252, 245], dtype=np.float64)
TARGET_COLOR = np.array([234, 234, 234], dtype=np.float64)
HELIOSTAT_COLOR = np.array([118, 122, 126], dtype=np.float64)
CLOUD_COLOR = np.array([215, 218, 223], dtype=np.float64)

_OCCLUSION_SAMPLES = 512


@dataclass(frozen=True)
class CloudSpec:
    """A drifting cloud as an angular ellipse on the sky."""

    azimuth_deg: float
    elevation_deg: float
    az_rate_deg_s: float = 0.0
    el_rate_deg_s: float = 0.0
    radius_mrad: float = 25.0
    aspect: float = 0.6  # minor/major axis ratio
    alpha: float = 0.85

    def direction_at(self, t_s: float) -> np.ndarray:
        from .geometry import azel_to_direction

        return azel_to_direction(
            self.azimuth_deg + self.az_rate_deg_s * t_s,
            self.elevation_deg + self.el_rate_deg_s * t_s,
        )


@dataclass(frozen=True)
class NeighborSpec:
    """A nearby heliostat drawn as a grey facet quad."""

    position: tuple[float, float, float]  # m, ENU relative to field origin
    width_m: float = 10.0
    height_m: float = 10.0


@dataclass(frozen=True)
class Scene:
    """World-frame description of everything the camera can see."""

    site: GeoTime  # lat/lon plus the run's t=0 instant
    tracker_position: tuple[float, float, float]  # camera location, m
    target_position: tuple[float, float, float]  # target center, m
    target_width_m: float = 8.0
    target_height_m: float = 6.0
    neighbors: tuple[NeighborSpec, ...] = ()
    clouds: tuple[CloudSpec, ...] = ()
    seed: int = 0
    noise_dn: int = 0  # per-channel uniform grain amplitude, digital numbers

    def __post_init__(self):
        if self.target_width_m <= 0 or self.target_height_m <= 0:
            raise ValueError("target size must be positive")
        for c in self.clouds:
            if c.radius_mrad <= 0:
                raise ValueError("cloud angular size must be positive")

    def at(self, t_s: float) -> GeoTime:
        return self.site.shifted(t_s)

    def target_direction(self) -> np.ndarray:
        return normalize(
            np.asarray(self.target_position) - np.asarray(self.tracker_position)
        )


@dataclass(frozen=True)
class TruthCloud:
    cloud_id: int
    center_px: tuple[float, float]
    visible: bool


@dataclass(frozen=True)
class GroundTruth:
    """Exact per-frame answers for scoring the vision pipeline."""

    sun_center_px: tuple[float, float] | None
    target_center_px: tuple[float, float] | None
    sun_occluded_fraction: float
    shadow: bool
    blocked: bool
    clouds: tuple[TruthCloud, ...]
    sun_position: SunPosition


def _angular_offsets(center_dir: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Angles (rad) of unit direction rows around center_dir, resolved on
    the local (horizontal-right, down) axes used for drawing."""
    x, y, z = camera_basis(center_dir)
    a = np.arctan2(dirs @ x, dirs @ z)
    b = np.arctan2(dirs @ y, dirs @ z)
    return np.stack([a, b], axis=-1)


def _inside_ellipse(center_dir, dirs, major_rad, minor_rad) -> np.ndarray:
    front = dirs @ center_dir > 0.0
    ab = _angular_offsets(center_dir, dirs)
    val = (ab[..., 0] / major_rad) ** 2 + (ab[..., 1] / minor_rad) ** 2
    return front & (val <= 1.0)


def _sun_disk_sample_dirs(sun_dir: np.ndarray) -> np.ndarray:
    """Fixed low-discrepancy sample of directions across the sun disk."""
    x, y, _ = camera_basis(sun_dir)
    k = np.arange(_OCCLUSION_SAMPLES)
    r = np.sqrt((k + 0.5) / _OCCLUSION_SAMPLES) * SUN_ANGULAR_RADIUS_MRAD * 1e-3
    theta = k * (math.pi * (3.0 - math.sqrt(5.0)))
    offsets = (
        np.outer(r * np.cos(theta), x) + np.outer(r * np.sin(theta), y)
    )
    dirs = sun_dir[None, :] + offsets  # small angles: tangent-plane offset
    return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


def _quad_corners(center, normal, width_m, height_m) -> np.ndarray:
    """Corners of a rectangle in the plane of `normal`, world frame."""
    n = normalize(normal)
    right = np.cross(n, np.array([0.0, 0.0, 1.0]))
    nr = np.linalg.norm(right)
    right = np.array([1.0, 0.0, 0.0]) if nr < 1e-9 else right / nr
    up = np.cross(right, n)
    c = np.asarray(center, dtype=np.float64)
    hw, hh = width_m / 2.0, height_m / 2.0
    return np.array(
        [c - hw * right - hh * up, c + hw * right - hh * up,
         c + hw * right + hh * up, c - hw * right + hh * up]
    )


def _ray_hits_quad(origin, direction, corners) -> bool:
    """Ray-rectangle intersection used for the 3D shadow/block truth."""
    p0, p1, _, p3 = corners[0], corners[1], corners[2], corners[3]
    e_u = p1 - p0
    e_v = p3 - p0
    n = np.cross(e_u, e_v)
    denom = n @ direction
    if abs(denom) < 1e-12:
        return False
    t = (n @ (p0 - origin)) / denom
    if t <= 1e-9:
        return False
    hit = origin + t * np.asarray(direction)
    rel = hit - p0
    a = rel @ e_u / (e_u @ e_u)
    b = rel @ e_v / (e_v @ e_v)
    return 0.0 <= a <= 1.0 and 0.0 <= b <= 1.0


class _Raster:
    """Lazy pixel-center direction evaluation for one camera pose."""

    def __init__(self, cam: CameraModel, axis_world):
        self.cam = cam
        self.x_c, self.y_c, self.z_c = camera_basis(axis_world)
        pu, pv = cam.pixel_pitch_mm
        cu, cv = cam.principal_point
        self._tan_u = (np.arange(cam.width_px) + 0.5 - cu) * pu / cam.focal_mm
        self._tan_v = (np.arange(cam.height_px) + 0.5 - cv) * pv / cam.focal_mm

    def project(self, world_dir) -> np.ndarray | None:
        d_cam = world_to_camera(self.z_c, world_dir)
        if d_cam[2] <= 0.0:
            return None
        return project_direction(self.cam, d_cam)

    def dirs(self, span) -> np.ndarray:
        """Unit world directions of the pixel centers in a patch."""
        tan_u, tan_v = np.meshgrid(self._tan_u[span[1]], self._tan_v[span[0]])
        d = (
            tan_u[..., None] * self.x_c
            + tan_v[..., None] * self.y_c
            + np.ones_like(tan_u)[..., None] * self.z_c
        )
        return d / np.linalg.norm(d, axis=2, keepdims=True)

    def patch(self, center_px, radius_px):
        """Row/col slices of a square patch around a projected point."""
        h, w = self.cam.height_px, self.cam.width_px
        r0 = max(0, int(math.floor(center_px[1] - radius_px)))
        r1 = min(h, int(math.ceil(center_px[1] + radius_px)) + 1)
        c0 = max(0, int(math.floor(center_px[0] - radius_px)))
        c1 = min(w, int(math.ceil(center_px[0] + radius_px)) + 1)
        if r0 >= r1 or c0 >= c1:
            return None
        return slice(r0, r1), slice(c0, c1)


def render(
    scene: Scene,
    cam: CameraModel,
    axis_world,
    t_s: float,
) -> tuple[np.ndarray, GroundTruth]:
    """Render the camera view along `axis_world` at scene time t_s.

    Returns the RGB uint8 image and the exact GroundTruth for the frame.
    Off-frame or behind-camera objects are simply absent.
    """
    axis_world = normalize(axis_world)
    raster = _Raster(cam, axis_world)
    h, w = cam.height_px, cam.width_px

    # sky: vertical gradient, quantized once per row
    rows = np.linspace(0.0, 1.0, h)[:, None]
    row_colors = np.rint(SKY_TOP * (1.0 - rows) + SKY_BOTTOM * rows)
    canvas = np.repeat(
        row_colors.astype(np.uint8)[:, None, :], w, axis=1
    )

    sun = sun_direction(scene.at(t_s))
    sun_dir = sun.direction
    sun_px = raster.project(sun_dir) if sun.above_horizon else None
    origin = np.asarray(scene.tracker_position, dtype=np.float64)

    cloud_dirs = [c.direction_at(t_s) for c in scene.clouds]
    target_dir = scene.target_direction()
    target_px = raster.project(target_dir)

    # sun disk + glare (before clouds and solids, which can cover it)
    if sun_px is not None:
        sun_r_rad = SUN_ANGULAR_RADIUS_MRAD * 1e-3
        r_px = math.tan(sun_r_rad) * cam.focal_mm / min(cam.pixel_pitch_mm)
        glare_sigma = 2.0
        span = raster.patch(sun_px, r_px + 5.0 * glare_sigma + 2.0)
        if span is not None:
            inside = _inside_ellipse(sun_dir, raster.dirs(span), sun_r_rad, sun_r_rad)
            patch = canvas[span].astype(np.float64)
            # glare: blend toward sun color, decaying with pixel distance
            # from the disk rim, never crossing the sun lightness band
            jj, ii = np.meshgrid(
                np.arange(span[1].start, span[1].stop),
                np.arange(span[0].start, span[0].stop),
            )
            dist = np.hypot(jj + 0.5 - sun_px[0], ii + 0.5 - sun_px[1])
            rim = np.maximum(dist - r_px, 0.0)
            weight = 0.8 * np.exp(-(rim**2) / (2.0 * glare_sigma**2))
            patch += weight[..., None] * (SUN_COLOR - patch)
            patch[inside] = SUN_COLOR
            canvas[span] = np.clip(np.rint(patch), 0, 255).astype(np.uint8)

    # clouds: alpha blend over sky/sun
    cloud_truths: list[TruthCloud] = []
    for idx, (spec, cdir) in enumerate(zip(scene.clouds, cloud_dirs)):
        c_px = raster.project(cdir)
        if c_px is None:
            cloud_truths.append(TruthCloud(idx, (math.nan, math.nan), False))
            continue
        major = spec.radius_mrad * 1e-3
        minor = major * spec.aspect
        r_px = math.tan(major) * cam.focal_mm / min(cam.pixel_pitch_mm)
        span = raster.patch(c_px, r_px + 2.0)
        visible = span is not None
        if visible:
            inside = _inside_ellipse(cdir, raster.dirs(span), major, minor)
            visible = bool(inside.any())
            if visible:
                patch = canvas[span].astype(np.float64)
                patch[inside] = (
                    spec.alpha * CLOUD_COLOR + (1.0 - spec.alpha) * patch[inside]
                )
                canvas[span] = np.clip(np.rint(patch), 0, 255).astype(np.uint8)
        cloud_truths.append(TruthCloud(idx, tuple(c_px), visible))

    # solid surfaces, far to near, over everything
    target_corners = _quad_corners(
        scene.target_position, -target_dir, scene.target_width_m,
        scene.target_height_m,
    )
    solids = [("target", target_corners, TARGET_COLOR,
               float(np.linalg.norm(np.asarray(scene.target_position) - origin)))]
    for n in scene.neighbors:
        npos = np.asarray(n.position, dtype=np.float64)
        if sun.above_horizon:
            n_normal = bisector(
                sun_dir, normalize(np.asarray(scene.target_position) - npos)
            )
        else:
            n_normal = np.array([0.0, 0.0, 1.0])
        solids.append(
            ("heliostat", _quad_corners(npos, n_normal, n.width_m, n.height_m),
             HELIOSTAT_COLOR, float(np.linalg.norm(npos - origin)))
        )
    solids.sort(key=lambda s: -s[3])

    for kind, corners, color, _dist in solids:
        rel = corners - origin
        cams = np.array([world_to_camera(axis_world, r) for r in rel])
        if (cams[:, 2] <= 1e-6).any():
            continue
        pts = np.array([project_direction(cam, c) for c in cams])
        lo = pts.min(axis=0)
        hi = pts.max(axis=0)
        span = raster.patch((lo + hi) / 2.0, float((hi - lo).max() / 2.0) + 2.0)
        if span is None:
            continue
        jj, ii = np.meshgrid(
            np.arange(span[1].start, span[1].stop, dtype=np.float64),
            np.arange(span[0].start, span[0].stop, dtype=np.float64),
        )
        px = np.stack([jj + 0.5, ii + 0.5], axis=-1)
        inside = np.ones(px.shape[:2], dtype=bool)
        sign = 1.0 if _winding(pts) > 0 else -1.0
        for k in range(4):
            a = pts[k]
            b = pts[(k + 1) % 4]
            edge = (b[0] - a[0]) * (px[..., 1] - a[1]) - (b[1] - a[1]) * (
                px[..., 0] - a[0]
            )
            inside &= sign * edge >= 0.0
        canvas[span][inside] = color.astype(np.uint8)

    if scene.noise_dn > 0:
        rng = np.random.default_rng((scene.seed, int(round(t_s * 1000.0)) & 0xFFFFFFFF))
        noisy = canvas.astype(np.int16) + rng.integers(
            -scene.noise_dn, scene.noise_dn + 1, size=canvas.shape, dtype=np.int16
        )
        canvas = np.clip(noisy, 0, 255).astype(np.uint8)

    img = canvas

    # ground truth: incoming light is interrupted (shadow) when any ray
    # across the sun disk is covered; the reflected beam is interrupted
    # (blocked) when any ray toward the target face hits a neighbor.
    neighbor_quads = []
    for n in scene.neighbors:
        npos = np.asarray(n.position, dtype=np.float64)
        if sun.above_horizon:
            n_normal = bisector(
                sun_dir, normalize(np.asarray(scene.target_position) - npos)
            )
        else:
            n_normal = np.array([0.0, 0.0, 1.0])
        neighbor_quads.append(_quad_corners(npos, n_normal, n.width_m, n.height_m))

    occluded = 0.0
    shadow = False
    if sun.above_horizon:
        samples = _sun_disk_sample_dirs(sun_dir)
        covered = np.zeros(len(samples), dtype=bool)
        for spec, cdir in zip(scene.clouds, cloud_dirs):
            covered |= _inside_ellipse(
                cdir, samples, spec.radius_mrad * 1e-3,
                spec.radius_mrad * 1e-3 * spec.aspect,
            )
        for corners in neighbor_quads:
            covered |= np.array(
                [_ray_hits_quad(origin, d, corners) for d in samples]
            )
        occluded = float(covered.mean())
        shadow = bool(covered.any())

    blocked = False
    if neighbor_quads:
        for point in _target_face_samples(scene):
            ray = normalize(point - origin)
            if any(_ray_hits_quad(origin, ray, q) for q in neighbor_quads):
                blocked = True
                break

    truth = GroundTruth(
        sun_center_px=tuple(sun_px) if sun_px is not None else None,
        target_center_px=tuple(target_px) if target_px is not None else None,
        sun_occluded_fraction=occluded,
        shadow=shadow,
        blocked=blocked,
        clouds=tuple(cloud_truths),
        sun_position=sun,
    )
    return img, truth


def _target_face_samples(scene: Scene, nu: int = 7, nv: int = 5) -> np.ndarray:
    """Grid of world points across the target rectangle."""
    corners = _quad_corners(
        scene.target_position, -scene.target_direction(),
        scene.target_width_m, scene.target_height_m,
    )
    p0, p1, p3 = corners[0], corners[1], corners[3]
    pts = []
    for a in np.linspace(0.05, 0.95, nu):
        for b in np.linspace(0.05, 0.95, nv):
            pts.append(p0 + a * (p1 - p0) + b * (p3 - p0))
    return np.array(pts)


def _winding(pts: np.ndarray) -> float:
    """Signed area of the projected quad (sign gives vertex order)."""
    s = 0.0
    for k in range(len(pts)):
        a, b = pts[k], pts[(k + 1) % len(pts)]
        s += a[0] * b[1] - b[0] * a[1]
    return s

"""Frame analysis for camera-plane tracking.

Images are numpy uint8 arrays of shape (height, width, 3), RGB,
row-major. Pixel (row i, col j) has its center at image coordinates
(j+0.5, i+0.5); all centroids and derived points are sub-pixel floats.

The analysis chain per frame: detect() classifies regions of interest
(sun, cloud, heliostat, target), analyze_frame() derives the sun and
target image points, their midpoint (the correct aim point), and the
tracking error relative to the calibrated image center, plus shadow and
block flags; track_clouds() maintains cloud trajectories and predicts
time to sun occlusion.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .geometry import CameraModel, pixel_error_to_mrad

DETECTION_CLASSES = ("sun", "cloud", "heliostat", "target")

# 8-connectivity for component labelling
_CONNECTIVITY = np.ones((3, 3), dtype=int)


class NoSunDetected(ValueError):
    """No bright component of sufficient area in the frame."""


@dataclass(frozen=True)
class HslPixel:
    hue_deg: float  # [0, 360)
    saturation: float  # [0, 1]
    lightness: float  # [0, 1]


def rgb_to_hsl(r: int, g: int, b: int) -> HslPixel:
    """Standard RGB -> HSL conversion for 8-bit channels.

    Lightness is (max+min)/510, separating brightness from chroma so
    thresholds are insensitive to color cast.
    """
    mx = max(r, g, b)
    mn = min(r, g, b)
    light = (mx + mn) / 510.0
    if mx == mn:
        return HslPixel(0.0, 0.0, light)
    c = (mx - mn) / 255.0
    if light <= 0.5:
        sat = c / ((mx + mn) / 255.0)
    else:
        sat = c / (2.0 - (mx + mn) / 255.0)
    rf, gf, bf = r / 255.0, g / 255.0, b / 255.0
    mxf = mx / 255.0
    if mx == r:
        hue = ((gf - bf) / c) % 6.0
    elif mx == g:
        hue = (bf - rf) / c + 2.0
    else:
        hue = (rf - gf) / c + 4.0
    return HslPixel(hue * 60.0, sat, light)


def _channel_stats(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(max+min, max-min) per pixel as int32, the basis of L and S."""
    mx = img.max(axis=2).astype(np.int32)
    mn = img.min(axis=2).astype(np.int32)
    return mx + mn, mx - mn


def lightness_map(img: np.ndarray) -> np.ndarray:
    """Per-pixel HSL lightness in [0, 1] for an RGB uint8 image."""
    s, _ = _channel_stats(img)
    return s / 510.0


def saturation_map(img: np.ndarray) -> np.ndarray:
    """Per-pixel HSL saturation in [0, 1] for an RGB uint8 image."""
    s, c = _channel_stats(img)
    denom = np.minimum(s, 510 - s).astype(np.float64)
    return np.divide(
        c.astype(np.float64), denom, out=np.zeros(s.shape), where=denom > 0
    )


@dataclass(frozen=True)
class Detection:
    """A classified region of interest."""

    label: str  # one of DETECTION_CLASSES
    bbox: tuple[int, int, int, int]  # x, y, w, h in pixels
    score: float  # [0, 1]
    centroid: tuple[float, float] | None = None  # sub-pixel, when known

    def __post_init__(self):
        if self.label not in DETECTION_CLASSES:
            raise ValueError(f"unknown detection class {self.label!r}")
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score {self.score} outside [0, 1]")

    @property
    def bbox_center(self) -> np.ndarray:
        x, y, w, h = self.bbox
        return np.array([x + w / 2.0, y + h / 2.0])

    @property
    def area(self) -> int:
        return self.bbox[2] * self.bbox[3]


def bbox_intersection_area(a, b) -> int:
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    w = min(ax + aw, bx + bw) - max(ax, bx)
    h = min(ay + ah, by + bh) - max(ay, by)
    return max(0, w) * max(0, h)


def bbox_iou(a, b) -> float:
    inter = bbox_intersection_area(a, b)
    union = a[2] * a[3] + b[2] * b[3] - inter
    return inter / union if union else 0.0


@dataclass(frozen=True)
class SunSegment:
    centroid: np.ndarray  # sub-pixel (u, v)
    bbox: tuple[int, int, int, int]
    score: float  # component area / bbox area
    area_px: int


def segment_sun(
    img: np.ndarray,
    lightness_threshold: float = 0.95,
    min_area_px: int = 8,
) -> SunSegment:
    """Locate the sun as the largest connected near-saturated component.

    The centroid is the unweighted mean of the centers of pixels with
    lightness >= threshold inside that component.

    Raises:
        NoSunDetected: when no component reaches min_area_px.
    """
    if not (0.0 < lightness_threshold <= 1.0):
        raise ValueError("lightness_threshold must be in (0, 1]")
    if min_area_px < 1:
        raise ValueError("min_area_px must be >= 1")
    s, _ = _channel_stats(img)
    return _segment_brightest(s, lightness_threshold, min_area_px)


def _segment_brightest(
    lightness_sum: np.ndarray, threshold: float, min_area_px: int
) -> SunSegment:
    # lightness >= t  <=>  (max+min) >= 510 t, kept in integers
    mask = lightness_sum >= 510.0 * threshold
    labels, count = ndimage.label(mask, structure=_CONNECTIVITY)
    if count == 0:
        raise NoSunDetected("no pixels above the lightness threshold")
    slices = ndimage.find_objects(labels)
    best_area = 0
    best = None
    for idx, span in enumerate(slices, start=1):
        local = labels[span] == idx
        area = int(local.sum())
        if area > best_area:
            best_area = area
            best = (span, local)
    if best_area < min_area_px:
        raise NoSunDetected(
            f"largest bright component has {best_area} px, need {min_area_px}"
        )
    span, local = best
    rows, cols = np.nonzero(local)
    centroid = np.array(
        [cols.mean() + span[1].start + 0.5, rows.mean() + span[0].start + 0.5]
    )
    x, y = span[1].start, span[0].start
    w = span[1].stop - x
    h = span[0].stop - y
    return SunSegment(centroid, (x, y, w, h), best_area / (w * h), best_area)


@dataclass(frozen=True)
class BandSpec:
    """Lightness/saturation window for one classical detector class."""

    lightness: tuple[float, float]
    saturation: tuple[float, float]
    min_area_px: int


@dataclass(frozen=True)
class ClassicalDetector:
    """Color-band detector tuned to the synthetic renderer's palette.

    Satisfies the detector contract: detect(image) -> list[Detection].
    Any model with the same signature (e.g. a wrapped neural detector)
    can replace it; see CallableDetector.
    """

    sun_lightness: float = 0.95
    sun_min_area_px: int = 8
    target_band: BandSpec = BandSpec((0.87, 0.95), (0.0, 0.05), 60)
    heliostat_band: BandSpec = BandSpec((0.35, 0.62), (0.0, 0.12), 40)
    cloud_band: BandSpec = BandSpec((0.62, 0.93), (0.06, 0.45), 80)

    def detect(self, img: np.ndarray) -> list[Detection]:
        lsum, chroma = _channel_stats(img)
        sat_denom = np.minimum(lsum, 510 - lsum)
        out: list[Detection] = []
        try:
            seg = _segment_brightest(lsum, self.sun_lightness, self.sun_min_area_px)
            out.append(
                Detection("sun", seg.bbox, seg.score, tuple(seg.centroid))
            )
        except NoSunDetected:
            pass
        for label, band in (
            ("target", self.target_band),
            ("heliostat", self.heliostat_band),
            ("cloud", self.cloud_band),
        ):
            lo_l, hi_l = band.lightness
            lo_s, hi_s = band.saturation
            mask = (lsum >= 510.0 * lo_l) & (lsum < 510.0 * hi_l)
            mask &= chroma >= lo_s * sat_denom
            mask &= chroma < hi_s * sat_denom
            out.extend(self._components(mask, label, band.min_area_px))
        return out

    @staticmethod
    def _components(mask: np.ndarray, label: str, min_area: int) -> list[Detection]:
        labels, count = ndimage.label(mask, structure=_CONNECTIVITY)
        dets = []
        for idx, span in enumerate(ndimage.find_objects(labels), start=1):
            local = labels[span] == idx
            area = int(local.sum())
            if area < min_area:
                continue
            rows, cols = np.nonzero(local)
            x, y = span[1].start, span[0].start
            w = span[1].stop - x
            h = span[0].stop - y
            dets.append(
                Detection(
                    label,
                    (x, y, w, h),
                    area / (w * h),
                    (float(cols.mean() + x + 0.5), float(rows.mean() + y + 0.5)),
                )
            )
        return dets


@dataclass(frozen=True)
class CallableDetector:
    """Adapter giving an external model the detector contract.

    The wrapped callable receives the image and returns an iterable of
    (label, bbox, score) or (label, bbox, score, centroid) tuples.
    """

    model: object

    def detect(self, img: np.ndarray) -> list[Detection]:
        out = []
        for item in self.model(img):
            label, bbox, score = item[0], tuple(item[1]), float(item[2])
            centroid = tuple(item[3]) if len(item) > 3 and item[3] is not None else None
            out.append(Detection(label, bbox, score, centroid))
        return out


def detect(img: np.ndarray) -> list[Detection]:
    """Classify regions of interest with the default classical detector."""
    return ClassicalDetector().detect(img)


def detections_to_jsonl(dets: list[Detection]) -> str:
    """One JSON object per line: {class, bbox:[x,y,w,h], score}."""
    return "\n".join(
        json.dumps(
            {"class": d.label, "bbox": list(d.bbox), "score": round(d.score, 6)}
        )
        for d in dets
    )


def detections_from_jsonl(text: str) -> list[Detection]:
    out = []
    for line in text.splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        out.append(Detection(obj["class"], tuple(obj["bbox"]), obj["score"]))
    return out


@dataclass(frozen=True)
class CloudTrack:
    """One tracked cloud: centroid history and occlusion forecast."""

    track_id: int
    history: tuple[tuple[float, tuple[float, float]], ...]  # (t_s, centroid)
    bbox: tuple[int, int, int, int]
    velocity_px_s: tuple[float, float] | None = None
    time_to_occlusion: float | None = None

    @property
    def centroid(self) -> np.ndarray:
        return np.array(self.history[-1][1])


def detect_shadow_block(dets: list[Detection]) -> tuple[bool, bool]:
    """Image-space shading/blocking flags from bbox overlaps.

    Shadow: a heliostat or cloud box overlaps the sun box (incoming
    light interrupted). Block: a heliostat box overlaps the target box
    (reflected beam interrupted).
    """
    suns = [d for d in dets if d.label == "sun"]
    targets = [d for d in dets if d.label == "target"]
    shadow = False
    block = False
    if suns:
        sun_bbox = max(suns, key=lambda d: (d.score, d.area)).bbox
        shadow = any(
            bbox_intersection_area(d.bbox, sun_bbox) > 0
            for d in dets
            if d.label in ("heliostat", "cloud")
        )
    if targets:
        target_bbox = max(targets, key=lambda d: (d.score, d.area)).bbox
        block = any(
            bbox_intersection_area(d.bbox, target_bbox) > 0
            for d in dets
            if d.label == "heliostat"
        )
    return shadow, block


def _axis_overlap_window(pos: float, size: float, vel: float,
                         lo: float, hi: float) -> tuple[float, float] | None:
    """Time window during which [pos+v*t, pos+size+v*t] overlaps [lo, hi]."""
    if vel == 0.0:
        return (0.0, math.inf) if pos < hi and pos + size > lo else None
    t0 = (lo - pos - size) / vel
    t1 = (hi - pos) / vel
    return (min(t0, t1), max(t0, t1))


def time_to_occlusion(
    bbox, velocity_px_s, sun_bbox
) -> float | None:
    """Earliest t >= 0 at which the extrapolated box reaches the sun box."""
    x, y, w, h = bbox
    sx, sy, sw, sh = sun_bbox
    vx, vy = velocity_px_s
    wx = _axis_overlap_window(x, w, vx, sx, sx + sw)
    wy = _axis_overlap_window(y, h, vy, sy, sy + sh)
    if wx is None or wy is None:
        return None
    t_enter = max(wx[0], wy[0], 0.0)
    t_exit = min(wx[1], wy[1])
    return t_enter if t_enter <= t_exit else None


def track_clouds(
    prev: list[CloudTrack],
    dets: list[Detection],
    dt: float,
    sun_bbox: tuple[int, int, int, int] | None,
    gate_px: float = 50.0,
) -> list[CloudTrack]:
    """Associate cloud detections to existing tracks (nearest neighbor,
    gated), update constant-velocity estimates, and forecast occlusion.

    Unmatched previous tracks are dropped; unmatched detections start
    new tracks. Velocity needs two observations.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    clouds = [d for d in dets if d.label == "cloud"]
    if not clouds:
        return []
    now = prev[0].history[-1][0] + dt if prev else 0.0

    pairs = []
    for ti, tr in enumerate(prev):
        for di, det in enumerate(clouds):
            dist = float(np.linalg.norm(tr.centroid - _det_point(det)))
            if dist <= gate_px:
                pairs.append((dist, ti, di))
    pairs.sort()
    matched_t: set[int] = set()
    matched_d: set[int] = set()
    out: list[CloudTrack] = []
    for dist, ti, di in pairs:
        if ti in matched_t or di in matched_d:
            continue
        matched_t.add(ti)
        matched_d.add(di)
        tr = prev[ti]
        point = tuple(_det_point(clouds[di]))
        t_prev, c_prev = tr.history[-1]
        vel = ((point[0] - c_prev[0]) / dt, (point[1] - c_prev[1]) / dt)
        out.append(
            CloudTrack(
                tr.track_id,
                tr.history + ((now, point),),
                clouds[di].bbox,
                vel,
                _tto(clouds[di].bbox, vel, sun_bbox),
            )
        )
    next_id = max((tr.track_id for tr in prev), default=-1) + 1
    for di, det in enumerate(clouds):
        if di in matched_d:
            continue
        out.append(
            CloudTrack(next_id, ((now, tuple(_det_point(det))),), det.bbox)
        )
        next_id += 1
    out.sort(key=lambda tr: tr.track_id)
    return out


def _det_point(det: Detection) -> np.ndarray:
    return np.array(det.centroid) if det.centroid is not None else det.bbox_center


def _tto(bbox, velocity, sun_bbox) -> float | None:
    if velocity is None or sun_bbox is None:
        return None
    return time_to_occlusion(bbox, velocity, sun_bbox)


@dataclass(frozen=True)
class FrameAnalysis:
    """Everything the tracker derives from one frame.

    aim_point is exactly the midpoint of sun_center and target_center and
    present only when both are. boresight is the principal point shifted
    by the calibrated aiming offset; tracking_error_px = aim_point -
    boresight.
    """

    boresight: tuple[float, float]
    sun_center: tuple[float, float] | None = None
    target_center: tuple[float, float] | None = None
    aim_point: tuple[float, float] | None = None
    tracking_error_px: tuple[float, float] | None = None
    tracking_error_mrad: tuple[float, float] | None = None
    shadow: bool = False
    blocked: bool = False
    cloud_tracks: tuple[CloudTrack, ...] = ()
    detections: tuple[Detection, ...] = ()


def best_detection(dets: list[Detection], label: str) -> Detection | None:
    """Highest score wins; ties broken by larger box area."""
    candidates = [d for d in dets if d.label == label]
    if not candidates:
        return None
    return max(candidates, key=lambda d: (d.score, d.area))


def analyze_frame(
    dets: list[Detection],
    cam: CameraModel,
    calib_offset_px: tuple[float, float] = (0.0, 0.0),
    cloud_tracks: tuple[CloudTrack, ...] = (),
) -> FrameAnalysis:
    """Derive aim point and tracking error from classified detections."""
    boresight = (
        cam.principal_point[0] + calib_offset_px[0],
        cam.principal_point[1] + calib_offset_px[1],
    )
    sun = best_detection(dets, "sun")
    target = best_detection(dets, "target")
    sun_center = None
    if sun is not None:
        sun_center = (
            tuple(sun.centroid) if sun.centroid is not None else tuple(sun.bbox_center)
        )
    target_center = tuple(target.bbox_center) if target is not None else None

    aim_point = None
    err_px = None
    err_mrad = None
    if sun_center is not None and target_center is not None:
        aim_point = (
            (sun_center[0] + target_center[0]) / 2.0,
            (sun_center[1] + target_center[1]) / 2.0,
        )
        err_px = (aim_point[0] - boresight[0], aim_point[1] - boresight[1])
        err_mrad = tuple(pixel_error_to_mrad(cam, err_px))
    shadow, blocked = detect_shadow_block(dets)
    return FrameAnalysis(
        boresight=boresight,
        sun_center=sun_center,
        target_center=target_center,
        aim_point=aim_point,
        tracking_error_px=err_px,
        tracking_error_mrad=err_mrad,
        shadow=shadow,
        blocked=blocked,
        cloud_tracks=tuple(cloud_tracks),
        detections=tuple(dets),
    )


def read_ppm(path) -> np.ndarray:
    """Read a binary (P6, maxval 255) PPM image."""
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P6"):
        raise ValueError(f"{path}: not a binary PPM (P6) file")
    fields: list[int] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    pixels = np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=pos)
    return pixels.reshape(h, w, 3).copy()


def write_ppm(path, img: np.ndarray) -> None:
    """Write an RGB uint8 array as binary PPM (P6)."""
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise ValueError("image must be an (h, w, 3) uint8 array")
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def ppm_bytes(img: np.ndarray) -> bytes:
    h, w = img.shape[:2]
    return f"P6\n{w} {h}\n255\n".encode("ascii") + img.tobytes()

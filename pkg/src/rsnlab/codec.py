"""Keypoint <-> heatmap codec: Gaussian targets and test-time decoding.

Encoding places an integer-centered, unnormalized Gaussian (peak cell exactly
1.0) on each visible joint's heatmap.  Decoding follows the test-time recipe:
flip averaging with left/right channel swaps, a small Gaussian post-filter,
argmax plus a quarter-pixel offset toward the second-highest response, and a
pose score of mean joint score times box score.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from importlib import resources

import numpy as np
from scipy.ndimage import convolve

from .errors import DataError

HEATMAP_MAGIC = b"HMP1"
OFFSET_MODES = ("unit", "vector")


# -- affine maps (2x3 row-major, acting on (x, y) points) ---------------------


def apply_affine(m: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Apply a 2x3 affine to an (N, 2) array of (x, y) points."""
    pts = np.asarray(points, dtype=np.float64)
    return pts @ m[:, :2].T + m[:, 2]


def invert_affine(m: np.ndarray) -> np.ndarray:
    a = np.asarray(m, dtype=np.float64)
    det = a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
    if abs(det) < 1e-12:
        raise DataError("affine transform is singular")
    inv = np.empty((2, 3))
    inv[:, :2] = np.array([[a[1, 1], -a[0, 1]], [-a[1, 0], a[0, 0]]]) / det
    inv[:, 2] = -inv[:, :2] @ a[:, 2]
    return inv


def compose_affine(outer: np.ndarray, inner: np.ndarray) -> np.ndarray:
    """The affine applying inner first, then outer."""
    m = np.empty((2, 3))
    m[:, :2] = outer[:, :2] @ inner[:, :2]
    m[:, 2] = outer[:, :2] @ inner[:, 2] + outer[:, 2]
    return m


# -- domain types --------------------------------------------------------------


@dataclass(frozen=True)
class KeypointSet:
    """One person's joints: rows of (x, y, score, visibility).

    Visibility follows the annotation convention: 0 unlabeled, 1 occluded,
    2 visible.  Scores live in [0, 1].
    """

    joints: np.ndarray
    bbox: tuple[float, float, float, float]
    bbox_score: float = 1.0

    def __post_init__(self):
        j = np.asarray(self.joints, dtype=np.float64)
        if j.ndim != 2 or j.shape[1] != 4:
            raise DataError(f"joints must be (K, 4), got {j.shape}")
        if not np.isfinite(j[:, :2]).all():
            raise DataError("joint coordinates must be finite")
        if not np.isin(j[:, 3], (0.0, 1.0, 2.0)).all():
            raise DataError("visibility flags must be 0, 1, or 2")
        if ((j[:, 2] < 0) | (j[:, 2] > 1)).any():
            raise DataError("joint scores must lie in [0, 1]")
        if not 0.0 <= self.bbox_score <= 1.0:
            raise DataError(f"bbox_score must lie in [0, 1], got {self.bbox_score}")
        object.__setattr__(self, "joints", j)
        object.__setattr__(self, "bbox", tuple(float(v) for v in self.bbox))

    @property
    def xy(self) -> np.ndarray:
        return self.joints[:, :2]

    @property
    def scores(self) -> np.ndarray:
        return self.joints[:, 2]

    @property
    def visibility(self) -> np.ndarray:
        return self.joints[:, 3]

    @property
    def K(self) -> int:
        return self.joints.shape[0]


@dataclass(frozen=True)
class HeatmapStack:
    """(K, h, w) response maps plus the affine taking heatmap (x, y) to image."""

    values: np.ndarray
    to_image: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 3:
            raise DataError(f"heatmaps must be (K, h, w), got shape {v.shape}")
        m = np.asarray(self.to_image, dtype=np.float64)
        if m.shape != (2, 3):
            raise DataError(f"transform must be 2x3, got {m.shape}")
        invert_affine(m)  # must be invertible
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "to_image", m)


@dataclass(frozen=True)
class Skeleton:
    """Joint naming, left/right pairing, and per-joint similarity constants."""

    name: str
    joint_names: tuple[str, ...]
    flip_pairs: tuple[tuple[int, int], ...]
    bones: tuple[tuple[int, int], ...]
    oks_k: tuple[float, ...] | None

    @property
    def K(self) -> int:
        return len(self.joint_names)


def load_skeleton(name: str) -> Skeleton:
    """Load a shipped skeleton definition ("coco" or "mpii")."""
    try:
        text = resources.files("rsnlab.resources").joinpath(f"skeleton_{name}.json").read_text("utf-8")
    except FileNotFoundError:
        raise DataError(f"no such skeleton {name!r} (expected coco or mpii)") from None
    raw = json.loads(text)
    return Skeleton(
        name=raw["name"],
        joint_names=tuple(raw["joint_names"]),
        flip_pairs=tuple((int(a), int(b)) for a, b in raw["flip_pairs"]),
        bones=tuple((int(a), int(b)) for a, b in raw["bones"]),
        oks_k=None if raw["oks_k"] is None else tuple(float(v) for v in raw["oks_k"]),
    )


# -- crop geometry --------------------------------------------------------------


def crop_transform(bbox: tuple[float, float, float, float],
                   input_size: tuple[int, int],
                   rotation: float = 0.0,
                   scale: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Affine from image to crop coordinates, and its inverse.

    The box is grown along its shorter side until it matches the input aspect
    ratio, then scaled (scale > 1 zooms out), rotated about its center, and
    mapped onto the input rectangle.  Returns (image_to_crop, crop_to_image).
    """
    x, y, w, h = (float(v) for v in bbox)
    if w <= 0 or h <= 0:
        raise DataError(f"degenerate bbox {bbox}")
    ih, iw = input_size
    cx, cy = x + 0.5 * w, y + 0.5 * h
    aspect = iw / ih
    if w / h > aspect:
        h = w / aspect
    else:
        w = h * aspect
    k = iw / (w * scale)
    t = np.deg2rad(rotation)
    rot = np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])
    m = np.empty((2, 3))
    m[:, :2] = k * rot
    m[:, 2] = np.array([0.5 * iw, 0.5 * ih]) - m[:, :2] @ np.array([cx, cy])
    return m, invert_affine(m)


# -- encoding -------------------------------------------------------------------


def heatmap_to_crop(heatmap_size: tuple[int, int], input_size: tuple[int, int]) -> np.ndarray:
    """Affine taking heatmap (x, y) back to crop pixels (a pure scale)."""
    hh, hw = heatmap_size
    ih, iw = input_size
    return np.array([[iw / hw, 0.0, 0.0], [0.0, ih / hh, 0.0]])


def encode_targets(kps: KeypointSet, cfg, sigma: float = 2.0,
                   crop_to_image: np.ndarray | None = None) -> tuple[HeatmapStack, np.ndarray]:
    """Gaussian target heatmaps for joints given in crop coordinates.

    Each visible, on-map joint yields an unnormalized Gaussian with peak value
    exactly 1.0 at the rounded heatmap cell; its mask entry is 1.  Unlabeled
    or off-map joints yield a zero map and mask 0.  The returned stack maps
    heatmap coordinates back to the crop (or the image, when crop_to_image is
    given).
    """
    hh, hw = cfg.heatmap_size()
    stride_x = cfg.input_w / hw
    stride_y = cfg.input_h / hh
    maps = np.zeros((kps.K, hh, hw), dtype=np.float32)
    mask = np.zeros(kps.K, dtype=np.float64)
    ys, xs = np.mgrid[0:hh, 0:hw]
    for k in range(kps.K):
        if kps.visibility[k] <= 0:
            continue
        cx = int(round(kps.xy[k, 0] / stride_x))
        cy = int(round(kps.xy[k, 1] / stride_y))
        if not (0 <= cx < hw and 0 <= cy < hh):
            continue
        maps[k] = np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2.0 * sigma * sigma))
        mask[k] = 1.0
    to_image = heatmap_to_crop((hh, hw), (cfg.input_h, cfg.input_w))
    if crop_to_image is not None:
        to_image = compose_affine(np.asarray(crop_to_image, dtype=np.float64), to_image)
    return HeatmapStack(maps, to_image), mask


# -- decoding -------------------------------------------------------------------


def _flip_permutation(count: int, flip_pairs) -> np.ndarray:
    perm = np.arange(count)
    for a, b in flip_pairs:
        if not (0 <= a < count and 0 <= b < count):
            raise DataError(f"flip pair ({a}, {b}) out of range for K={count}")
        perm[a], perm[b] = b, a
    if not np.array_equal(perm[perm], np.arange(count)):
        raise DataError("flip pairs must form an involution (each index in one pair)")
    return perm


def flip_average(stack: HeatmapStack, flipped: HeatmapStack, flip_pairs) -> HeatmapStack:
    """Average with a horizontally mirrored run: mirror, swap paired channels, mean."""
    if stack.values.shape != flipped.values.shape:
        raise DataError(
            f"flip averaging needs equal shapes, got {stack.values.shape} vs {flipped.values.shape}"
        )
    perm = _flip_permutation(stack.values.shape[0], flip_pairs)
    aligned = flipped.values[:, :, ::-1][perm]
    return HeatmapStack((stack.values + aligned) / 2.0, stack.to_image)


def gaussian_kernel(size: int = 5, sigma: float = 1.0) -> np.ndarray:
    """Normalized 2D Gaussian filter kernel."""
    half = size // 2
    ax = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2.0 * sigma * sigma))
    return g / g.sum()


def _blur(values: np.ndarray, size: int, sigma: float) -> np.ndarray:
    kernel = gaussian_kernel(size, sigma)
    out = np.empty_like(values, dtype=np.float64)
    for k in range(values.shape[0]):
        out[k] = convolve(values[k].astype(np.float64), kernel, mode="constant", cval=0.0)
    return out


def decode(stack: HeatmapStack, flipped: HeatmapStack | None = None,
           flip_pairs=(), bbox_score: float = 1.0, blur: bool = True,
           blur_size: int = 5, blur_sigma: float = 1.0,
           offset_mode: str = "unit") -> KeypointSet:
    """Decode a heatmap stack to image-space keypoints.

    Pipeline: flip-average (the flipped stack must already be mirrored back to
    the original orientation), Gaussian post-filter, argmax plus a quarter
    offset toward the second-highest cell, peak value as joint score, crop
    transform to image coordinates.  A constant map decodes to the map center
    with score 0.

    offset_mode "unit" shifts 0.25 px along the unit direction to the second
    peak; "vector" shifts by a quarter of the full displacement.
    """
    if offset_mode not in OFFSET_MODES:
        raise DataError(f"offset_mode must be one of {OFFSET_MODES}, got {offset_mode!r}")
    if flipped is not None:
        # flip_average expects the raw mirrored run; mirror back first.
        remirrored = HeatmapStack(flipped.values[:, :, ::-1], flipped.to_image)
        stack = flip_average(stack, remirrored, flip_pairs)

    raw = stack.values
    k_, hh, hw = raw.shape
    flat_constant = np.ptp(raw, axis=(1, 2)) == 0
    maps = _blur(raw, blur_size, blur_sigma) if blur else raw.astype(np.float64)

    joints = np.zeros((k_, 4))
    center = np.array([(hw - 1) / 2.0, (hh - 1) / 2.0])
    for k in range(k_):
        if flat_constant[k]:
            joints[k, :2] = center
            joints[k, 3] = 1.0
            continue
        m = maps[k]
        flat = m.reshape(-1)
        i1 = int(flat.argmax())
        p1 = np.array([i1 % hw, i1 // hw], dtype=np.float64)
        masked = flat.copy()
        masked[i1] = -np.inf
        i2 = int(masked.argmax())
        p2 = np.array([i2 % hw, i2 // hw], dtype=np.float64)
        d = p2 - p1
        norm = float(np.hypot(d[0], d[1]))
        if norm > 0:
            step = d / norm if offset_mode == "unit" else d
            p1 = p1 + 0.25 * step
        joints[k, :2] = p1
        joints[k, 2] = min(max(float(flat[i1]), 0.0), 1.0)
        joints[k, 3] = 1.0

    image_xy = apply_affine(stack.to_image, joints[:, :2])
    joints[:, :2] = image_xy

    corners = apply_affine(stack.to_image, np.array([[0.0, 0.0], [hw - 1.0, hh - 1.0]]))
    lo = corners.min(axis=0)
    hi = corners.max(axis=0)
    bbox = (float(lo[0]), float(lo[1]), float(hi[0] - lo[0]), float(hi[1] - lo[1]))
    return KeypointSet(joints, bbox, bbox_score)


def pose_score(kps: KeypointSet) -> float:
    """Mean joint score times the box score."""
    return float(kps.scores.mean() * kps.bbox_score)


# -- heatmap dump ---------------------------------------------------------------


def save_heatmaps(path: str, stack: HeatmapStack) -> None:
    """Binary dump: magic, K/H/W as u32, 2x3 transform as f64, f32 payload."""
    k_, hh, hw = stack.values.shape
    with open(path, "wb") as f:
        f.write(HEATMAP_MAGIC)
        f.write(struct.pack("<III", k_, hh, hw))
        f.write(stack.to_image.astype("<f8").tobytes())
        f.write(stack.values.astype("<f4").tobytes())


def load_heatmaps(path: str) -> HeatmapStack:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != HEATMAP_MAGIC:
        raise DataError(f"{path}: not a heatmap dump (bad magic {blob[:4]!r})")
    if len(blob) < 4 + 12 + 48:
        raise DataError(f"{path}: truncated header")
    k_, hh, hw = struct.unpack_from("<III", blob, 4)
    m = np.frombuffer(blob, dtype="<f8", count=6, offset=16).reshape(2, 3).copy()
    expected = 64 + 4 * k_ * hh * hw
    if len(blob) != expected:
        raise DataError(f"{path}: payload size {len(blob)} != expected {expected}")
    values = np.frombuffer(blob, dtype="<f4", offset=64).reshape(k_, hh, hw).copy()
    return HeatmapStack(values, m)

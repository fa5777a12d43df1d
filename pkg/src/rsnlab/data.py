"""Synthetic pose data, COCO-style annotation files, and augmentation.

The generator renders articulated stick figures with exact joint ground
truth, so the training harness is reproducible at a desk without external
datasets.  Every sample is a pure function of (seed, index); augmentation
draws come from a stream keyed by (seed, epoch, index) so any step of a run
can be replayed in isolation.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .codec import (
    KeypointSet,
    apply_affine,
    compose_affine,
    crop_transform,
    load_skeleton,
)
from .errors import DataError
from .metrics import PoseAnnotation

PPM_MAGIC = b"P6"


# --- deterministic streams ---------------------------------------------------

def sample_rng(seed: int, epoch: int, index: int) -> np.random.Generator:
    """Independent generator for one sample of one epoch."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(epoch, index)))


def epoch_order(seed: int, epoch: int, count: int) -> np.ndarray:
    """Sample visiting order; a pure function of (seed, epoch)."""
    if count < 1:
        raise DataError("an epoch needs at least one sample")
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(epoch,)))
    return rng.permutation(count)


# --- portable pixmap files ---------------------------------------------------

def write_ppm(path: str, image: np.ndarray) -> None:
    """Store a (3, H, W) float image in [0, 1] as a binary P6 pixmap."""
    if image.ndim != 3 or image.shape[0] != 3:
        raise DataError(f"expected a (3, H, W) image, got {image.shape}")
    pixels = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    _, h, w = image.shape
    with open(path, "wb") as stream:
        stream.write(b"P6\n%d %d\n255\n" % (w, h))
        stream.write(pixels.transpose(1, 2, 0).tobytes())


def read_ppm(path: str) -> np.ndarray:
    """Load a binary P6 pixmap as a (3, H, W) float image in [0, 1]."""
    with open(path, "rb") as stream:
        blob = stream.read()
    if not blob.startswith(PPM_MAGIC):
        raise DataError(f"{path} is not a binary pixmap")
    fields, pos = [], len(PPM_MAGIC)
    while len(fields) < 3:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if blob[pos : pos + 1] == b"#":  # comment runs to end of line
            pos = blob.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(blob[start:pos]))
    pos += 1  # single whitespace byte after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise DataError(f"unsupported pixmap depth {maxval}")
    payload = blob[pos : pos + 3 * w * h]
    if len(payload) != 3 * w * h:
        raise DataError(f"{path} is truncated")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3)
    return pixels.transpose(2, 0, 1).astype(np.float64) / 255.0


# --- dataset index -----------------------------------------------------------

@dataclass(frozen=True)
class ImageRecord:
    """One image entry of an annotation file."""

    id: int
    file_name: str
    width: int
    height: int


@dataclass(frozen=True)
class DatasetIndex:
    """Joined images and annotations, plus the directory holding pixels."""

    images: tuple[ImageRecord, ...]
    annotations: tuple[PoseAnnotation, ...]
    root: str = "."

    def annotations_for(self, image_id: int) -> tuple[PoseAnnotation, ...]:
        return tuple(a for a in self.annotations if a.image_id == image_id)

    def image_path(self, record: ImageRecord) -> str:
        return os.path.join(self.root, record.file_name)


def _require(record: dict, key: str, where: str):
    if key not in record:
        raise DataError(f"{where}: missing field {key!r}")
    return record[key]


def _parse_annotation(record: dict, where: str, image_sizes: dict[int, tuple[int, int]]
                      ) -> PoseAnnotation:
    image_id = int(_require(record, "image_id", where))
    if image_id not in image_sizes:
        raise DataError(f"{where}: unknown image_id {image_id}")
    flat = _require(record, "keypoints", where)
    if len(flat) == 0 or len(flat) % 3 != 0:
        raise DataError(f"{where}: keypoints length {len(flat)} is not a"
                        " multiple of 3")
    triples = np.asarray(flat, dtype=np.float64).reshape(-1, 3)
    joints = np.column_stack([triples[:, :2], np.ones(len(triples)), triples[:, 2]])
    bbox = _require(record, "bbox", where)
    if len(bbox) != 4:
        raise DataError(f"{where}: bbox needs 4 values, got {len(bbox)}")
    try:
        keypoints = KeypointSet(joints, bbox=tuple(float(v) for v in bbox))
    except DataError as err:
        raise DataError(f"{where}: {err}") from err
    area = float(record.get("area", bbox[2] * bbox[3]))
    if area <= 0.0:
        raise DataError(f"{where}: area must be positive, got {area}")
    head = record.get("head_length")
    return PoseAnnotation(keypoints=keypoints, area=area, image_id=image_id,
                          id=int(_require(record, "id", where)),
                          iscrowd=bool(record.get("iscrowd", 0)),
                          head_length=None if head is None else float(head))


def load_coco_annotations(path: str) -> DatasetIndex:
    """Parse a COCO-keypoints-style annotation file into a dataset index."""
    try:
        with open(path) as stream:
            payload = json.load(stream)
    except (OSError, json.JSONDecodeError) as err:
        raise DataError(f"cannot read annotations from {path}: {err}") from err
    if not isinstance(payload, dict):
        raise DataError("annotation file must hold a JSON object")

    images, sizes = [], {}
    for i, record in enumerate(payload.get("images", [])):
        where = f"images[{i}]"
        image = ImageRecord(id=int(_require(record, "id", where)),
                            file_name=str(_require(record, "file_name", where)),
                            width=int(_require(record, "width", where)),
                            height=int(_require(record, "height", where)))
        if image.id in sizes:
            raise DataError(f"{where}: duplicate image id {image.id}")
        if image.width < 1 or image.height < 1:
            raise DataError(f"{where}: image size must be positive")
        sizes[image.id] = (image.height, image.width)
        images.append(image)

    annotations, seen = [], set()
    for i, record in enumerate(payload.get("annotations", [])):
        parsed = _parse_annotation(record, f"annotations[{i}]", sizes)
        if parsed.id in seen:
            raise DataError(f"annotations[{i}]: duplicate annotation id {parsed.id}")
        seen.add(parsed.id)
        annotations.append(parsed)

    return DatasetIndex(images=tuple(images), annotations=tuple(annotations),
                        root=os.path.dirname(os.path.abspath(path)))


def save_coco_annotations(path: str, images: list[ImageRecord],
                          annotations: list[PoseAnnotation],
                          joint_names: list[str] | None = None,
                          bones: list[tuple[int, int]] | None = None) -> None:
    """Write the COCO-keypoints layout; skeleton pairs are stored 1-based."""
    records = []
    for a in annotations:
        triples = np.column_stack([a.keypoints.xy, a.keypoints.visibility])
        record = {
            "id": a.id, "image_id": a.image_id, "category_id": 1,
            "keypoints": [float(v) for v in triples.ravel()],
            "num_keypoints": int((a.keypoints.visibility > 0).sum()),
            "bbox": [float(v) for v in a.keypoints.bbox],
            "area": a.area, "iscrowd": int(a.iscrowd),
        }
        if a.head_length is not None:
            record["head_length"] = a.head_length
        records.append(record)
    category = {"id": 1, "name": "person", "supercategory": "person"}
    if joint_names is not None:
        category["keypoints"] = list(joint_names)
    if bones is not None:
        category["skeleton"] = [[a + 1, b + 1] for a, b in bones]
    payload = {
        "images": [{"id": r.id, "file_name": r.file_name,
                    "width": r.width, "height": r.height} for r in images],
        "annotations": records,
        "categories": [category],
    }
    with open(path, "w") as stream:
        json.dump(payload, stream, indent=1)


# --- synthetic stick figures -------------------------------------------------

def _unit(angle: float) -> np.ndarray:
    return np.array([math.cos(angle), math.sin(angle)])


def _stick_pose(rng: np.random.Generator) -> np.ndarray:
    """17 joints of a randomized figure around the origin, roughly unit size.

    Joint order matches the shipped 17-joint skeleton; image y grows
    downward, so "up" is -y.
    """
    torso = rng.uniform(0.9, 1.1)
    lean = rng.uniform(-0.35, 0.35)
    up = np.array([math.sin(lean), -math.cos(lean)])
    side = np.array([math.cos(lean), math.sin(lean)])

    pelvis = np.zeros(2)
    neck = pelvis + torso * up
    hip_w = torso * rng.uniform(0.32, 0.44)
    shoulder_w = torso * rng.uniform(0.42, 0.56)
    l_hip, r_hip = pelvis + hip_w / 2 * side, pelvis - hip_w / 2 * side
    l_sho, r_sho = neck + shoulder_w / 2 * side, neck - shoulder_w / 2 * side

    head = torso * rng.uniform(0.22, 0.30)
    nose = neck + head * _unit(math.atan2(up[1], up[0]) + rng.uniform(-0.3, 0.3))
    eye_w, ear_w = head * 0.35, head * 0.65
    l_eye, r_eye = nose + eye_w * side + 0.1 * head * up, nose - eye_w * side + 0.1 * head * up
    l_ear, r_ear = neck + head * 0.8 * up + ear_w * side, neck + head * 0.8 * up - ear_w * side

    def limb(base, first_range, second_range, upper, lower):
        a = rng.uniform(*first_range)
        mid = base + upper * _unit(a)
        b = a + rng.uniform(*second_range)
        return mid, mid + lower * _unit(b)

    arm_u, arm_l = torso * rng.uniform(0.42, 0.52), torso * rng.uniform(0.40, 0.50)
    leg_u, leg_l = torso * rng.uniform(0.50, 0.62), torso * rng.uniform(0.48, 0.60)
    down = math.pi / 2
    l_elb, l_wri = limb(l_sho, (down - 1.4, down + 1.4), (-1.2, 1.2), arm_u, arm_l)
    r_elb, r_wri = limb(r_sho, (down - 1.4, down + 1.4), (-1.2, 1.2), arm_u, arm_l)
    l_kne, l_ank = limb(l_hip, (down - 0.7, down + 0.7), (-0.8, 0.8), leg_u, leg_l)
    r_kne, r_ank = limb(r_hip, (down - 0.7, down + 0.7), (-0.8, 0.8), leg_u, leg_l)

    return np.stack([nose, l_eye, r_eye, l_ear, r_ear, l_sho, r_sho, l_elb,
                     r_elb, l_wri, r_wri, l_hip, r_hip, l_kne, r_kne,
                     l_ank, r_ank])


def _paint_segment(image: np.ndarray, a: np.ndarray, b: np.ndarray,
                   radius: float, color: np.ndarray) -> None:
    """Stamp a thick segment; works on a local window for speed."""
    _, h, w = image.shape
    x0 = max(int(min(a[0], b[0]) - radius - 1), 0)
    x1 = min(int(max(a[0], b[0]) + radius + 2), w)
    y0 = max(int(min(a[1], b[1]) - radius - 1), 0)
    y1 = min(int(max(a[1], b[1]) + radius + 2), h)
    if x0 >= x1 or y0 >= y1:
        return
    ys, xs = np.mgrid[y0:y1, x0:x1]
    delta = b - a
    length2 = float(delta @ delta)
    if length2 == 0.0:
        t = np.zeros_like(xs, dtype=np.float64)
    else:
        t = np.clip(((xs - a[0]) * delta[0] + (ys - a[1]) * delta[1]) / length2, 0.0, 1.0)
    d2 = (xs - a[0] - t * delta[0]) ** 2 + (ys - a[1] - t * delta[1]) ** 2
    hit = d2 <= radius * radius
    for c in range(3):
        channel = image[c, y0:y1, x0:x1]
        channel[hit] = color[c]


class SynthDataset:
    """Deterministic renders of stick figures with exact joint annotations."""

    def __init__(self, seed: int, count: int, canvas: tuple[int, int] = (256, 256),
                 joint_count: int = 17):
        if count < 1:
            raise DataError("the dataset needs at least one sample")
        if joint_count < 1 or joint_count > 17:
            raise DataError("joint_count must be within 1..17")
        if min(canvas) < 32:
            raise DataError("canvas sides must be at least 32 px")
        self.seed = seed
        self.count = count
        self.canvas = (int(canvas[0]), int(canvas[1]))
        self.joint_count = joint_count
        skeleton = load_skeleton("coco")
        self.joint_names = list(skeleton.joint_names[:joint_count])
        self.bones = [b for b in skeleton.bones if max(b) < joint_count]

    def __len__(self) -> int:
        return self.count

    def sample(self, index: int) -> tuple[np.ndarray, PoseAnnotation]:
        """Render sample `index`; bit-identical for a given (seed, index)."""
        if not 0 <= index < self.count:
            raise DataError(f"sample index {index} out of range 0..{self.count - 1}")
        rng = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(index,)))
        h, w = self.canvas
        pose = _stick_pose(rng)

        lo, hi = pose.min(axis=0), pose.max(axis=0)
        extent = float(max(hi[0] - lo[0], hi[1] - lo[1]))
        size = min(h, w) * rng.uniform(0.45, 0.80)
        pose = (pose - (lo + hi) / 2) * (size / extent)
        half = (pose.max(axis=0) - pose.min(axis=0)) / 2 + 2.0
        center = np.array([rng.uniform(half[0], w - half[0]),
                           rng.uniform(half[1], h - half[1])])
        xy = (pose + center)[: self.joint_count]

        image = np.empty((3, h, w))
        image[:] = rng.uniform(0.05, 0.30, size=3)[:, None, None]
        image += rng.normal(0.0, 0.02, size=(3, h, w))
        bone_r = max(1.5, 0.018 * size)
        for a, b in self.bones:
            _paint_segment(image, xy[a], xy[b], bone_r, rng.uniform(0.45, 0.95, size=3))
        for joint in xy:
            _paint_segment(image, joint, joint, bone_r + 1.0, rng.uniform(0.6, 1.0, size=3))
        np.clip(image, 0.0, 1.0, out=image)

        pad = 0.06 * size + 2.0
        x0, y0 = xy.min(axis=0) - pad
        x1, y1 = xy.max(axis=0) + pad
        bbox = (float(x0), float(y0), float(x1 - x0), float(y1 - y0))
        joints = np.column_stack([xy, np.ones(len(xy)), np.full(len(xy), 2.0)])
        annotation = PoseAnnotation(
            keypoints=KeypointSet(joints, bbox=bbox),
            area=bbox[2] * bbox[3], image_id=index, id=index)
        return image, annotation

    def write(self, directory: str) -> str:
        """Write pixmaps plus annotations.json; returns the annotation path."""
        os.makedirs(directory, exist_ok=True)
        images, annotations = [], []
        for index in range(self.count):
            image, annotation = self.sample(index)
            name = f"synth_{index:05d}.ppm"
            write_ppm(os.path.join(directory, name), image)
            images.append(ImageRecord(id=index, file_name=name,
                                      width=self.canvas[1], height=self.canvas[0]))
            annotations.append(annotation)
        path = os.path.join(directory, "annotations.json")
        save_coco_annotations(path, images, annotations,
                              joint_names=self.joint_names, bones=self.bones)
        return path


def synth_generate(seed: int, count: int, canvas: tuple[int, int] = (256, 256),
                   joint_count: int = 17) -> SynthDataset:
    """Convenience constructor mirroring the CLI surface."""
    return SynthDataset(seed=seed, count=count, canvas=canvas, joint_count=joint_count)


class DiskDataset:
    """Samples backed by an annotation file plus pixmaps on disk.

    One sample per annotation, in file order; pixels are re-read on every
    access so memory stays flat regardless of dataset size.
    """

    def __init__(self, index: DatasetIndex):
        by_id = {record.id: record for record in index.images}
        self.index = index
        self._records = [by_id[a.image_id] for a in index.annotations]

    @classmethod
    def open(cls, directory: str) -> "DiskDataset":
        return cls(load_coco_annotations(os.path.join(directory, "annotations.json")))

    def __len__(self) -> int:
        return len(self._records)

    def sample(self, index: int) -> tuple[np.ndarray, PoseAnnotation]:
        if not 0 <= index < len(self._records):
            raise DataError(f"sample index {index} out of range 0..{len(self._records) - 1}")
        image = read_ppm(self.index.image_path(self._records[index]))
        return image, self.index.annotations[index]


# --- augmentation ------------------------------------------------------------

@dataclass(frozen=True)
class AugmentConfig:
    """Crop-and-jitter policy; defaults follow the training recipe."""

    input_size: tuple[int, int] = (256, 192)
    rotation: float = 45.0
    scale_range: tuple[float, float] = (0.7, 1.35)
    flip_prob: float = 0.5
    flip_pairs: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        if self.input_size[0] < 1 or self.input_size[1] < 1:
            raise DataError("input_size must be positive")
        if self.rotation < 0.0:
            raise DataError("rotation range cannot be negative")
        if not 0.0 < self.scale_range[0] <= self.scale_range[1]:
            raise DataError("scale_range must satisfy 0 < lo <= hi")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise DataError("flip_prob must be in [0, 1]")


@dataclass(frozen=True)
class Sample:
    """A network-ready crop with keypoints expressed in crop pixels."""

    image: np.ndarray
    keypoints: KeypointSet
    source_id: int
    image_to_crop: np.ndarray
    crop_to_image: np.ndarray
    flipped: bool = False

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[0] != 3:
            raise DataError(f"expected a (3, H, W) crop, got {self.image.shape}")
        if not np.isfinite(self.image).all():
            raise DataError("crop pixels must be finite")
        for name, m in (("image_to_crop", self.image_to_crop),
                        ("crop_to_image", self.crop_to_image)):
            if np.asarray(m).shape != (2, 3):
                raise DataError(f"{name} must be a 2x3 affine transform")


def _warp_image(image: np.ndarray, crop_to_image: np.ndarray,
                output_size: tuple[int, int]) -> np.ndarray:
    """Bilinear resample of the source image onto the crop grid."""
    m = crop_to_image
    # ndimage maps output (row, col) through `matrix @ out + offset`.
    matrix = np.array([[m[1, 1], m[1, 0]], [m[0, 1], m[0, 0]]])
    offset = np.array([m[1, 2], m[0, 2]])
    return np.stack([
        ndimage.affine_transform(channel, matrix, offset=offset,
                                 output_shape=output_size, order=1,
                                 mode="constant", cval=0.0)
        for channel in image])


def augment(image: np.ndarray, annotation: PoseAnnotation,
            rng: np.random.Generator, cfg: AugmentConfig) -> Sample:
    """Crop to the network input with random rotation, scale, and flip.

    Draws exactly three variates (rotation, scale, flip coin) in that order,
    so a sample is replayable from its stream.  Joints that leave the crop
    get visibility 0; in-crop joints keep theirs.
    """
    rotation = float(rng.uniform(-cfg.rotation, cfg.rotation))
    scale = float(rng.uniform(*cfg.scale_range))
    flip = bool(rng.random() < cfg.flip_prob)

    image_to_crop, crop_to_image = crop_transform(
        annotation.keypoints.bbox, cfg.input_size, rotation=rotation, scale=scale)
    crop = _warp_image(image, crop_to_image, cfg.input_size)

    joints = annotation.keypoints.joints.copy()
    joints[:, :2] = apply_affine(image_to_crop, joints[:, :2])
    h, w = cfg.input_size
    if flip:
        crop = crop[:, :, ::-1].copy()
        mirror = np.array([[-1.0, 0.0, w - 1.0], [0.0, 1.0, 0.0]])
        image_to_crop = compose_affine(mirror, image_to_crop)
        crop_to_image = compose_affine(crop_to_image, mirror)
        joints[:, 0] = (w - 1.0) - joints[:, 0]
        perm = np.arange(len(joints))
        for a, b in cfg.flip_pairs:
            if not (0 <= a < len(joints) and 0 <= b < len(joints)):
                raise DataError(f"flip pair ({a}, {b}) is out of range for"
                                f" {len(joints)} joints")
            perm[a], perm[b] = b, a
        joints = joints[perm]

    inside = ((joints[:, 0] >= 0.0) & (joints[:, 0] <= w - 1.0)
              & (joints[:, 1] >= 0.0) & (joints[:, 1] <= h - 1.0))
    joints[~inside, 3] = 0.0

    keypoints = KeypointSet(joints, bbox=(0.0, 0.0, float(w), float(h)),
                            bbox_score=annotation.keypoints.bbox_score)
    return Sample(image=crop, keypoints=keypoints, source_id=annotation.id,
                  image_to_crop=image_to_crop, crop_to_image=crop_to_image,
                  flipped=flip)

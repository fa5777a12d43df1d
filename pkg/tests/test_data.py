"""Synthetic dataset determinism, annotation IO, and augmentation geometry."""

from __future__ import annotations

import json

import numpy as np
import pytest

from rsnlab.codec import apply_affine
from rsnlab.data import (
    AugmentConfig,
    SynthDataset,
    augment,
    epoch_order,
    load_coco_annotations,
    read_ppm,
    sample_rng,
    synth_generate,
    write_ppm,
)
from rsnlab.errors import DataError

COCO_PAIRS = ((1, 2), (3, 4), (5, 6), (7, 8), (9, 10), (11, 12), (13, 14), (15, 16))


def flip_permutation(count, pairs):
    perm = np.arange(count)
    for a, b in pairs:
        perm[a], perm[b] = b, a
    return perm


class TestPpm:
    def test_round_trip_preserves_quantized_pixels(self, tmp_path):
        rng = np.random.default_rng(0)
        image = rng.uniform(size=(3, 5, 7))
        path = str(tmp_path / "x.ppm")
        write_ppm(path, image)
        back = read_ppm(path)
        np.testing.assert_array_equal(back, np.round(image * 255) / 255.0)

    def test_header_comments_are_skipped(self, tmp_path):
        path = str(tmp_path / "c.ppm")
        with open(path, "wb") as f:
            f.write(b"P6\n# made by hand\n2 1\n255\n" + bytes(6))
        assert read_ppm(path).shape == (3, 1, 2)

    def test_bad_magic_rejected(self, tmp_path):
        path = str(tmp_path / "bad.ppm")
        with open(path, "wb") as f:
            f.write(b"P5\n2 1\n255\n" + bytes(2))
        with pytest.raises(DataError, match="pixmap"):
            read_ppm(path)

    def test_truncated_payload_rejected(self, tmp_path):
        path = str(tmp_path / "short.ppm")
        with open(path, "wb") as f:
            f.write(b"P6\n4 4\n255\n" + bytes(5))
        with pytest.raises(DataError, match="truncated"):
            read_ppm(path)

    def test_unsupported_depth_rejected(self, tmp_path):
        path = str(tmp_path / "deep.ppm")
        with open(path, "wb") as f:
            f.write(b"P6\n1 1\n65535\n" + bytes(6))
        with pytest.raises(DataError, match="depth"):
            read_ppm(path)

    def test_bad_shape_rejected(self, tmp_path):
        with pytest.raises(DataError, match="3, H, W"):
            write_ppm(str(tmp_path / "x.ppm"), np.zeros((1, 4, 4)))


class TestSynthDataset:
    def test_samples_are_bit_identical_per_seed_and_index(self):
        a = SynthDataset(seed=7, count=3, canvas=(96, 96))
        b = SynthDataset(seed=7, count=3, canvas=(96, 96))
        img_a, ann_a = a.sample(1)
        img_b, ann_b = b.sample(1)
        np.testing.assert_array_equal(img_a, img_b)
        np.testing.assert_array_equal(ann_a.keypoints.joints, ann_b.keypoints.joints)
        assert ann_a.keypoints.bbox == ann_b.keypoints.bbox

    def test_indices_and_seeds_vary_the_sample(self):
        ds = SynthDataset(seed=7, count=2, canvas=(96, 96))
        other = SynthDataset(seed=8, count=2, canvas=(96, 96))
        assert not np.array_equal(ds.sample(0)[0], ds.sample(1)[0])
        assert not np.array_equal(ds.sample(0)[0], other.sample(0)[0])

    @pytest.mark.parametrize("index", range(4))
    def test_all_joints_inside_canvas_and_visible(self, index):
        ds = SynthDataset(seed=3, count=4, canvas=(80, 120))
        image, ann = ds.sample(index)
        xy = ann.keypoints.xy
        assert (xy[:, 0] >= 0).all() and (xy[:, 0] <= 119).all()
        assert (xy[:, 1] >= 0).all() and (xy[:, 1] <= 79).all()
        assert (ann.keypoints.visibility == 2.0).all()
        assert image.shape == (3, 80, 120)
        assert image.min() >= 0.0 and image.max() <= 1.0

    def test_bbox_contains_every_joint(self):
        ds = SynthDataset(seed=5, count=2, canvas=(96, 96))
        _, ann = ds.sample(0)
        x, y, w, h = ann.keypoints.bbox
        xy = ann.keypoints.xy
        assert (xy[:, 0] > x).all() and (xy[:, 0] < x + w).all()
        assert (xy[:, 1] > y).all() and (xy[:, 1] < y + h).all()
        assert ann.area == pytest.approx(w * h)

    def test_reduced_joint_count(self):
        ds = SynthDataset(seed=1, count=1, canvas=(64, 64), joint_count=5)
        _, ann = ds.sample(0)
        assert ann.keypoints.K == 5
        assert all(max(b) < 5 for b in ds.bones)

    def test_annotations_round_trip_through_the_reader(self, tmp_path):
        ds = synth_generate(seed=9, count=3, canvas=(72, 56))
        path = ds.write(str(tmp_path))
        index = load_coco_annotations(path)
        assert len(index.images) == 3 and len(index.annotations) == 3
        for i in range(3):
            _, want = ds.sample(i)
            got = index.annotations[i]
            np.testing.assert_array_equal(got.keypoints.joints, want.keypoints.joints)
            assert got.keypoints.bbox == want.keypoints.bbox
            assert got.area == want.area
            assert (got.image_id, got.id, got.iscrowd) == (i, i, False)
        image = read_ppm(index.image_path(index.images[0]))
        np.testing.assert_array_equal(image, np.round(ds.sample(0)[0] * 255) / 255.0)

    @pytest.mark.parametrize("kwargs,msg", [
        (dict(seed=0, count=0), "at least one"),
        (dict(seed=0, count=1, joint_count=0), "joint_count"),
        (dict(seed=0, count=1, joint_count=18), "joint_count"),
        (dict(seed=0, count=1, canvas=(16, 64)), "canvas"),
    ])
    def test_bad_construction_rejected(self, kwargs, msg):
        with pytest.raises(DataError, match=msg):
            SynthDataset(**kwargs)

    def test_out_of_range_index_rejected(self):
        ds = SynthDataset(seed=0, count=2, canvas=(64, 64))
        with pytest.raises(DataError, match="out of range"):
            ds.sample(2)


def minimal_payload():
    return {
        "images": [{"id": 1, "file_name": "a.ppm", "width": 32, "height": 24}],
        "annotations": [{
            "id": 10, "image_id": 1, "category_id": 1,
            "keypoints": [4.0, 5.0, 2, 8.0, 9.0, 1, 0.0, 0.0, 0],
            "num_keypoints": 2, "bbox": [2.0, 3.0, 10.0, 12.0],
            "area": 120.0, "iscrowd": 0,
        }],
    }


class TestAnnotationReader:
    def write(self, tmp_path, payload):
        path = str(tmp_path / "ann.json")
        with open(path, "w") as f:
            json.dump(payload, f)
        return path

    def test_minimal_file_parses(self, tmp_path):
        index = load_coco_annotations(self.write(tmp_path, minimal_payload()))
        assert len(index.annotations) == 1
        ann = index.annotations[0]
        assert ann.keypoints.K == 3
        np.testing.assert_array_equal(ann.keypoints.xy, [[4, 5], [8, 9], [0, 0]])
        np.testing.assert_array_equal(ann.keypoints.visibility, [2, 1, 0])
        assert ann.area == 120.0 and ann.image_id == 1 and ann.id == 10
        assert ann.head_length is None

    def test_fully_unlabeled_annotation_is_retained(self, tmp_path):
        payload = minimal_payload()
        payload["annotations"][0]["keypoints"] = [0.0, 0.0, 0] * 3
        index = load_coco_annotations(self.write(tmp_path, payload))
        assert (index.annotations[0].keypoints.visibility == 0).all()

    def test_head_length_and_crowd_flags_parse(self, tmp_path):
        payload = minimal_payload()
        payload["annotations"][0]["head_length"] = 7.5
        payload["annotations"][0]["iscrowd"] = 1
        ann = load_coco_annotations(self.write(tmp_path, payload)).annotations[0]
        assert ann.head_length == 7.5 and ann.iscrowd is True

    @pytest.mark.parametrize("mutate,msg", [
        (lambda p: p["annotations"][0].pop("keypoints"), r"annotations\[0\].*keypoints"),
        (lambda p: p["annotations"][0].update(keypoints=[1.0, 2.0]), "multiple of 3"),
        (lambda p: p["annotations"][0].update(image_id=99), "unknown image_id"),
        (lambda p: p["annotations"][0].update(bbox=[1, 2, 3]), "bbox"),
        (lambda p: p["annotations"][0].update(area=0.0), "area"),
        (lambda p: p["images"][0].pop("width"), r"images\[0\].*width"),
        (lambda p: p["images"][0].update(width=0), "positive"),
        (lambda p: p["images"].append(dict(p["images"][0])), "duplicate image id"),
        (lambda p: p["annotations"].append(dict(p["annotations"][0])),
         "duplicate annotation id"),
    ])
    def test_malformed_records_name_the_index(self, tmp_path, mutate, msg):
        payload = minimal_payload()
        mutate(payload)
        with pytest.raises(DataError, match=msg):
            load_coco_annotations(self.write(tmp_path, payload))

    def test_unreadable_file_rejected(self, tmp_path):
        path = str(tmp_path / "broken.json")
        with open(path, "w") as f:
            f.write("{not json")
        with pytest.raises(DataError, match="cannot read"):
            load_coco_annotations(path)


def neutral_cfg(**kwargs):
    base = dict(input_size=(64, 64), rotation=0.0, scale_range=(1.0, 1.0),
                flip_prob=0.0, flip_pairs=COCO_PAIRS)
    base.update(kwargs)
    return AugmentConfig(**base)


class TestAugment:
    def setup_method(self):
        self.ds = SynthDataset(seed=21, count=2, canvas=(128, 160))
        self.image, self.annotation = self.ds.sample(0)

    def test_neutral_draws_reduce_to_the_plain_crop(self):
        sample = augment(self.image, self.annotation, sample_rng(0, 0, 0), neutral_cfg())
        assert not sample.flipped
        assert sample.image.shape == (3, 64, 64)
        want = apply_affine(sample.image_to_crop, self.annotation.keypoints.xy)
        np.testing.assert_allclose(sample.keypoints.xy, want, atol=1e-12)
        round_trip = apply_affine(sample.crop_to_image, sample.keypoints.xy)
        np.testing.assert_allclose(round_trip, self.annotation.keypoints.xy, atol=1e-9)

    def test_keypoints_track_the_stored_transform_with_flip(self):
        cfg = neutral_cfg(rotation=30.0, scale_range=(0.8, 1.2), flip_prob=1.0)
        sample = augment(self.image, self.annotation, sample_rng(0, 0, 1), cfg)
        assert sample.flipped
        perm = flip_permutation(17, COCO_PAIRS)
        want = apply_affine(sample.image_to_crop, self.annotation.keypoints.xy)[perm]
        np.testing.assert_allclose(sample.keypoints.xy, want, atol=1e-9)

    def test_flip_mirrors_x_and_swaps_labels(self):
        plain = augment(self.image, self.annotation, sample_rng(0, 0, 0), neutral_cfg())
        mirrored = augment(self.image, self.annotation, sample_rng(0, 0, 0),
                           neutral_cfg(flip_prob=1.0))
        perm = flip_permutation(17, COCO_PAIRS)
        np.testing.assert_allclose(mirrored.keypoints.xy[perm, 0],
                                   63.0 - plain.keypoints.xy[:, 0], atol=1e-9)
        np.testing.assert_allclose(mirrored.keypoints.xy[perm, 1],
                                   plain.keypoints.xy[:, 1], atol=1e-9)
        np.testing.assert_allclose(mirrored.image, plain.image[:, :, ::-1])

    def test_two_flips_restore_the_original_labels(self):
        perm = flip_permutation(17, COCO_PAIRS)
        np.testing.assert_array_equal(perm[perm], np.arange(17))

    def test_out_of_crop_joints_lose_visibility(self):
        # Zooming far in pushes outer joints beyond the crop.
        cfg = neutral_cfg(scale_range=(0.25, 0.25))
        sample = augment(self.image, self.annotation, sample_rng(0, 0, 2), cfg)
        xy = sample.keypoints.xy
        outside = ((xy[:, 0] < 0) | (xy[:, 0] > 63) | (xy[:, 1] < 0) | (xy[:, 1] > 63))
        assert outside.any()
        assert (sample.keypoints.visibility[outside] == 0).all()
        assert (sample.keypoints.visibility[~outside] == 2).all()

    def test_joint_count_is_preserved(self):
        sample = augment(self.image, self.annotation, sample_rng(0, 0, 3),
                         neutral_cfg(rotation=45.0, scale_range=(0.7, 1.35),
                                     flip_prob=0.5))
        assert sample.keypoints.K == 17

    def test_same_stream_replays_identically(self):
        cfg = neutral_cfg(rotation=45.0, scale_range=(0.7, 1.35), flip_prob=0.5)
        a = augment(self.image, self.annotation, sample_rng(5, 2, 7), cfg)
        b = augment(self.image, self.annotation, sample_rng(5, 2, 7), cfg)
        np.testing.assert_array_equal(a.image, b.image)
        np.testing.assert_array_equal(a.keypoints.joints, b.keypoints.joints)
        assert a.flipped == b.flipped

    @pytest.mark.parametrize("draw", range(6))
    def test_markers_land_on_transformed_joints(self, draw):
        """Render-check: a disk painted at a joint must move with the joint."""
        cfg = neutral_cfg(rotation=45.0, scale_range=(0.7, 1.35), flip_prob=0.5)
        sample = augment(self.image, self.annotation, sample_rng(8, 0, draw), cfg)
        perm = (flip_permutation(17, COCO_PAIRS) if sample.flipped
                else np.arange(17))
        ys, xs = np.mgrid[0 : self.image.shape[1], 0 : self.image.shape[2]]
        for joint in (0, 5, 9, 16):
            x, y = sample.keypoints.xy[perm[joint]]
            if not (4 <= x <= 59 and 4 <= y <= 59):
                continue
            gx, gy = self.annotation.keypoints.xy[joint]
            marker = np.exp(-((xs - gx) ** 2 + (ys - gy) ** 2) / 4.0)[None].repeat(3, 0)
            warped = augment(marker, self.annotation, sample_rng(8, 0, draw), cfg)
            py, px = np.unravel_index(warped.image[0].argmax(), warped.image[0].shape)
            assert np.hypot(px - x, py - y) <= 1.0

    @pytest.mark.parametrize("kwargs,msg", [
        (dict(rotation=-1.0), "rotation"),
        (dict(scale_range=(0.0, 1.0)), "scale_range"),
        (dict(scale_range=(1.2, 0.9)), "scale_range"),
        (dict(flip_prob=1.5), "flip_prob"),
        (dict(input_size=(0, 64)), "input_size"),
    ])
    def test_bad_config_rejected(self, kwargs, msg):
        with pytest.raises(DataError, match=msg):
            neutral_cfg(**kwargs)

    def test_out_of_range_flip_pair_rejected(self):
        cfg = neutral_cfg(flip_prob=1.0, flip_pairs=((0, 40),))
        with pytest.raises(DataError, match="out of range"):
            augment(self.image, self.annotation, sample_rng(0, 0, 0), cfg)


class TestEpochStreams:
    def test_order_is_a_permutation_and_pure(self):
        a = epoch_order(3, 4, 10)
        b = epoch_order(3, 4, 10)
        np.testing.assert_array_equal(a, b)
        assert sorted(a.tolist()) == list(range(10))

    def test_epochs_differ(self):
        assert not np.array_equal(epoch_order(3, 0, 32), epoch_order(3, 1, 32))

    def test_sample_streams_are_independent(self):
        a = sample_rng(1, 0, 0).uniform(size=4)
        b = sample_rng(1, 0, 1).uniform(size=4)
        c = sample_rng(1, 1, 0).uniform(size=4)
        assert not np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_empty_epoch_rejected(self):
        with pytest.raises(DataError, match="at least one"):
            epoch_order(0, 0, 0)

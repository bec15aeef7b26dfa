import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from pyrseg.data import (
    IGNORE_LABEL,
    SampleRecord,
    bytes_to_probabilities,
    generate_synthetic,
    gt_boundary_from_labels,
    load_boundaries,
    load_dataset,
    load_image,
    load_manifest,
    load_mask,
    probabilities_to_bytes,
    read_pgm_stack,
    save_boundaries,
    save_dataset,
    save_image,
    save_mask,
    write_pgm_stack,
)
from pyrseg.errors import InvalidArgumentError, PgmParseError, ValidationError


class TestBoundaryRule:
    def test_uniform_mask_has_no_boundaries(self):
        mask = np.full((5, 5), 2, dtype=np.int64)
        assert gt_boundary_from_labels(mask, 4).sum() == 0

    def test_half_plane_band_marks_both_classes(self):
        mask = np.zeros((6, 6), dtype=np.int64)
        mask[:, 3:] = 1
        bits = gt_boundary_from_labels(mask, 2, radius=1)
        oracle = oracles.boundary_rule_direct(mask, 2, radius=1)
        np.testing.assert_array_equal(bits, oracle)
        # two-pixel band straddling the split, identical for the two classes
        for k in (0, 1):
            np.testing.assert_array_equal(bits[k, :, [2, 3]], 1)
            np.testing.assert_array_equal(bits[k, :, [0, 1, 4, 5]], 0)

    def test_isolated_pixel(self):
        mask = np.zeros((7, 7), dtype=np.int64)
        mask[3, 3] = 2
        bits = gt_boundary_from_labels(mask, 3, radius=1)
        oracle = oracles.boundary_rule_direct(mask, 3, radius=1)
        np.testing.assert_array_equal(bits, oracle)
        # the 3x3 patch around the pixel carries the class-2 bit
        np.testing.assert_array_equal(bits[2, 2:5, 2:5], 1)
        assert bits[2].sum() == 9
        # the surrounding ring carries the class-0 bit
        assert bits[0, 2:5, 2:5].sum() >= 8
        assert bits[0, 0, 0] == 0

    def test_ignore_pixels_produce_no_boundary(self):
        mask = np.zeros((5, 5), dtype=np.int64)
        mask[:, 3:] = 1
        mask[2, :] = IGNORE_LABEL
        bits = gt_boundary_from_labels(mask, 2, radius=1)
        np.testing.assert_array_equal(bits[:, 2, :], 0)
        np.testing.assert_array_equal(
            bits, oracles.boundary_rule_direct(mask, 2, radius=1)
        )

    @given(st.integers(0, 10_000), st.integers(1, 2))
    @settings(max_examples=20, deadline=None)
    def test_matches_enumeration_oracle(self, seed, radius):
        rng = np.random.default_rng(seed)
        mask = rng.integers(0, 3, size=(7, 6)).astype(np.int64)
        mask[rng.random(size=mask.shape) < 0.1] = IGNORE_LABEL
        bits = gt_boundary_from_labels(mask, 3, radius=radius)
        np.testing.assert_array_equal(
            bits, oracles.boundary_rule_direct(mask, 3, radius=radius)
        )

    def test_side_symmetry_across_borders(self):
        mask = np.zeros((8, 8), dtype=np.int64)
        mask[:, 4:] = 1
        bits = gt_boundary_from_labels(mask, 2, radius=1)
        np.testing.assert_array_equal(bits[0], bits[1])

    def test_bits_stay_near_their_class(self):
        rng = np.random.default_rng(3)
        mask = rng.integers(0, 4, size=(9, 9)).astype(np.int64)
        radius = 1
        bits = gt_boundary_from_labels(mask, 4, radius=radius)
        for k in range(4):
            ys, xs = np.nonzero(bits[k])
            for y, x in zip(ys, xs):
                window = oracles.enumerate_window_labels(mask, y, x, radius)
                assert k in window


class TestGenerator:
    def test_deterministic_per_seed(self):
        a = generate_synthetic(seed=11, count=3, size=32, classes=4)
        b = generate_synthetic(seed=11, count=3, size=32, classes=4)
        for sa, sb in zip(a, b):
            np.testing.assert_array_equal(sa.image, sb.image)
            np.testing.assert_array_equal(sa.mask, sb.mask)
            np.testing.assert_array_equal(sa.boundaries, sb.boundaries)

    def test_two_class_scene_has_shape_and_band(self):
        for seed in range(5):
            sample = generate_synthetic(seed=seed, count=1, size=48, classes=2)[0]
            assert set(np.unique(sample.mask)) == {0, 1}
            np.testing.assert_array_equal(
                sample.boundaries,
                oracles.boundary_rule_direct(sample.mask, 2, radius=1),
            )
            assert sample.boundaries.sum() > 0

    def test_zero_count_gives_empty_list(self):
        assert generate_synthetic(seed=0, count=0, size=32, classes=3) == []

    def test_size_divisibility_checked(self):
        with pytest.raises(InvalidArgumentError, match="16"):
            generate_synthetic(seed=0, count=1, size=60, classes=3)

    def test_image_range_and_shapes(self):
        sample = generate_synthetic(seed=5, count=1, size=32, classes=5)[0]
        assert sample.image.shape == (3, 32, 32)
        assert sample.mask.shape == (32, 32)
        assert sample.boundaries.shape == (5, 32, 32)
        assert sample.image.min() >= 0.0 and sample.image.max() <= 1.0


class TestPgmFormats:
    def test_mask_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        mask = rng.integers(0, 4, size=(6, 5)).astype(np.int64)
        mask[0, 0] = IGNORE_LABEL
        path = tmp_path / "m.pgm"
        save_mask(path, mask)
        np.testing.assert_array_equal(load_mask(path, 4), mask)

    def test_boundary_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        bits = (rng.random(size=(3, 4, 5)) < 0.4).astype(np.uint8)
        path = tmp_path / "b.pgm"
        save_boundaries(path, bits)
        np.testing.assert_array_equal(load_boundaries(path), bits)

    def test_probability_endpoints(self):
        assert probabilities_to_bytes(np.array([1.0]))[0] == 255
        assert probabilities_to_bytes(np.array([0.0]))[0] == 0

    def test_probability_quantization_bound(self, tmp_path):
        rng = np.random.default_rng(2)
        probs = rng.random(size=(2, 5, 5))
        path = tmp_path / "p.pgm"
        save_image(path, probs)
        back = load_image(path)
        assert np.abs(back - probs).max() <= 0.5 / 255.0 + 1e-12

    def test_malformed_header_reports_offset(self, tmp_path):
        path = tmp_path / "bad.pgm"
        path.write_bytes(b"P6\n2 2\n255\n" + b"\0" * 4)
        with pytest.raises(PgmParseError, match="byte offset"):
            read_pgm_stack(path)
        path.write_bytes(b"P5\n2 x\n255\n" + b"\0" * 4)
        with pytest.raises(PgmParseError) as err:
            read_pgm_stack(path)
        assert err.value.offset == 5

    def test_truncated_payload_rejected(self, tmp_path):
        path = tmp_path / "short.pgm"
        path.write_bytes(b"P5\n4 4\n255\n" + b"\0" * 7)
        with pytest.raises(PgmParseError, match="truncated"):
            read_pgm_stack(path)

    def test_label_value_validation(self, tmp_path):
        path = tmp_path / "m.pgm"
        write_pgm_stack(path, np.full((1, 2, 2), 9, dtype=np.uint8))
        with pytest.raises(ValidationError, match="9"):
            load_mask(path, 4)
        # 255 stays legal as the ignore label
        write_pgm_stack(path, np.full((1, 2, 2), 255, dtype=np.uint8))
        np.testing.assert_array_equal(load_mask(path, 4), np.full((2, 2), 255))

    def test_multi_block_stack(self, tmp_path):
        rng = np.random.default_rng(3)
        stack = rng.integers(0, 256, size=(4, 3, 6)).astype(np.uint8)
        path = tmp_path / "s.pgm"
        write_pgm_stack(path, stack)
        np.testing.assert_array_equal(read_pgm_stack(path), stack)

    def test_byte_values_round_probabilities(self):
        probs = np.array([0.0, 0.249 / 255 * 255, 0.5, 1.0])
        raw = probabilities_to_bytes(probs)
        back = bytes_to_probabilities(raw)
        assert np.abs(back - probs).max() <= 0.5 / 255.0


class TestDatasetDirectory:
    def test_round_trip_and_order(self, tmp_path):
        samples = generate_synthetic(seed=4, count=4, size=32, classes=3)
        save_dataset(tmp_path, samples, classes=3)
        back = load_dataset(tmp_path)
        assert [s.id for s in back] == sorted(s.id for s in samples)
        for orig, loaded in zip(samples, back):
            np.testing.assert_array_equal(orig.mask, loaded.mask)
            np.testing.assert_array_equal(orig.boundaries, loaded.boundaries)
            assert np.abs(orig.image - loaded.image).max() <= 0.5 / 255.0 + 1e-12

    def test_manifest_sorted_even_if_shuffled_on_disk(self, tmp_path):
        samples = generate_synthetic(seed=4, count=3, size=32, classes=3)
        save_dataset(tmp_path, samples, classes=3)
        manifest = load_manifest(tmp_path)
        ids = [e["id"] for e in manifest]
        assert ids == sorted(ids)

    def test_sample_record_validates_shapes(self):
        with pytest.raises(ValidationError, match="inconsistent"):
            SampleRecord(
                id="x",
                image=np.zeros((3, 4, 4)),
                mask=np.zeros((5, 5), dtype=np.int64),
                boundaries=np.zeros((2, 4, 4), dtype=np.uint8),
            )

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_manifest(tmp_path / "nope")

#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""Tests for mod.dataset: Cornell parsing, inpainting, augmentation, the synthetic
scene generator, fold splitting and the on-disk layouts.
"""


import math

import numpy as np
import pytest

from numpy.testing import assert_allclose, assert_array_equal

from mod import dataset as ds
from mod import errors
from mod import grasp_core as gc


def pcd_text(points, fields="x y z rgb index", data="ascii"):
    """A minimal ASCII point cloud; POINTS is a list of (z, index) pairs."""
    header = ["# .PCD v.7 - Point Cloud Data file format",
              "VERSION .7",
              f"FIELDS {fields}",
              "SIZE 4 4 4 4 4",
              "TYPE F F F F U",
              "COUNT 1 1 1 1 1",
              f"WIDTH {len(points)}",
              "HEIGHT 1",
              f"POINTS {len(points)}",
              f"DATA {data}"]
    return '\n'.join(header + [f"0.5 -0.25 {z} 4.2108e+06 {i}" for z, i in points]) + '\n'


class TestCornellRects:
    def test_one_rectangle(self):
        rects = ds.parse_cornell_rects("0 0\n4 0\n4 2\n0 2\n")
        assert len(rects) == 1
        assert (rects[0].center_x, rects[0].center_y) == (2, 1)

    def test_empty_text(self):
        assert ds.parse_cornell_rects("") == []

    def test_incomplete_group_names_its_line(self):
        with pytest.raises(errors.FormatError) as info:
            ds.parse_cornell_rects("0 0\n4 0\n4 2\n0 2\n1 1\n", 'pcd0100cpos.txt')
        assert info.value.line == 5
        assert 'pcd0100cpos.txt' in str(info.value)

    def test_bad_lines(self):
        with pytest.raises(errors.FormatError) as info:
            ds.parse_cornell_rects("0 0\n4 zero\n4 2\n0 2\n")
        assert info.value.line == 2
        with pytest.raises(errors.FormatError) as info:
            ds.parse_cornell_rects("0 0\n4 0 1\n4 2\n0 2\n")
        assert info.value.line == 2

    def test_nan_groups_are_skipped(self):
        text = "0 0\n4 0\n4 2\n0 2\nNaN NaN\n1 0\n1 1\n0 1\n10 10\n14 10\n14 12\n10 12\n"
        rects = ds.parse_cornell_rects(text)
        assert [(r.center_x, r.center_y) for r in rects] == [(2, 1), (12, 11)]

    def test_degenerate_rectangle(self):
        with pytest.raises(errors.FormatError):
            ds.parse_cornell_rects("0 0\n0 0\n4 2\n0 2\n")

    def test_format_round_trip(self, rng):
        rects = [gc.GraspRectangle(*rng.uniform(0, 100, 2), rng.uniform(-1.5, 1.5), *rng.uniform(5, 40, 2))
                 for _ in range(10)]
        back = ds.parse_cornell_rects(ds.format_cornell_rects(rects))
        for a, b in zip(rects, back):
            assert b.center_x == pytest.approx(a.center_x, abs=1e-5)
            assert b.center_y == pytest.approx(a.center_y, abs=1e-5)
            assert gc.angle_distance(a.theta, b.theta) < 1e-6
            assert b.width == pytest.approx(a.width, abs=1e-5)


class TestPointClouds:
    def test_two_points(self):
        img = ds.parse_ascii_pcd_to_depth(pcd_text([(700.0, 0), (800.0, 6)]), 4, 5)
        expected = np.zeros((4, 5), dtype=bool)
        expected[0, 0] = expected[1, 1] = True
        assert_array_equal(img.valid, expected)
        assert img.depth[1, 1] == 800.0

    def test_empty_point_section(self):
        img = ds.parse_ascii_pcd_to_depth(pcd_text([]), 3, 3)
        assert not img.valid.any()

    def test_full_coverage(self, rng):
        z = rng.uniform(500, 900, (6, 7))
        text = pcd_text([(repr(float(v)), i) for i, v in enumerate(z.reshape(-1))])
        img = ds.parse_ascii_pcd_to_depth(text, 6, 7, z_scale=0.001)
        assert img.valid.all()
        assert_allclose(img.depth, z * 0.001)

    def test_missing_index_field(self):
        text = pcd_text([(700.0, 0)]).replace("x y z rgb index", "x y z rgb normal")
        with pytest.raises(errors.FormatError):
            ds.parse_ascii_pcd_to_depth(text, 4, 4)

    def test_binary_data(self):
        with pytest.raises(errors.FormatError):
            ds.parse_ascii_pcd_to_depth(pcd_text([(700.0, 0)], data="binary"), 4, 4)

    def test_index_out_of_range(self):
        with pytest.raises(errors.FormatError) as info:
            ds.parse_ascii_pcd_to_depth(pcd_text([(700.0, 0), (700.0, 16)]), 4, 4)
        assert info.value.line == 12


class TestInpaint:
    def test_all_valid_is_unchanged(self, rng):
        img = ds.DepthImage.full(rng.random((5, 6)))
        assert_array_equal(ds.inpaint_depth(img).depth, img.depth)

    def test_single_source(self):
        valid = np.zeros((7, 9), dtype=bool)
        valid[2, 3] = True
        img = ds.inpaint_depth(ds.DepthImage(np.where(valid, 0.7, 0.0), valid))
        assert img.valid.all()
        assert np.all(img.depth == 0.7)

    def test_half_plane(self, rng):
        depth = rng.random((8, 10))
        valid = np.zeros((8, 10), dtype=bool)
        valid[:, :4] = True
        filled = ds.inpaint_depth(ds.DepthImage(depth, valid))
        assert_array_equal(filled.depth[:, :4], depth[:, :4])
        for col in range(4, 10):
            assert_array_equal(filled.depth[:, col], depth[:, 3])

    def test_upper_neighbour_wins_ties(self):
        depth = np.array([[1.0], [0.0], [2.0]])
        filled = ds.inpaint_depth(ds.DepthImage(depth, np.array([[True], [False], [True]])))
        assert filled.depth[1, 0] == 1.0

    def test_idempotent(self, rng):
        valid = rng.random((12, 12)) > 0.7
        once = ds.inpaint_depth(ds.DepthImage(np.where(valid, rng.random((12, 12)), 0), valid))
        twice = ds.inpaint_depth(once)
        assert_array_equal(once.depth, twice.depth)

    def test_no_valid_pixels(self):
        with pytest.raises(errors.EmptyInputError):
            ds.inpaint_depth(ds.DepthImage(np.zeros((3, 3)), np.zeros((3, 3), dtype=bool)))

    def test_normalize_depth(self, rng):
        depth = rng.uniform(0.6, 0.7, (10, 10))
        assert abs(ds.normalize_depth(depth).mean()) < 1e-12
        assert ds.normalize_depth(np.array([[0.0, 10.0]])).tolist() == [[-1.0, 1.0]]


class TestAugment:
    @pytest.fixture
    def sample(self, rng):
        return ds.Sample('s', 'o', ds.DepthImage.full(rng.random((100, 120))),
                         [gc.GraspRectangle(60, 50, 0.3, 10, 20)])

    def test_identity_is_a_center_crop(self, sample):
        out = ds.augment_sample(sample, ds.AugmentParams.identity((100, 120), 64), 64)
        assert_array_equal(out.depth.depth, sample.depth.depth[18:82, 28:92])
        assert out.rects[0].center_x == pytest.approx(32)
        assert out.rects[0].center_y == pytest.approx(32)
        assert gc.angle_distance(out.rects[0].theta, 0.3) < 1e-9
        assert out.meta['augment']['zoom'] == 1.0

    def test_rotation_out_of_range(self):
        with pytest.raises(errors.ParameterRangeError):
            ds.AugmentParams(rotation=math.pi / 2)
        with pytest.raises(errors.ParameterRangeError):
            ds.AugmentParams(zoom=0.5)

    @pytest.mark.parametrize("rotation", [-0.34, -0.1, 0.2, 0.34])
    def test_rotation_turns_rectangles(self, rotation):
        s = ds.Sample('s', 'o', ds.DepthImage.full(np.ones((100, 100))),
                      [gc.GraspRectangle(50, 50, theta, 8, 16) for theta in (-1.5, 0.0, 1.4)])
        out = ds.augment_sample(s, ds.AugmentParams(1.0, rotation, (0, 0)), 100)
        assert len(out.rects) == 3
        for before, after in zip(s.rects, out.rects):
            assert gc.angle_distance(after.theta, before.theta + rotation) < 1e-6

    def test_zoom_scales_rectangles(self):
        s = ds.Sample('s', 'o', ds.DepthImage.full(np.ones((100, 100))), [gc.GraspRectangle(50, 50, 0.4, 8, 16)])
        out = ds.augment_sample(s, ds.AugmentParams(0.8, 0.1, (8, 8)), 64)
        assert out.depth.shape == (64, 64)
        assert out.rects[0].width == pytest.approx(16 * 0.8, abs=1e-6)
        assert out.rects[0].height == pytest.approx(8 * 0.8, abs=1e-6)

    def test_all_rectangles_dropped(self, rng):
        s = ds.Sample('s', 'o', ds.DepthImage.full(rng.random((100, 120))), [gc.GraspRectangle(5, 5, 0, 4, 4)])
        with pytest.raises(errors.EmptyInputError):
            ds.center_crop_sample(s, 64)

    def test_drawn_parameters(self, rng, sample):
        for _ in range(20):
            p = ds.AugmentParams.draw(rng, (100, 120), 64)
            assert ds.max_zoom_out <= p.zoom <= 1
            assert abs(p.rotation) <= ds.max_rotation
            img = ds.augment_sample(ds.Sample('s', 'o', sample.depth, []), p, 64).depth
            assert img.shape == (64, 64)

    def test_fit_depth_to_size(self, rng):
        small = ds.fit_depth_to_size(ds.DepthImage.full(rng.random((48, 40))), 64)
        assert small.shape == (64, 64)
        big = ds.DepthImage.full(rng.random((80, 90)))
        assert_array_equal(ds.fit_depth_to_size(big, 64).depth, big.depth[8:72, 13:77])


class TestSynthetic:
    def test_deterministic(self):
        a, b = ds.make_synthetic(4, 64, 7), ds.make_synthetic(4, 64, 7)
        for x, y in zip(a, b):
            assert x.id == y.id and x.object_id == y.object_id
            assert_array_equal(x.depth.depth, y.depth.depth)
            assert x.rects == y.rects
        assert not np.array_equal(a[0].depth.depth, ds.make_synthetic(1, 64, 8)[0].depth.depth)

    def test_size_too_small(self):
        with pytest.raises(errors.ParameterRangeError):
            ds.make_synthetic(1, 32, 0)

    def test_scene_contents(self):
        for s in ds.make_synthetic(10, 64, 3):
            assert set(np.unique(s.depth.depth)) == {ds.synthetic_bar_depth, ds.synthetic_table_depth}
            assert s.rects
            assert all(gc.rectangle_metric_match(r, [r]) for r in s.rects)

    def test_ground_truth_angle_is_across_the_bar(self):
        for s in ds.make_synthetic(10, 64, 11):
            maps = gc.rasterize_rects(s.rects, 64, 64, gc.scaled_width_max(64))
            g = gc.decode_best_grasp(maps, gc.scaled_width_max(64))
            assert gc.angle_distance(g.phi, s.meta['bar_angles'][0] + math.pi / 2) < 1e-6

    def test_ground_truth_passes_its_own_metric(self):
        width_max = gc.scaled_width_max(64)
        for s in ds.make_synthetic(20, 64, 5):
            maps = gc.rasterize_rects(s.rects, 64, 64, width_max)
            (g,) = gc.decode_top_k(maps, 1, 0.5, 0, width_max)
            assert gc.rectangle_metric_match(gc.pixel_grasp_to_rectangle(g), s.rects)

    def test_ground_truth_band_has_no_gaps(self):
        from scipy import ndimage
        for s in ds.make_synthetic(10, 96, 13):
            maps = gc.rasterize_rects(s.rects, 96, 96, gc.scaled_width_max(96))
            _, pieces = ndimage.label(maps.quality > 0, structure=np.ones((3, 3), dtype=int))
            assert pieces == 1
            step = math.hypot(s.rects[1].center_x - s.rects[0].center_x, s.rects[1].center_y - s.rects[0].center_y)
            assert step == pytest.approx(s.rects[0].height / 3)

    def test_multi_bar_scenes(self):
        for s in ds.make_synthetic(5, 96, 2, bars=3):
            assert len(s.meta['bar_angles']) >= 2
            assert len(s.meta['bar_angles']) == len(s.meta['bar_centers'])

    def test_images_per_object(self):
        samples = ds.make_synthetic(6, 64, 1, images_per_object=3)
        assert [s.object_id for s in samples] == ['obj0000'] * 3 + ['obj0001'] * 3


class TestFolds:
    def test_image_wise(self):
        samples = ds.make_synthetic(10, 64, 0)
        folds = ds.split_folds(samples, ds.IMAGE_WISE, 5, 1)
        tests = [set(test) for _, test in folds]
        assert all(len(t) == 2 for t in tests)
        assert set.union(*tests) == set(range(10))
        for train, test in folds:
            assert set(train).isdisjoint(test)
            assert len(train) + len(test) == 10

    def test_object_wise(self):
        samples = ds.make_synthetic(10, 64, 0, images_per_object=2)
        for train, test in ds.split_folds(samples, ds.OBJECT_WISE, 5, 1):
            assert len(test) == 2
            assert samples[test[0]].object_id == samples[test[1]].object_id
            assert {samples[i].object_id for i in train}.isdisjoint(samples[i].object_id for i in test)

    def test_deterministic(self):
        samples = ds.make_synthetic(12, 64, 0)
        assert ds.split_folds(samples, ds.IMAGE_WISE, 3, 9) == ds.split_folds(samples, ds.IMAGE_WISE, 3, 9)

    def test_too_few_objects(self):
        samples = ds.make_synthetic(6, 64, 0, images_per_object=3)
        with pytest.raises(errors.ParameterRangeError):
            ds.split_folds(samples, ds.OBJECT_WISE, 3, 0)

    def test_bad_arguments(self):
        samples = ds.make_synthetic(4, 64, 0)
        with pytest.raises(errors.ParameterRangeError):
            ds.split_folds(samples, ds.IMAGE_WISE, 1, 0)
        with pytest.raises(errors.ParameterRangeError):
            ds.split_folds(samples, 'pixel', 2, 0)


class TestOnDisk:
    def test_portable_round_trip(self, tmp_path):
        samples = ds.make_synthetic(3, 64, 4)
        manifest = ds.write_dataset(samples, tmp_path / 'syn')
        assert manifest.name == ds.manifest_name
        loaded = ds.load_dataset(tmp_path / 'syn')
        assert [s.id for s in loaded] == [s.id for s in samples]
        for a, b in zip(samples, loaded):
            assert a.object_id == b.object_id
            assert_allclose(b.depth.depth, a.depth.depth, atol=1e-9)
            assert len(a.rects) == len(b.rects)
            for r, q in zip(a.rects, b.rects):
                assert q.center_x == pytest.approx(r.center_x, abs=1e-5)
                assert gc.angle_distance(q.theta, r.theta) < 1e-6

    def test_depth_png_keeps_holes(self, tmp_path):
        valid = np.ones((4, 4), dtype=bool)
        valid[1, 2] = False
        ds.write_depth_png(ds.DepthImage(np.full((4, 4), 0.654), valid), tmp_path / 'd.png')
        back = ds.read_depth_png(tmp_path / 'd.png')
        assert_array_equal(back.valid, valid)
        assert_allclose(back.depth[valid], 0.654)

    def test_unreadable_png(self, tmp_path):
        (tmp_path / 'bad.png').write_text('not an image')
        with pytest.raises(errors.FormatError):
            ds.read_depth_png(tmp_path / 'bad.png')

    def test_bad_manifest(self, tmp_path):
        (tmp_path / ds.manifest_name).write_text('{"id": "a"}\n')
        with pytest.raises(errors.FormatError) as info:
            ds.load_dataset(tmp_path)
        assert info.value.line == 1

    def test_missing_directory(self, tmp_path):
        with pytest.raises(errors.FormatError):
            ds.load_dataset(tmp_path / 'nowhere')

    def write_cornell(self, directory, number):
        points = [(700.0, v * 640 + u) for v in range(0, 480, 32) for u in range(0, 640, 32)]
        (directory / f"pcd{number}.txt").write_text(pcd_text(points))
        (directory / f"pcd{number}cpos.txt").write_text("300 200\n340 200\n340 220\n300 220\n")

    def test_cornell_layout(self, tmp_path):
        for number in ('0100', '0101', '0110'):
            self.write_cornell(tmp_path, number)
        samples = ds.load_dataset(tmp_path)
        assert [s.id for s in samples] == ['pcd0100', 'pcd0101', 'pcd0110']
        assert [s.object_id for s in samples] == ['grp010', 'grp010', 'grp011']
        assert samples[0].depth.shape == ds.cornell_image_shape
        assert samples[0].depth.valid.all()
        assert_allclose(samples[0].depth.depth, 0.7)
        assert samples[0].rects[0].center_x == pytest.approx(320)

    def test_cornell_mapping_file(self, tmp_path):
        for number in ('0100', '0101'):
            self.write_cornell(tmp_path, number)
        (tmp_path / 'z.txt').write_text("100 7 cup\n101 8 cup\n")
        assert [s.object_id for s in ds.load_dataset(tmp_path)] == ['obj0007', 'obj0008']

    def test_portable_samples_without_rectangles_are_skipped(self, tmp_path):
        ds.write_dataset(ds.make_synthetic(3, 64, 4), tmp_path)
        (tmp_path / 'syn00001_cpos.txt').write_text("NaN NaN\n" * 4)
        (tmp_path / 'syn00002_cpos.txt').write_text('')
        assert [s.id for s in ds.load_dataset(tmp_path)] == ['syn00000']

    def test_cornell_samples_without_rectangles_are_skipped(self, tmp_path):
        for number in ('0100', '0101'):
            self.write_cornell(tmp_path, number)
        (tmp_path / 'pcd0101cpos.txt').write_text("NaN NaN\n" * 4)
        assert [s.id for s in ds.load_dataset(tmp_path)] == ['pcd0100']
        with pytest.raises(errors.EmptyInputError):
            ds.load_cornell_sample(tmp_path / 'pcd0101.txt', tmp_path / 'pcd0101cpos.txt', 'pcd0101', 'grp010')

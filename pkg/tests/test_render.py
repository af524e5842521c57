#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""Tests for mod.render."""


import math

import numpy as np

from numpy.testing import assert_array_equal

from mod import grasp_core as gc
from mod import render


def test_gray_levels():
    depth = np.array([[0.6, 0.7], [0.65, 0.7]])
    gray = np.asarray(render.depth_to_gray(depth))
    assert gray[0, 0] == 255 and gray[0, 1] == 0
    assert np.all(np.asarray(render.depth_to_gray(np.full((3, 3), 0.7))) == 0)


def test_overlay_leaves_depth_alone():
    depth = np.full((40, 40), 0.7)
    depth[15:25, 10:30] = 0.6
    before = depth.copy()
    img = render.draw_overlay(depth, [gc.GraspRectangle(20, 20, 0.3, 6, 16)], scale=3)
    assert_array_equal(depth, before)
    assert img.size == (120, 120) and img.mode == 'RGB'
    pixels = np.asarray(img)
    red = np.all(pixels == render.edge_color, axis=-1)
    assert red.any()
    assert not red[:, :30].any()


def test_overlay_without_rectangles_is_gray():
    pixels = np.asarray(render.draw_overlay(np.linspace(0.5, 0.8, 100).reshape(10, 10), []))
    assert_array_equal(pixels[..., 0], pixels[..., 1])
    assert_array_equal(pixels[..., 1], pixels[..., 2])


def test_map_panels():
    maps = gc.rasterize_rects([gc.GraspRectangle(16, 16, 0.5, 5, 12)], 32, 32, 24.0)
    before = maps.copy()
    img = render.map_panels(maps, scale=2)
    assert img.size == (128, 64)
    for a, b in zip(maps.planes(), before.planes()):
        assert_array_equal(a, b)


def test_colorize_ends():
    img = np.asarray(render.colorize(np.array([[0.0, 1.0, np.nan]]), 'gray'))
    assert_array_equal(img[0, 0], (0, 0, 0))
    assert_array_equal(img[0, 1], (255, 255, 255))
    assert_array_equal(img[0, 2], (0, 0, 0))


def test_save_image_format(tmp_path):
    img = render.depth_to_gray(np.eye(4))
    render.save_image(img, tmp_path / 'a.ppm')
    render.save_image(img, tmp_path / 'a.png')
    assert (tmp_path / 'a.ppm').read_bytes().startswith(b'P5')
    assert (tmp_path / 'a.png').read_bytes().startswith(b'\x89PNG')


def test_grasp_listing():
    grasps = [gc.PixelGrasp(3, 4, math.pi / 4, 10.0, 0.5),
              gc.PixelGrasp(7, 1, -math.pi / 6, 12.5, 0.9)]
    assert render.format_grasp_list(grasps) == "7 1 -30.00 12.50 0.9000\n3 4 45.00 10.00 0.5000\n"
    assert render.format_grasp_list([]) == ''

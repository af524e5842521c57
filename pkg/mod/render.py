#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""Pictures of predictions: the depth image with grasp rectangles drawn on it, and
false-color panels of the quality and angle maps (red is high quality). Nothing
here modifies the data it is handed.

This module is part of the graspmap toolkit. It is released under the GPL,
either version 3 or (at your option) any later version. See the file LICENSE
for a copy of this license.
"""


import math
import typing

from pathlib import Path

import matplotlib                           # https://matplotlib.org/
import numpy as np

from PIL import Image, ImageDraw            # https://python-pillow.org/

from mod import grasp_core as gc


edge_color = (255, 0, 0)
quality_colormap = 'jet'
angle_colormap = 'hsv'


def depth_to_gray(depth: np.ndarray) -> Image.Image:
    """DEPTH stretched to 8-bit gray, near things bright."""
    lo, hi = float(np.min(depth)), float(np.max(depth))
    scaled = np.zeros_like(depth, dtype=np.float64) if hi == lo else (hi - depth) / (hi - lo)
    return Image.fromarray(np.rint(scaled * 255).astype(np.uint8))


def draw_overlay(depth: np.ndarray,
                 rects: typing.Iterable[gc.GraspRectangle],
                 scale: int = 1) -> Image.Image:
    """RGB image of DEPTH, enlarged SCALE times, with RECTS outlined in red. The two
    gripper-plate edges (P1 -> P2 and P3 -> P0) are drawn twice as thick.
    """
    img = depth_to_gray(depth).convert('RGB')
    if scale != 1:
        img = img.resize((img.width * scale, img.height * scale), Image.NEAREST)
    draw = ImageDraw.Draw(img)
    thin = max(1, scale // 2)
    for r in rects:
        pts = [(float(x * scale + (scale - 1) / 2), float(y * scale + (scale - 1) / 2)) for x, y in gc.corners_from_rect(r)]
        for i in range(4):
            plate = i in (1, 3)
            draw.line([pts[i], pts[(i + 1) % 4]], fill=edge_color, width=2 * thin if plate else thin)
    return img


def colorize(values: np.ndarray,
             colormap: str,
             lo: float = 0.0,
             hi: float = 1.0) -> Image.Image:
    """VALUES mapped through the named matplotlib COLORMAP over [LO, HI]."""
    norm = np.clip((np.nan_to_num(values, nan=lo) - lo) / (hi - lo), 0, 1)
    rgba = matplotlib.colormaps[colormap](norm)
    return Image.fromarray(np.rint(rgba[..., :3] * 255).astype(np.uint8))


def quality_panel(maps: gc.GraspMapSet) -> Image.Image:
    return colorize(maps.quality, quality_colormap)


def angle_panel(maps: gc.GraspMapSet) -> Image.Image:
    """Grasp angle, (-pi/2, pi/2] around the color wheel, dimmed where quality is low."""
    phi = 0.5 * np.arctan2(maps.angle_sin, maps.angle_cos)
    img = np.asarray(colorize(phi, angle_colormap, -math.pi / 2, math.pi / 2), dtype=np.float64)
    shade = 0.25 + 0.75 * np.clip(np.nan_to_num(maps.quality), 0, 1)
    return Image.fromarray(np.rint(img * shade[..., None]).astype(np.uint8))


def map_panels(maps: gc.GraspMapSet,
               scale: int = 1) -> Image.Image:
    """Quality and angle panels side by side."""
    panels = [quality_panel(maps), angle_panel(maps)]
    h, w = maps.shape
    out = Image.new('RGB', (2 * w * scale, h * scale))
    for i, p in enumerate(panels):
        if scale != 1:
            p = p.resize((w * scale, h * scale), Image.NEAREST)
        out.paste(p, (i * w * scale, 0))
    return out


def save_image(img: Image.Image,
               path: typing.Union[str, Path]) -> None:
    """Write IMG; the format follows the file suffix (PNG unless the suffix says PPM)."""
    fmt = 'PPM' if Path(path).suffix.lower() in ('.ppm', '.pnm') else 'PNG'
    img.save(str(path), format=fmt)


def format_grasp_list(grasps: typing.Iterable[gc.PixelGrasp]) -> str:
    """One "u v phi_deg width_px quality" line per grasp, best first."""
    ordered = sorted(grasps, key=lambda g: (-g.quality, g.v, g.u))
    return ''.join(f"{g.u} {g.v} {math.degrees(g.phi):.2f} {g.width_px:.2f} {g.quality:.4f}\n" for g in ordered)

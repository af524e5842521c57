#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""Grasp representations and the geometry that connects them.

A grasp is described three ways in this toolkit:

  * a GraspRectangle: an oriented box in image pixels (center, rotation THETA
    relative to the image's horizontal axis, jaw-opening HEIGHT, gripper WIDTH),
    which is what the Cornell label files hold and what the rectangle metric
    compares;
  * a PixelGrasp: a single pixel (u, v) plus angle, width in pixels and quality,
    which is what the network's output maps decode to;
  * a GraspMapSet: four H x W planes (quality, cos 2*phi, sin 2*phi, normalized
    width) holding a grasp for every pixel at once. These are the network's
    regression targets and outputs.

Pixel centers sit at integer coordinates. u is the column (x) and v the row (y);
planes are indexed [v, u]. Because a parallel-jaw grasp looks the same after a
half turn, all angles are folded into (-pi/2, pi/2], and the angle planes hold
cos and sin of twice the angle so that the encoding is continuous across the
fold.

This module is part of the graspmap toolkit. It is released under the GPL,
either version 3 or (at your option) any later version. See the file LICENSE
for a copy of this license.
"""


import dataclasses
import math
import typing

import numpy as np

from scipy import ndimage

from mod import console
from mod import errors


reference_input_size = 400          # network input edge the defaults below are stated for
default_width_max = 150.0           # width normalizer at reference_input_size, in pixels
default_height_ratio = 0.5          # predicted rectangle height / width
default_jaccard_threshold = 0.25
default_angle_threshold = math.pi / 6


def scaled_width_max(input_size: int) -> float:
    """The width normalizer for a network whose input is INPUT_SIZE pixels square:
    default_width_max, scaled in proportion to the input edge.
    """
    return default_width_max * input_size / reference_input_size


def default_min_separation(input_size: int) -> int:
    """Minimum pixel distance between top-k grasp centers: 2 px at desk scale,
    10 px at 400 x 400.
    """
    return max(2, int(round(10 * input_size / reference_input_size)))


def fold_angle(angle: float) -> float:
    """Fold ANGLE (radians) into (-pi/2, pi/2]."""
    ret = (angle + math.pi / 2) % math.pi - math.pi / 2
    if ret <= -math.pi / 2:
        ret = math.pi / 2
    return ret


@dataclasses.dataclass
class GraspRectangle:
    """Oriented grasp rectangle. THETA is folded into (-pi/2, pi/2] on creation."""
    center_x: float
    center_y: float
    theta: float
    height: float
    width: float

    def __post_init__(self) -> None:
        for name in ('center_x', 'center_y', 'theta', 'height', 'width'):
            if not math.isfinite(getattr(self, name)):
                raise errors.ParameterRangeError(name, getattr(self, name), "finite")
        if self.height <= 0:
            raise errors.ParameterRangeError('height', self.height, "> 0")
        if self.width <= 0:
            raise errors.ParameterRangeError('width', self.width, "> 0")
        self.theta = fold_angle(self.theta)

    @property
    def area(self) -> float:
        return self.width * self.height

    def corners(self) -> np.ndarray:
        return corners_from_rect(self)


@dataclasses.dataclass
class PixelGrasp:
    """One grasp read off the maps at pixel column U, row V. Only the lower bounds of
    U and V are checked here; the upper bounds (U < W, V < H) need the map shape and
    are checked where a grasp is read off a GraspMapSet.
    """
    u: int
    v: int
    phi: float
    width_px: float
    quality: float

    def __post_init__(self) -> None:
        if self.u < 0 or self.v < 0:
            raise errors.ParameterRangeError('(u, v)', (self.u, self.v), "non-negative")
        if not 0 <= self.quality <= 1:
            raise errors.ParameterRangeError('quality', self.quality, "[0, 1]")


@dataclasses.dataclass
class GraspMapSet:
    """The four grasp-map planes. All share one H x W shape."""
    quality: np.ndarray
    angle_cos: np.ndarray
    angle_sin: np.ndarray
    width: np.ndarray

    def __post_init__(self) -> None:
        if self.quality.ndim != 2:
            raise errors.ShapeMismatchError('GraspMapSet', 'quality rank', 2, self.quality.ndim)
        for name in ('angle_cos', 'angle_sin', 'width'):
            if getattr(self, name).shape != self.quality.shape:
                raise errors.ShapeMismatchError('GraspMapSet', f"{name} shape", self.quality.shape, getattr(self, name).shape)

    @property
    def shape(self) -> typing.Tuple[int, int]:
        return self.quality.shape

    def planes(self) -> typing.Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return self.quality, self.angle_cos, self.angle_sin, self.width

    def copy(self) -> 'GraspMapSet':
        return GraspMapSet(*[p.copy() for p in self.planes()])


@dataclasses.dataclass
class LossWeights:
    lambda_q: float = 5.0
    lambda_phi: float = 3.0
    lambda_w: float = 4.0

    def __post_init__(self) -> None:
        for name in ('lambda_q', 'lambda_phi', 'lambda_w'):
            if not getattr(self, name) >= 0:
                raise errors.ParameterRangeError(name, getattr(self, name), ">= 0")


# Rectangle <-> corners.
def corners_from_rect(rect: GraspRectangle) -> np.ndarray:
    """The 4 x 2 array of (x, y) corners of RECT in Cornell order: P0 -> P1 runs
    along the gripper width, P1 -> P2 along the jaw opening.
    """
    d = np.array([math.cos(rect.theta), math.sin(rect.theta)])
    n = np.array([-math.sin(rect.theta), math.cos(rect.theta)])
    c = np.array([rect.center_x, rect.center_y])
    hw, hh = rect.width / 2, rect.height / 2
    return np.array([c - hw * d - hh * n,
                     c + hw * d - hh * n,
                     c + hw * d + hh * n,
                     c - hw * d + hh * n])


def rect_from_corners(corners: typing.Any) -> GraspRectangle:
    """Fit a GraspRectangle to CORNERS, four ordered (x, y) points whose first edge
    P0 -> P1 is a gripper-plate edge. Slightly non-rectangular quadrilaterals are
    accepted: the center is the mean of the corners, THETA the direction of P0 -> P1,
    WIDTH its length, HEIGHT the length of P1 -> P2.
    """
    pts = np.asarray(corners, dtype=np.float64)
    if pts.shape != (4, 2):
        raise errors.ShapeMismatchError('rect_from_corners', 'corners', (4, 2), pts.shape)
    if not np.all(np.isfinite(pts)):
        raise errors.ParameterRangeError('corners', pts.tolist(), "finite coordinates")
    edge_w = pts[1] - pts[0]
    edge_h = pts[2] - pts[1]
    width = math.hypot(*edge_w)
    height = math.hypot(*edge_h)
    if width == 0 or height == 0:
        raise errors.ParameterRangeError('edge length', 0.0, "> 0 (degenerate rectangle)")
    center = pts.mean(axis=0)
    return GraspRectangle(float(center[0]), float(center[1]), math.atan2(edge_w[1], edge_w[0]), height, width)


# Rasterization.
def empty_maps(height: int,
               width: int,
               dtype: typing.Any = np.float64) -> GraspMapSet:
    """All-zero maps of HEIGHT x WIDTH pixels."""
    return GraspMapSet(*[np.zeros((height, width), dtype=dtype) for _ in range(4)])


def center_third_mask(rect: GraspRectangle,
                      shape: typing.Tuple[int, int]) -> np.ndarray:
    """Boolean H x W mask of the pixels inside the center third of RECT: full gripper
    width, one third of the jaw-opening height. Membership is half-open in the
    rectangle's own frame (-w/2 <= along < w/2, -h/6 <= across < h/6).
    """
    h, w = shape
    mask = np.zeros((h, w), dtype=bool)
    c, s = math.cos(rect.theta), math.sin(rect.theta)
    reach = abs(c) * rect.width / 2 + abs(s) * rect.height / 6, abs(s) * rect.width / 2 + abs(c) * rect.height / 6
    x0, x1 = max(0, math.floor(rect.center_x - reach[0])), min(w, math.ceil(rect.center_x + reach[0]) + 1)
    y0, y1 = max(0, math.floor(rect.center_y - reach[1])), min(h, math.ceil(rect.center_y + reach[1]) + 1)
    if x0 >= x1 or y0 >= y1:
        return mask
    ys, xs = np.mgrid[y0:y1, x0:x1]
    dx, dy = xs - rect.center_x, ys - rect.center_y
    along = dx * c + dy * s
    across = -dx * s + dy * c
    mask[y0:y1, x0:x1] = ((-rect.width / 2 <= along) & (along < rect.width / 2)
                          & (-rect.height / 6 <= across) & (across < rect.height / 6))
    return mask


def rasterize_rect_to_maps(rect: GraspRectangle,
                           maps: GraspMapSet,
                           width_max: float) -> GraspMapSet:
    """Stamp RECT into MAPS (in place) over its center-third mask: quality 1, the
    doubled-angle cos and sin, and the width divided by WIDTH_MAX and clamped to
    [0, 1]. Pixels outside the mask are untouched; off-image parts of the mask are
    clipped. Returns MAPS.
    """
    if not width_max > 0:
        raise errors.ParameterRangeError('width_max', width_max, "> 0")
    mask = center_third_mask(rect, maps.shape)
    maps.quality[mask] = 1
    maps.angle_cos[mask] = math.cos(2 * rect.theta)
    maps.angle_sin[mask] = math.sin(2 * rect.theta)
    maps.width[mask] = min(max(rect.width / width_max, 0.0), 1.0)
    return maps


def rasterize_rects(rects: typing.Iterable[GraspRectangle],
                    height: int,
                    width: int,
                    width_max: float,
                    dtype: typing.Any = np.float64) -> GraspMapSet:
    """Fresh HEIGHT x WIDTH maps with every rectangle in RECTS stamped in order, so
    later rectangles overwrite earlier ones where their masks overlap.
    """
    maps = empty_maps(height, width, dtype)
    for r in rects:
        rasterize_rect_to_maps(r, maps, width_max)
    return maps


def smooth_quality(maps: GraspMapSet,
                   sigma: float = 0.0) -> GraspMapSet:
    """Gaussian-smooth the quality plane with standard deviation SIGMA pixels before
    decoding. SIGMA 0 returns MAPS as is.
    """
    if sigma < 0:
        raise errors.ParameterRangeError('sigma', sigma, ">= 0")
    if sigma == 0:
        return maps
    return GraspMapSet(ndimage.gaussian_filter(maps.quality, sigma=sigma, mode='nearest'),
                       maps.angle_cos, maps.angle_sin, maps.width)


# Decoding.
def grasp_at(maps: GraspMapSet,
             v: int,
             u: int,
             width_max: float) -> PixelGrasp:
    """The grasp MAPS hold at row V, column U."""
    h, w = maps.shape
    if not (0 <= v < h and 0 <= u < w):
        raise errors.ParameterRangeError('(u, v)', (u, v), f"inside the {w} x {h} maps")
    phi = fold_angle(0.5 * math.atan2(float(maps.angle_sin[v, u]), float(maps.angle_cos[v, u])))
    return PixelGrasp(int(u), int(v), phi, float(maps.width[v, u]) * width_max, float(maps.quality[v, u]))


def decode_best_grasp(maps: GraspMapSet,
                      width_max: float) -> PixelGrasp:
    """The grasp at the highest-quality pixel of MAPS. Ties go to the first pixel in
    row-major order; NaN qualities are ignored.
    """
    q = maps.quality
    if q.size == 0:
        raise errors.EmptyInputError("decode_best_grasp: empty maps")
    if np.all(np.isnan(q)):
        raise errors.NumericalError('decode_best_grasp', 'all-NaN quality plane')
    v, u = divmod(int(np.nanargmax(q)), q.shape[1])
    return grasp_at(maps, v, u, width_max)


def _shoulder_pixels(q: np.ndarray) -> np.ndarray:
    """Pixels joined to a strictly higher pixel through 8-connected pixels of their
    own value. None of them can belong to a local maximum.
    """
    h, w = q.shape
    blocked = q < ndimage.maximum_filter(q, size=3, mode='constant', cval=-np.inf)
    padded = np.pad(q, 1, mode='constant', constant_values=np.nan)
    shifts = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if dy or dx]
    same = [padded[1 + dy:1 + dy + h, 1 + dx:1 + dx + w] == q for dy, dx in shifts]
    while True:
        grown = blocked.copy()
        padded_blocked = np.pad(blocked, 1, mode='constant', constant_values=False)
        for (dy, dx), equal in zip(shifts, same):
            grown |= padded_blocked[1 + dy:1 + dy + h, 1 + dx:1 + dx + w] & equal
        if np.array_equal(grown, blocked):
            return blocked
        blocked = grown


def local_maxima(quality: np.ndarray,
                 q_threshold: float = 0.0) -> typing.List[typing.Tuple[float, int, int]]:
    """Local maxima of the QUALITY plane at or above Q_THRESHOLD, as (quality, v, u)
    triples. A maximum is an 8-connected plateau of equal values with nothing higher
    around it (a single pixel strictly above its neighbours is the usual case). A
    plateau that runs into a higher pixel anywhere along its border is a shoulder,
    not a maximum. Each plateau counts once, represented by its pixel nearest the
    plateau's centroid (ties row-major).
    """
    q = np.where(np.isnan(quality), -np.inf, quality)
    candidates = ~_shoulder_pixels(q) & (q >= q_threshold)
    labels, count = ndimage.label(candidates, structure=np.ones((3, 3), dtype=int))
    if count == 0:
        return list()
    vs, us = np.nonzero(labels)                     # row-major order
    group_of = labels[vs, us]
    order = np.argsort(group_of, kind='stable')
    vs, us, group_of = vs[order], us[order], group_of[order]
    starts = np.searchsorted(group_of, np.arange(1, count + 1))
    ends = np.append(starts[1:], len(group_of))
    ret = list()
    for start, end in zip(starts, ends):
        gv, gu = vs[start:end], us[start:end]
        dist = (gv - gv.mean()) ** 2 + (gu - gu.mean()) ** 2
        pick = int(np.argmin(dist))
        ret.append((float(q[gv[pick], gu[pick]]), int(gv[pick]), int(gu[pick])))
    return ret


def decode_top_k(maps: GraspMapSet,
                 k: int,
                 q_threshold: float,
                 min_separation: float,
                 width_max: float) -> typing.List[PixelGrasp]:
    """Up to K grasps at local maxima of the quality plane with quality >= Q_THRESHOLD,
    greedily chosen in order of descending quality (ties row-major) so that no two
    centers are closer than MIN_SEPARATION pixels. Returns fewer than K (possibly
    none) when the maps cannot supply K. Thresholds above 1 select nothing.
    """
    if k < 1:
        raise errors.ParameterRangeError('k', k, ">= 1")
    if q_threshold < 0:
        raise errors.ParameterRangeError('q_threshold', q_threshold, ">= 0")
    if min_separation < 0:
        raise errors.ParameterRangeError('min_separation', min_separation, ">= 0")
    peaks = sorted(local_maxima(maps.quality, q_threshold), key=lambda p: (-p[0], p[1], p[2]))
    chosen = list()
    for quality, v, u in peaks:
        if all(math.hypot(v - cv, u - cu) >= min_separation for _, cv, cu in chosen):
            chosen.append((quality, v, u))
            if len(chosen) == k:
                break
    console.debug_print(f"decode_top_k: {len(peaks)} peaks over threshold {q_threshold}, kept {len(chosen)}", 4)
    return [grasp_at(maps, v, u, width_max) for _, v, u in chosen]


def pixel_grasp_to_rectangle(g: PixelGrasp,
                             height_ratio: float = default_height_ratio) -> GraspRectangle:
    """The rectangle the metric scores for grasp G: centered on its pixel, rotated by
    its angle, WIDTH_PX wide and WIDTH_PX * HEIGHT_RATIO high.
    """
    if not g.width_px > 0:
        raise errors.ParameterRangeError('width_px', g.width_px, "> 0")
    if not height_ratio > 0:
        raise errors.ParameterRangeError('height_ratio', height_ratio, "> 0")
    return GraspRectangle(float(g.u), float(g.v), g.phi, g.width_px * height_ratio, g.width_px)


# Polygons and the rectangle metric.
def _signed_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def polygon_area(poly: typing.Any) -> float:
    """Shoelace area of the simple polygon POLY (a sequence of (x, y) vertices)."""
    pts = np.asarray(poly, dtype=np.float64).reshape(-1, 2)
    if len(pts) < 3:
        return 0.0
    return abs(_signed_area(pts))


def _counterclockwise(poly: np.ndarray) -> np.ndarray:
    return poly if _signed_area(poly) >= 0 else poly[::-1]


def clip_polygon(subject: typing.Any,
                 clip: typing.Any) -> np.ndarray:
    """Sutherland-Hodgman clip of polygon SUBJECT against the convex polygon CLIP.
    Returns the vertices of the intersection (an empty 0 x 2 array if the two do not
    overlap). Points on or within rounding distance of a clip edge count as inside.
    """
    out = _counterclockwise(np.asarray(subject, dtype=np.float64).reshape(-1, 2))
    clip = _counterclockwise(np.asarray(clip, dtype=np.float64).reshape(-1, 2))
    scale = float(np.max(np.abs(np.concatenate([out, clip])), initial=1.0))
    tolerance = 1e-12 * scale * scale

    cp1 = clip[-1]
    for cp2 in clip:
        if len(out) == 0:
            break
        edge = cp2 - cp1
        side = edge[0] * (out[:, 1] - cp1[1]) - edge[1] * (out[:, 0] - cp1[0])
        inside = side >= -tolerance
        kept = list()
        for i in range(len(out)):
            j = i - 1                               # previous vertex, wrapping
            if inside[i]:
                if not inside[j]:
                    kept.append(out[j] + (out[i] - out[j]) * (side[j] / (side[j] - side[i])))
                kept.append(out[i])
            elif inside[j]:
                kept.append(out[j] + (out[i] - out[j]) * (side[j] / (side[j] - side[i])))
        out = np.array(kept).reshape(-1, 2)
        cp1 = cp2
    return out


def jaccard(a: GraspRectangle,
            b: GraspRectangle) -> float:
    """Intersection over union of the areas of rectangles A and B."""
    if a == b:
        return 1.0
    inter = polygon_area(clip_polygon(a.corners(), b.corners()))
    union = a.area + b.area - inter
    return min(max(inter / union, 0.0), 1.0)


def angle_distance(phi_a: float,
                   phi_b: float) -> float:
    """Smallest difference between two grasp angles, taking the half-turn symmetry
    into account. Always in [0, pi/2].
    """
    d = abs(phi_a - phi_b) % math.pi
    return min(d, math.pi - d)


def rectangle_metric_match(pred: GraspRectangle,
                           ground_truth: typing.Sequence[GraspRectangle],
                           jaccard_threshold: float = default_jaccard_threshold,
                           angle_threshold: float = default_angle_threshold) -> bool:
    """True iff some rectangle in GROUND_TRUTH is within ANGLE_THRESHOLD (30 degrees)
    of PRED's angle and overlaps it with Jaccard index strictly above
    JACCARD_THRESHOLD.
    """
    if not ground_truth:
        raise errors.EmptyInputError("rectangle_metric_match: no ground-truth rectangles")
    for g in ground_truth:
        if angle_distance(pred.theta, g.theta) < angle_threshold and jaccard(pred, g) > jaccard_threshold:
            return True
    return False

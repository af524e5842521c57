#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""Getting depth images and their grasp rectangles into memory, and preparing them
for the network.

Two on-disk layouts are understood:

  * the Cornell grasp dataset as distributed: for each image number NNNN, an
    ASCII point cloud pcdNNNN.txt whose points carry a row-major pixel index, and
    a file pcdNNNNcpos.txt of positive grasp rectangles, four "x y" corner lines
    per rectangle. Images of the same physical object are grouped through a z.txt
    mapping file (image number, object number, ...) if one is present, and by
    filename prefix otherwise;
  * the portable layout this toolkit writes: 16-bit grayscale PNGs holding depth in
    millimeters (0 meaning "no reading"), rectangle files in the Cornell corner
    format, and a manifest.jsonl listing id, object_id, depth_path and rects_path
    for every sample.

Also here: hole filling for depth images, the random crop/zoom/rotate
augmentation, fold splitting for cross-validation, and a generator of synthetic
scenes (raised bars on a flat table) whose correct grasps are known exactly.

This module is part of the graspmap toolkit. It is released under the GPL,
either version 3 or (at your option) any later version. See the file LICENSE
for a copy of this license.
"""


import dataclasses
import json
import math
import re
import typing

from pathlib import Path

import numpy as np

from PIL import Image                       # https://python-pillow.org/
from scipy import ndimage

from mod import console
from mod import errors
from mod import grasp_core as gc


cornell_image_shape = (480, 640)            # rows, columns
cornell_z_scale = 0.001                     # Cornell point clouds are in millimeters

synthetic_table_depth = 0.70                # meters
synthetic_bar_depth = 0.60
synthetic_min_size = 64

max_zoom_out = 0.8
max_rotation = math.radians(20)

manifest_name = 'manifest.jsonl'
manifest_fields = ('id', 'object_id', 'depth_path', 'rects_path')

IMAGE_WISE, OBJECT_WISE = 'image', 'object'
split_modes = (IMAGE_WISE, OBJECT_WISE)


@dataclasses.dataclass
class DepthImage:
    """Depth in meters, plus a mask of the pixels where the sensor returned something."""
    depth: np.ndarray
    valid: np.ndarray

    def __post_init__(self) -> None:
        if self.depth.ndim != 2:
            raise errors.ShapeMismatchError('DepthImage', 'depth rank', 2, self.depth.ndim)
        if self.valid.shape != self.depth.shape:
            raise errors.ShapeMismatchError('DepthImage', 'valid shape', self.depth.shape, self.valid.shape)
        self.valid = self.valid.astype(bool, copy=False)
        if not np.all(np.isfinite(self.depth[self.valid])):
            raise errors.NumericalError('DepthImage', 'non-finite depth on a valid pixel')

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def shape(self) -> typing.Tuple[int, int]:
        return self.depth.shape

    @classmethod
    def full(cls, depth: np.ndarray) -> 'DepthImage':
        """A DepthImage with every pixel of DEPTH marked valid."""
        return cls(np.asarray(depth, dtype=np.float64), np.ones(np.shape(depth), dtype=bool))


@dataclasses.dataclass
class Sample:
    id: str
    object_id: str
    depth: DepthImage
    rects: typing.List[gc.GraspRectangle]
    meta: typing.Dict[str, typing.Any] = dataclasses.field(default_factory=dict)


@dataclasses.dataclass
class AugmentParams:
    """One draw of the augmentation: a rotation about the image center, then a zoom
    (a uniform scale by ZOOM <= 1), then a crop whose top-left corner sits at
    CROP_OFFSET (x, y) in the zoomed image.
    """
    zoom: float = 1.0
    rotation: float = 0.0
    crop_offset: typing.Tuple[float, float] = (0.0, 0.0)
    seed: int = 0

    def __post_init__(self) -> None:
        if not max_zoom_out <= self.zoom <= 1.0:
            raise errors.ParameterRangeError('zoom', self.zoom, f"[{max_zoom_out}, 1.0]")
        if not abs(self.rotation) <= max_rotation + 1e-12:
            raise errors.ParameterRangeError('rotation', self.rotation, f"[-{max_rotation:.6f}, {max_rotation:.6f}] radians")
        self.crop_offset = (float(self.crop_offset[0]), float(self.crop_offset[1]))

    @classmethod
    def identity(cls, shape: typing.Tuple[int, int],
                 out_size: int) -> 'AugmentParams':
        """No rotation, no zoom, and a crop of OUT_SIZE pixels centered (rounding down)
        in an image of SHAPE.
        """
        h, w = shape
        return cls(1.0, 0.0, ((w - out_size) // 2, (h - out_size) // 2))

    @classmethod
    def draw(cls, rng: np.random.Generator,
             shape: typing.Tuple[int, int],
             out_size: int) -> 'AugmentParams':
        """Random parameters inside the legal ranges for an image of SHAPE cropped to
        OUT_SIZE. The zoom is drawn from [max(0.8, OUT_SIZE / min(SHAPE)), 1] so that
        the crop always fits, and the crop offset is an integer pixel position inside
        the zoomed image.
        """
        h, w = shape
        if out_size > min(h, w):
            raise errors.ParameterRangeError('out_size', out_size, f"<= {min(h, w)}")
        zoom = float(rng.uniform(max(max_zoom_out, out_size / min(h, w)), 1.0))
        rotation = float(rng.uniform(-max_rotation, max_rotation))
        span_x = max(0, math.floor(zoom * (w - 1) - (out_size - 1)))
        span_y = max(0, math.floor(zoom * (h - 1) - (out_size - 1)))
        offset = (int(rng.integers(0, span_x + 1)), int(rng.integers(0, span_y + 1)))
        return cls(zoom, rotation, offset, int(rng.integers(0, 2 ** 31)))


# Parsing.
def parse_cornell_rects(text: str,
                        path: typing.Optional[typing.Union[str, Path]] = None) -> typing.List[gc.GraspRectangle]:
    """Parse the contents of a Cornell rectangle file: "x y" corner lines, four per
    rectangle. Blank lines are ignored. Rectangles with NaN coordinates are skipped
    (with a warning). PATH only decorates error messages.
    """
    path = None if path is None else str(path)
    points = list()
    for lineno, line in enumerate(text.splitlines(), start=1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) != 2:
            raise errors.FormatError(f"expected 2 coordinates, found {len(fields)}", path, lineno)
        try:
            points.append((lineno, float(fields[0]), float(fields[1])))
        except ValueError:
            raise errors.FormatError(f"non-numeric coordinate in {line.strip()!r}", path, lineno)
    if len(points) % 4:
        first = points[len(points) - len(points) % 4][0]
        raise errors.FormatError(f"incomplete rectangle: {len(points) % 4} of 4 corner lines", path, first)

    ret, skipped = list(), 0
    for i in range(0, len(points), 4):
        corners = np.array([(x, y) for _, x, y in points[i:i + 4]])
        if np.any(np.isnan(corners)):
            skipped += 1
            continue
        try:
            ret.append(gc.rect_from_corners(corners))
        except errors.ParameterRangeError as errr:
            raise errors.FormatError(f"bad rectangle: {errr}", path, points[i][0])
    if skipped:
        console.debug_print(f"WARNING! skipped {skipped} rectangle(s) with NaN coordinates in {path or 'rectangle text'}", 1)
    return ret


def format_cornell_rects(rects: typing.Iterable[gc.GraspRectangle]) -> str:
    """The Cornell corner-line text for RECTS; parse_cornell_rects() reads it back."""
    lines = list()
    for r in rects:
        for x, y in gc.corners_from_rect(r):
            lines.append(f"{x:.6f} {y:.6f}")
    return ''.join(l + '\n' for l in lines)


def parse_ascii_pcd_to_depth(text: str,
                             out_h: int = cornell_image_shape[0],
                             out_w: int = cornell_image_shape[1],
                             z_scale: float = 1.0,
                             path: typing.Optional[typing.Union[str, Path]] = None) -> DepthImage:
    """Build an OUT_H x OUT_W DepthImage from the contents of an ASCII .pcd point cloud
    whose FIELDS include z and a row-major pixel index. Each point's z, multiplied
    by Z_SCALE, becomes the depth of pixel (index // OUT_W, index % OUT_W); pixels no
    point refers to, and points with non-finite z, stay invalid.
    """
    path = None if path is None else str(path)
    lines = text.splitlines()
    fields, data_line = None, None
    for lineno, line in enumerate(lines, start=1):
        tokens = line.split()
        if not tokens or tokens[0].startswith('#'):
            continue
        key = tokens[0].upper()
        if key == 'FIELDS':
            fields = [t.lower() for t in tokens[1:]]
        elif key == 'DATA':
            if len(tokens) < 2 or tokens[1].lower() != 'ascii':
                raise errors.FormatError(f"unsupported DATA encoding {' '.join(tokens[1:])!r}; only ascii is readable", path, lineno)
            data_line = lineno
            break
    if data_line is None:
        raise errors.FormatError("no DATA line in point-cloud header", path)
    if fields is None:
        raise errors.FormatError("no FIELDS line in point-cloud header", path)
    for needed in ('z', 'index'):
        if needed not in fields:
            raise errors.FormatError(f"point cloud has no {needed!r} field (fields: {' '.join(fields)})", path)
    z_col, index_col = fields.index('z'), fields.index('index')

    depth = np.zeros((out_h, out_w), dtype=np.float64)
    valid = np.zeros((out_h, out_w), dtype=bool)
    flat_depth, flat_valid = depth.reshape(-1), valid.reshape(-1)
    for lineno, line in enumerate(lines[data_line:], start=data_line + 1):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) != len(fields):
            raise errors.FormatError(f"expected {len(fields)} values, found {len(tokens)}", path, lineno)
        try:
            z, index = float(tokens[z_col]), int(float(tokens[index_col]))
        except ValueError:
            raise errors.FormatError(f"non-numeric point value in {line.strip()!r}", path, lineno)
        if not 0 <= index < out_h * out_w:
            raise errors.FormatError(f"pixel index {index} outside a {out_h} x {out_w} image", path, lineno)
        if math.isfinite(z):
            flat_depth[index] = z * z_scale
            flat_valid[index] = True
    return DepthImage(depth, valid)


# Hole filling and normalization.
def inpaint_depth(img: DepthImage) -> DepthImage:
    """Fill every invalid pixel of IMG by repeated one-pixel dilation of the valid
    region over the 4-neighbourhood: each round, an invalid pixel with a valid
    neighbour takes that neighbour's value, checking up, down, left, right in that
    order. Valid pixels are never changed. Returns a new, all-valid DepthImage.
    """
    if not np.any(img.valid):
        raise errors.EmptyInputError("inpaint_depth: image has no valid pixels")
    depth, valid = img.depth.copy(), img.valid.copy()
    rounds = 0
    while not np.all(valid):
        filled = np.zeros_like(valid)
        new = np.zeros_like(depth)
        for dv, du in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            nb_valid = np.zeros_like(valid)
            nb_depth = np.zeros_like(depth)
            dst_v = slice(max(0, -dv), valid.shape[0] - max(0, dv))
            src_v = slice(max(0, dv), valid.shape[0] - max(0, -dv))
            dst_u = slice(max(0, -du), valid.shape[1] - max(0, du))
            src_u = slice(max(0, du), valid.shape[1] - max(0, -du))
            nb_valid[dst_v, dst_u] = valid[src_v, src_u]
            nb_depth[dst_v, dst_u] = depth[src_v, src_u]
            take = nb_valid & ~valid & ~filled
            new[take] = nb_depth[take]
            filled |= take
        depth[filled] = new[filled]
        valid |= filled
        rounds += 1
    if rounds:
        console.debug_print(f"inpaint_depth: filled {int(np.sum(~img.valid))} pixels in {rounds} rounds", 4)
    return DepthImage(depth, valid)


def normalize_depth(depth: np.ndarray) -> np.ndarray:
    """Network input from a depth array: subtract the image mean, clamp to [-1, 1]."""
    return np.clip(depth - depth.mean(), -1.0, 1.0)


# Augmentation and cropping.
def _forward_affine(p: AugmentParams,
                    shape: typing.Tuple[int, int]) -> typing.Tuple[np.ndarray, np.ndarray]:
    """(M, t) such that an (x, y) point of the source image lands on M @ xy + t."""
    h, w = shape
    c = np.array([(w - 1) / 2, (h - 1) / 2])
    cos, sin = math.cos(p.rotation), math.sin(p.rotation)
    m = p.zoom * np.array([[cos, -sin], [sin, cos]])
    t = p.zoom * c - m @ c - np.array(p.crop_offset)
    return m, t


def augment_sample(s: Sample,
                   p: AugmentParams,
                   out_size: int) -> Sample:
    """Rotate S about its image center by P.rotation, scale it by P.zoom, and cut out
    an OUT_SIZE x OUT_SIZE window at P.crop_offset. The depth is resampled with
    nearest-neighbour lookup (edge pixels are replicated where the window reaches
    past the source). Rectangles go through the same affine map and are refit;
    those whose centers leave the window are dropped.
    """
    h, w = s.depth.shape
    if not 1 <= out_size <= p.zoom * min(h, w) + 1e-9:
        raise errors.ParameterRangeError('out_size', out_size, f"[1, {p.zoom * min(h, w):.2f}] for this image and zoom")
    m, t = _forward_affine(p, (h, w))
    m_inv = np.linalg.inv(m)
    swap = np.array([[0, 1], [1, 0]])               # (x, y) <-> (row, column)
    matrix = swap @ m_inv @ swap
    offset = swap @ (-m_inv @ t)
    depth = ndimage.affine_transform(s.depth.depth, matrix, offset=offset, output_shape=(out_size, out_size),
                                     order=0, mode='nearest')
    valid = ndimage.affine_transform(s.depth.valid.astype(np.uint8), matrix, offset=offset,
                                     output_shape=(out_size, out_size), order=0, mode='nearest').astype(bool)

    rects = list()
    for r in s.rects:
        moved = gc.rect_from_corners(gc.corners_from_rect(r) @ m.T + t)
        if -0.5 <= moved.center_x < out_size - 0.5 and -0.5 <= moved.center_y < out_size - 0.5:
            rects.append(moved)
    if s.rects and not rects:
        raise errors.EmptyInputError(f"augment_sample: every rectangle of sample {s.id} left the crop")
    meta = dict(s.meta)
    meta['augment'] = dataclasses.asdict(p)
    return Sample(s.id, s.object_id, DepthImage(depth, valid), rects, meta)


def center_crop_sample(s: Sample,
                       out_size: int) -> Sample:
    """S cut down to its central OUT_SIZE x OUT_SIZE window."""
    return augment_sample(s, AugmentParams.identity(s.depth.shape, out_size), out_size)


def fit_depth_to_size(img: DepthImage,
                      out_size: int) -> DepthImage:
    """IMG brought to OUT_SIZE x OUT_SIZE for prediction: images with a side shorter
    than OUT_SIZE are first scaled up (nearest neighbour) so that the short side
    matches, then the center is cropped out.
    """
    h, w = img.shape
    depth, valid = img.depth, img.valid
    if min(h, w) < out_size:
        factor = out_size / min(h, w)
        depth = ndimage.zoom(depth, factor, order=0, mode='nearest', grid_mode=True)
        valid = ndimage.zoom(valid.astype(np.uint8), factor, order=0, mode='nearest', grid_mode=True).astype(bool)
        h, w = depth.shape
    top, left = (h - out_size) // 2, (w - out_size) // 2
    return DepthImage(depth[top:top + out_size, left:left + out_size].copy(),
                      valid[top:top + out_size, left:left + out_size].copy())


# Synthetic scenes.
def _bar_mask(shape: typing.Tuple[int, int],
              center: typing.Tuple[float, float],
              angle: float,
              length: float,
              thickness: float) -> np.ndarray:
    ys, xs = np.mgrid[0:shape[0], 0:shape[1]]
    dx, dy = xs - center[0], ys - center[1]
    along = dx * math.cos(angle) + dy * math.sin(angle)
    across = -dx * math.sin(angle) + dy * math.cos(angle)
    return (np.abs(along) <= length / 2) & (np.abs(across) <= thickness / 2)


def _bar_rects(center: typing.Tuple[float, float],
               angle: float,
               length: float,
               thickness: float,
               size: int) -> typing.List[gc.GraspRectangle]:
    """Ground-truth grasps across a bar: the gripper spans the bar's thickness plus a
    margin, and the grasp centers step along the middle half of the bar every half
    thickness. Rectangles are 1.5 thicknesses high, so their center thirds abut and
    the rasterized quality band along the bar has no gaps.
    """
    gripper = thickness + 0.06 * size
    theta = gc.fold_angle(angle + math.pi / 2)
    steps = np.arange(-length / 4, length / 4 + 1e-9, thickness / 2)
    return [gc.GraspRectangle(center[0] + s * math.cos(angle), center[1] + s * math.sin(angle),
                              theta, 1.5 * thickness, gripper) for s in steps]


def make_synthetic(count: int,
                   size: int,
                   seed: int,
                   bars: int = 1,
                   images_per_object: int = 1) -> typing.List[Sample]:
    """COUNT synthetic SIZE x SIZE scenes: a flat table at 0.70 m with BARS raised
    bars (top surface at 0.60 m) lying on it. Bar length is drawn from
    [0.4, 0.8] * SIZE (shrunk by sqrt(BARS) in multi-bar scenes), thickness from
    [0.08, 0.2] * SIZE, orientation uniformly. Every bar contributes ground-truth
    rectangles across it. Consecutive groups of IMAGES_PER_OBJECT scenes share their
    bar dimensions and an object_id, and differ in pose. Deterministic for a given
    SEED.
    """
    if size < synthetic_min_size:
        raise errors.ParameterRangeError('size', size, f">= {synthetic_min_size}")
    if count < 0:
        raise errors.ParameterRangeError('count', count, ">= 0")
    if bars < 1 or images_per_object < 1:
        raise errors.ParameterRangeError('bars/images_per_object', (bars, images_per_object), ">= 1")
    rng = np.random.default_rng(seed)
    shrink = 1 / math.sqrt(bars)
    mid = (size - 1) / 2
    ret, dims = list(), None
    for i in range(count):
        if i % images_per_object == 0:
            dims = [(rng.uniform(0.4, 0.8) * size * shrink, rng.uniform(0.08, 0.2) * size) for _ in range(bars)]
        depth = np.full((size, size), synthetic_table_depth)
        occupied = np.zeros((size, size), dtype=bool)
        rects, angles, centers = list(), list(), list()
        for length, thickness in dims:
            for attempt in range(1000):
                angle = gc.fold_angle(rng.uniform(-math.pi / 2, math.pi / 2))
                reach_x = abs(math.cos(angle)) * length / 2 + abs(math.sin(angle)) * thickness / 2
                reach_y = abs(math.sin(angle)) * length / 2 + abs(math.cos(angle)) * thickness / 2
                slack_x, slack_y = max(0.0, mid - reach_x - 2), max(0.0, mid - reach_y - 2)
                if bars == 1:
                    slack_x, slack_y = min(slack_x, 0.1 * size), min(slack_y, 0.1 * size)
                center = (mid + rng.uniform(-slack_x, slack_x), mid + rng.uniform(-slack_y, slack_y))
                mask = _bar_mask((size, size), center, angle, length, thickness)
                if not np.any(ndimage.binary_dilation(mask, iterations=3) & occupied):
                    break
            else:
                console.debug_print(f"WARNING! synthetic scene {i}: no room for another bar; scene has {len(angles)} bar(s)", 1)
                continue
            occupied |= mask
            depth[mask] = synthetic_bar_depth
            rects.extend(_bar_rects(center, angle, length, thickness, size))
            angles.append(angle)
            centers.append(center)
        ret.append(Sample(f"syn{i:05d}", f"obj{i // images_per_object:04d}", DepthImage.full(depth), rects,
                          {'bar_angles': angles, 'bar_centers': centers}))
    return ret


# Cross-validation folds.
def split_folds(samples: typing.Sequence[Sample],
                mode: str,
                folds: int,
                seed: int) -> typing.List[typing.Tuple[typing.List[int], typing.List[int]]]:
    """(train, test) sample-index lists for each of FOLDS folds. IMAGE_WISE shuffles
    the samples themselves into near-equal test folds; OBJECT_WISE shuffles the
    distinct object_ids, so that no object is ever on both sides of a fold.
    """
    if mode not in split_modes:
        raise errors.ParameterRangeError('split', mode, str(split_modes))
    if folds < 2:
        raise errors.ParameterRangeError('folds', folds, ">= 2")
    rng = np.random.default_rng(seed)
    n = len(samples)
    if mode == IMAGE_WISE:
        if n < folds:
            raise errors.ParameterRangeError('folds', folds, f"<= {n} (number of samples)")
        tests = [sorted(int(i) for i in chunk) for chunk in np.array_split(rng.permutation(n), folds)]
    else:
        objects = sorted({s.object_id for s in samples})
        if len(objects) < folds:
            raise errors.ParameterRangeError('folds', folds, f"<= {len(objects)} (number of distinct objects)")
        tests = list()
        for chunk in np.array_split(rng.permutation(len(objects)), folds):
            members = {objects[int(j)] for j in chunk}
            tests.append([i for i, s in enumerate(samples) if s.object_id in members])
    return [(sorted(set(range(n)) - set(test)), test) for test in tests]


# Portable layout.
def write_depth_png(img: DepthImage,
                    path: typing.Union[str, Path]) -> None:
    """Save IMG as a 16-bit grayscale PNG in millimeters; invalid pixels become 0."""
    mm = np.clip(np.rint(np.where(img.valid, img.depth, 0) * 1000), 1, 65535)
    Image.fromarray(np.where(img.valid, mm, 0).astype(np.uint16)).save(str(path), format='PNG')


def read_depth_png(path: typing.Union[str, Path]) -> DepthImage:
    try:
        with Image.open(str(path)) as im:
            arr = np.array(im)
    except OSError as errr:
        raise errors.FormatError(f"unreadable depth image ({errr})", str(path))
    if arr.ndim != 2:
        raise errors.FormatError(f"expected a single-channel depth image, got shape {arr.shape}", str(path))
    return DepthImage(arr.astype(np.float64) / 1000, arr > 0)


def write_manifest(entries: typing.Iterable[typing.Dict[str, str]],
                   path: typing.Union[str, Path]) -> None:
    Path(path).write_text(''.join(json.dumps({k: e[k] for k in manifest_fields}, sort_keys=True) + '\n' for e in entries))


def read_manifest(path: typing.Union[str, Path]) -> typing.List[typing.Dict[str, str]]:
    ret = list()
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            entry = json.loads(line)
        except json.JSONDecodeError as errr:
            raise errors.FormatError(f"bad manifest record ({errr.msg})", str(path), lineno)
        missing = [f for f in manifest_fields if f not in entry]
        if missing:
            raise errors.FormatError(f"manifest record lacks {', '.join(missing)}", str(path), lineno)
        ret.append(entry)
    return ret


def write_dataset(samples: typing.Iterable[Sample],
                  out_dir: typing.Union[str, Path]) -> Path:
    """Write SAMPLES in the portable layout under OUT_DIR; returns the manifest path."""
    out_dir = console.validate_directory(Path(out_dir), 'dataset output')
    entries = list()
    for s in samples:
        depth_name, rects_name = f"{s.id}_depth.png", f"{s.id}_cpos.txt"
        write_depth_png(s.depth, out_dir / depth_name)
        (out_dir / rects_name).write_text(format_cornell_rects(s.rects))
        entries.append({'id': s.id, 'object_id': s.object_id, 'depth_path': depth_name, 'rects_path': rects_name})
    write_manifest(entries, out_dir / manifest_name)
    console.debug_print(f"wrote {len(entries)} samples to {out_dir}", 2)
    return out_dir / manifest_name


# Cornell layout.
cornell_cloud_name = re.compile(r'pcd(\d+)\.txt')


def find_cornell_files(directory: typing.Union[str, Path]) -> typing.List[typing.Tuple[str, Path, Path]]:
    """(image number, point-cloud path, positive-rectangle path) for every pcdNNNN.txt
    found under DIRECTORY, sorted by image number. The rectangle file may not exist.
    """
    ret = list()
    for p in Path(directory).rglob('pcd*.txt'):
        match = cornell_cloud_name.fullmatch(p.name)
        if match:
            ret.append((match.group(1), p, p.with_name(f"pcd{match.group(1)}cpos.txt")))
    return sorted(ret)


def cornell_object_ids(directory: typing.Union[str, Path]) -> typing.Dict[str, str]:
    """Image number -> object_id, from every z.txt mapping file under DIRECTORY
    (whitespace-separated lines starting with image number and object number).
    Empty if there is no mapping file.
    """
    ret = dict()
    for mapping in sorted(Path(directory).rglob('z.txt')):
        for lineno, line in enumerate(mapping.read_text().splitlines(), start=1):
            tokens = line.split()
            if not tokens:
                continue
            if len(tokens) < 2:
                raise errors.FormatError("expected image number and object number", str(mapping), lineno)
            try:
                ret[f"{int(tokens[0]):04d}"] = f"obj{int(tokens[1]):04d}"
            except ValueError:
                raise errors.FormatError(f"non-numeric mapping entry {line.strip()!r}", str(mapping), lineno)
    return ret


def cornell_prefix_object_id(number: str) -> str:
    """Fallback grouping when no mapping file is present: images whose numbers share
    all but the last digit are treated as one object.
    """
    return f"grp{number[:-1]}"


def load_cornell_sample(pcd_path: typing.Union[str, Path],
                        cpos_path: typing.Union[str, Path],
                        sample_id: str,
                        object_id: str) -> Sample:
    """Read and inpaint one Cornell point cloud and its positive rectangles. Raises
    EmptyInputError if the rectangle file holds no usable rectangle.
    """
    rects = parse_cornell_rects(Path(cpos_path).read_text(), cpos_path)
    if not rects:
        raise errors.EmptyInputError(f"no usable positive rectangle in {cpos_path}")
    img = parse_ascii_pcd_to_depth(Path(pcd_path).read_text(), z_scale=cornell_z_scale, path=pcd_path)
    try:
        img = inpaint_depth(img)
    except errors.EmptyInputError:
        raise errors.FormatError("point cloud holds no valid depth", str(pcd_path))
    return Sample(sample_id, object_id, img, rects, {'source': str(pcd_path)})


def load_dataset(directory: typing.Union[str, Path]) -> typing.List[Sample]:
    """Load every sample under DIRECTORY: through its manifest if it has one (the
    portable layout), or from the raw Cornell files otherwise. Depth from the
    portable layout is inpainted on load. Samples without a usable positive
    rectangle cannot be scored, so they are skipped with a warning.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise errors.FormatError("dataset directory does not exist", str(directory))
    ret, skipped = list(), 0
    if (directory / manifest_name).exists():
        for entry in read_manifest(directory / manifest_name):
            rects_path = directory / entry['rects_path']
            if not rects_path.exists():
                raise errors.FormatError("rectangle file listed in manifest is missing", str(rects_path))
            rects = parse_cornell_rects(rects_path.read_text(), rects_path)
            if not rects:
                console.debug_print(f"WARNING! no usable positive rectangle in {rects_path}; skipping sample {entry['id']}", 1)
                skipped += 1
                continue
            img = read_depth_png(directory / entry['depth_path'])
            if not np.all(img.valid):
                img = inpaint_depth(img)
            ret.append(Sample(entry['id'], entry['object_id'], img, rects))
    else:
        objects = cornell_object_ids(directory)
        for number, pcd, cpos in find_cornell_files(directory):
            if not cpos.exists():
                console.debug_print(f"WARNING! no rectangle file for {pcd}; skipping it", 1)
                continue
            try:
                ret.append(load_cornell_sample(pcd, cpos, f"pcd{number}", objects.get(number, cornell_prefix_object_id(number))))
            except errors.EmptyInputError as errr:
                console.debug_print(f"WARNING! {errr}; skipping pcd{number}", 1)
                skipped += 1
    console.debug_print(f"loaded {len(ret)} samples from {directory}" + (f" ({skipped} skipped)" if skipped else ''), 2)
    return ret

"""Object masks and the nine mask-derived object keypoints.

Coordinates are ``(x, y)`` with pixel ``(col, row)`` centred on integer
coordinates, so pixel ``(4, 7)`` covers ``[3.5, 4.5) x [6.5, 7.5)``. A
sub-pixel point's *containing pixel* is ``floor(p + 0.5)``.

All marching is done in a frame anchored at the mask's integer bbox corner,
which makes extraction exactly equivariant to integer translation and
independent of canvas padding.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

Point = Tuple[float, float]

KEYPOINT_NAMES = (
    "gravity",
    "top",
    "left",
    "bottom",
    "right",
    "top_left",
    "left_bottom",
    "bottom_right",
    "right_top",
)

RAY_STEP = 0.25
REFINE_STEP = 0.01


class EmptyMaskError(ValueError):
    """The mask has no occupied pixel."""


@dataclass(frozen=True, eq=False)
class RasterMask:
    """Binary occupancy grid of one object instance.

    ``bits`` is a ``(height, width)`` boolean array; ``bbox`` is the tight
    inclusive pixel bounds ``(x_min, y_min, x_max, y_max)`` of occupied pixels.
    """

    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool)
        if bits.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {bits.shape}")
        if not bits.any():
            raise EmptyMaskError("mask has no occupied pixel")
        bits = bits.copy()
        bits.flags.writeable = False
        object.__setattr__(self, "bits", bits)

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def bbox(self) -> Tuple[int, int, int, int]:
        rows = np.flatnonzero(self.bits.any(axis=1))
        cols = np.flatnonzero(self.bits.any(axis=0))
        return int(cols[0]), int(rows[0]), int(cols[-1]), int(rows[-1])

    def crop(self) -> Tuple[np.ndarray, Tuple[int, int]]:
        """Return the bbox-cropped bits and the ``(x_min, y_min)`` offset."""
        x0, y0, x1, y1 = self.bbox
        return self.bits[y0 : y1 + 1, x0 : x1 + 1], (x0, y0)

    def occupied(self, x: float, y: float) -> bool:
        col, row = int(np.floor(x + 0.5)), int(np.floor(y + 0.5))
        if 0 <= row < self.height and 0 <= col < self.width:
            return bool(self.bits[row, col])
        return False

    @classmethod
    def from_pixels(cls, pixels: Sequence[Tuple[int, int]], width: int = None, height: int = None):
        """Build a mask from ``(x, y)`` pixel coordinates."""
        pts = np.asarray(pixels, dtype=int).reshape(-1, 2)
        if len(pts) == 0:
            raise EmptyMaskError("no pixels given")
        if (pts < 0).any():
            raise ValueError("pixel coordinates must be non-negative")
        width = int(pts[:, 0].max()) + 1 if width is None else width
        height = int(pts[:, 1].max()) + 1 if height is None else height
        bits = np.zeros((height, width), dtype=bool)
        bits[pts[:, 1], pts[:, 0]] = True
        return cls(bits)


@dataclass(frozen=True)
class ObjectKeypoints:
    """Nine ordered object keypoints (see ``KEYPOINT_NAMES``)."""

    points: Tuple[Point, ...]

    def __post_init__(self):
        if len(self.points) != 9:
            raise ValueError(f"expected 9 object keypoints, got {len(self.points)}")

    def as_array(self) -> np.ndarray:
        return np.asarray(self.points, dtype=np.float64)

    def to_json(self) -> Dict[str, List[float]]:
        return {name: [float(x), float(y)] for name, (x, y) in zip(KEYPOINT_NAMES, self.points)}

    @classmethod
    def from_json(cls, record: Dict[str, Sequence[float]]) -> "ObjectKeypoints":
        return cls(tuple((float(record[n][0]), float(record[n][1])) for n in KEYPOINT_NAMES))


# ---------------------------------------------------------------------------
# mask ingestion


def rasterize_polygon(polygons: Sequence[Sequence[float]], width: int, height: int) -> np.ndarray:
    """Rasterize COCO polygons (flat ``[x1, y1, x2, y2, ...]`` lists).

    A pixel is set when its centre lies inside any polygon (even-odd rule).
    """
    bits = np.zeros((height, width), dtype=bool)
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    for flat in polygons:
        poly = np.asarray(flat, dtype=np.float64).reshape(-1, 2)
        if len(poly) < 3:
            raise ValueError("polygon needs at least 3 vertices")
        inside = np.zeros((height, width), dtype=bool)
        x1, y1 = poly[:, 0], poly[:, 1]
        x2, y2 = np.roll(x1, -1), np.roll(y1, -1)
        for ax, ay, bx, by in zip(x1, y1, x2, y2):
            if ay == by:
                continue
            crosses = (ay > ys) != (by > ys)
            x_at = ax + (ys - ay) * (bx - ax) / (by - ay)
            inside ^= crosses & (xs < x_at)
        bits |= inside
    return bits


def decode_rle(counts: Sequence[int], size: Sequence[int]) -> np.ndarray:
    """Decode uncompressed COCO RLE (column-major runs, starting with zeros)."""
    height, width = int(size[0]), int(size[1])
    counts = np.asarray(counts, dtype=np.int64)
    if counts.sum() != height * width:
        raise ValueError(f"RLE counts sum to {counts.sum()}, expected {height * width}")
    values = np.arange(len(counts)) % 2 == 1
    flat = np.repeat(values, counts)
    return flat.reshape((width, height)).T.copy()


def encode_rle(bits: np.ndarray) -> Dict[str, list]:
    """Inverse of :func:`decode_rle`."""
    flat = np.asarray(bits, dtype=bool).T.ravel()
    change = np.flatnonzero(np.diff(flat.astype(np.int8))) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    runs = np.diff(bounds).tolist()
    if flat.size and flat[0]:
        runs = [0] + runs
    return {"counts": [int(r) for r in runs], "size": [int(bits.shape[0]), int(bits.shape[1])]}


def mask_from_segmentation(segmentation, width: int, height: int) -> RasterMask:
    """Accept COCO polygon lists or an uncompressed RLE dict."""
    if isinstance(segmentation, dict):
        bits = decode_rle(segmentation["counts"], segmentation["size"])
        if bits.shape != (height, width):
            raise ValueError(f"RLE size {bits.shape} does not match image ({height}, {width})")
        return RasterMask(bits)
    return RasterMask(rasterize_polygon(segmentation, width, height))


# ---------------------------------------------------------------------------
# keypoints


def centroid(mask: RasterMask) -> Point:
    """Mean of occupied pixel centres."""
    local, (ox, oy) = mask.crop()
    rows, cols = np.nonzero(local)
    return float(cols.mean() + ox), float(rows.mean() + oy)


def _lower_median(values: np.ndarray) -> int:
    values = np.sort(values)
    return int(values[(len(values) - 1) // 2])


def extreme_points(mask: RasterMask) -> Tuple[Point, Point, Point, Point]:
    """Top, left, bottom and right most pixels.

    Ties along a flat extremal edge resolve to the lower median of the run.
    """
    x0, y0, x1, y1 = mask.bbox
    bits = mask.bits
    top = (_lower_median(np.flatnonzero(bits[y0])), y0)
    bottom = (_lower_median(np.flatnonzero(bits[y1])), y1)
    left = (x0, _lower_median(np.flatnonzero(bits[:, x0])))
    right = (x1, _lower_median(np.flatnonzero(bits[:, x1])))
    return tuple((float(x), float(y)) for x, y in (top, left, bottom, right))


def _occupied_local(local: np.ndarray, pts: np.ndarray) -> np.ndarray:
    cols = np.floor(pts[:, 0] + 0.5).astype(int)
    rows = np.floor(pts[:, 1] + 0.5).astype(int)
    h, w = local.shape
    ok = (rows >= 0) & (rows < h) & (cols >= 0) & (cols < w)
    out = np.zeros(len(pts), dtype=bool)
    out[ok] = local[rows[ok], cols[ok]]
    return out


def _exit_distance(origin: np.ndarray, direction: np.ndarray, shape: Tuple[int, int]) -> float:
    """Ray length from ``origin`` to the outer edge of the local bbox."""
    h, w = shape
    lo = np.array([-0.5, -0.5])
    hi = np.array([w - 0.5, h - 0.5])
    t = np.inf
    for axis in range(2):
        d = direction[axis]
        if d > 0:
            t = min(t, (hi[axis] - origin[axis]) / d)
        elif d < 0:
            t = min(t, (lo[axis] - origin[axis]) / d)
    return max(float(t), 0.0)


def _march(local: np.ndarray, origin: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Farthest occupied point on the ray origin->target inside the local bbox.

    Returns ``target`` when no sample on the ray is occupied.
    """
    delta = target - origin
    length = float(np.hypot(delta[0], delta[1]))
    if length == 0.0:
        return target
    direction = delta / length
    t_max = _exit_distance(origin, direction, local.shape)
    ts = np.arange(0.0, t_max + 1e-12, RAY_STEP)
    hits = np.flatnonzero(_occupied_local(local, origin + ts[:, None] * direction))
    if len(hits) == 0:
        return target
    t_best = ts[hits[-1]]
    fine = t_best + np.arange(1, int(round(RAY_STEP / REFINE_STEP))) * REFINE_STEP
    fine = fine[fine <= t_max]
    occ = _occupied_local(local, origin + fine[:, None] * direction)
    # extend only through the unbroken run of occupied fine samples
    n_ok = len(occ) if occ.all() else int(np.argmin(occ))
    if n_ok:
        t_best = fine[n_ok - 1]
    return origin + t_best * direction


def intermediate_keypoint(mask: RasterMask, gravity: Point, pa: Point, pb: Point) -> Point:
    """Occupied point farthest from ``gravity`` on the ray through midpoint(pa, pb).

    The ray runs from gravity to the edge of the tight mask bbox. If it never
    touches an occupied pixel the midpoint itself is returned.
    """
    local, (ox, oy) = mask.crop()
    offset = np.array([ox, oy], dtype=np.float64)
    g = np.asarray(gravity, dtype=np.float64) - offset
    m = (np.asarray(pa, dtype=np.float64) + np.asarray(pb, dtype=np.float64)) / 2.0 - offset
    p = _march(local, g, m) + offset
    return float(p[0]), float(p[1])


def extract_object_keypoints(mask: RasterMask) -> ObjectKeypoints:
    """Gravity, the four extremes, then the four contour points between them."""
    g = centroid(mask)
    top, left, bottom, right = extreme_points(mask)
    pairs = ((top, left), (left, bottom), (bottom, right), (right, top))
    inter = [intermediate_keypoint(mask, g, a, b) for a, b in pairs]
    return ObjectKeypoints((g, top, left, bottom, right, *inter))

"""Raster containers and pixel-level geometry.

Images are numpy arrays in row-major order: ``(height, width)`` for single
channel data and ``(height, width, 3)`` for RGB, samples in [0, 1].  Binary
masks are boolean arrays and instance label maps are integer arrays with 0 as
background.  Points are ``(x, y)`` tuples with the origin at the top-left
corner, x rightward and y downward.
"""

import logging
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy import ndimage
from skimage import morphology

from tracer.errors import InvalidArgumentError

logger = logging.getLogger(__name__)

Point = tuple[int, int]

EIGHT_CONNECTIVITY = np.ones((3, 3), dtype=bool)

# 8-neighbours clockwise from north, as (dy, dx).
RING_OFFSETS: tuple[tuple[int, int], ...] = (
    (-1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
    (1, 0),
    (1, -1),
    (0, -1),
    (-1, -1),
)

DEFAULT_PATCH_SIZE = 96


class Window(NamedTuple):
    """Square window of ``size`` pixels whose top-left corner is ``(x, y)``."""

    x: int
    y: int
    size: int

    @property
    def slices(self) -> tuple[slice, slice]:
        return slice(self.y, self.y + self.size), slice(self.x, self.x + self.size)

    @property
    def center(self) -> Point:
        return self.x + self.size // 2, self.y + self.size // 2

    def contains(self, point: Point) -> bool:
        px, py = point
        return self.x <= px < self.x + self.size and self.y <= py < self.y + self.size

    def to_local(self, point: Point) -> Point:
        return point[0] - self.x, point[1] - self.y


@dataclass
class Patch:
    """Copy of a square image window."""

    window: Window
    pixels: np.ndarray

    @property
    def origin(self) -> Point:
        return self.window.x, self.window.y

    @property
    def size(self) -> int:
        return self.window.size


def to_grayscale(image: np.ndarray) -> np.ndarray:
    """Convert an RGB image to luminance; single channel input is returned as is."""
    if image.ndim == 2:
        return image
    weights = np.array([0.299, 0.587, 0.114])
    return np.clip(image[..., :3] @ weights, 0.0, 1.0)


def place_window(shape: Sequence[int], center: Point, size: int = DEFAULT_PATCH_SIZE) -> Window:
    """Place a ``size`` window centred on ``center``, clamped inside an image of ``shape``."""
    height, width = shape[0], shape[1]
    if size <= 0:
        raise InvalidArgumentError(f"Patch size must be positive, got {size}")
    if size > min(width, height):
        raise InvalidArgumentError(
            f"Patch size {size} exceeds image extent {width}x{height}"
        )
    cx, cy = center
    half = size // 2
    x = min(max(cx - half, 0), width - size)
    y = min(max(cy - half, 0), height - size)
    return Window(int(x), int(y), size)


def crop_patch(image: np.ndarray, center: Point, size: int = DEFAULT_PATCH_SIZE) -> Patch:
    """Crop the window centred at ``center``, translated minimally to stay inside the image."""
    window = place_window(image.shape, center, size)
    return Patch(window=window, pixels=image[window.slices].copy())


def _ring_groups(ring: Sequence[bool]) -> int:
    """Count 8-connected groups among the set pixels of a 3x3 ring."""
    parent = list(range(8))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(8):
        if not ring[i]:
            continue
        # ring neighbours are adjacent; orthogonal pixels two steps apart touch diagonally
        partners = [(i + 1) % 8]
        if i % 2 == 0:
            partners.append((i + 2) % 8)
        for j in partners:
            if ring[j]:
                parent[find(i)] = find(j)
    return len({find(i) for i in range(8) if ring[i]})


def _remove_staircase_pixels(skeleton: np.ndarray) -> bool:
    """Delete elbow pixels whose removal keeps the local neighbourhood connected."""
    padded = np.pad(skeleton, 1)
    removed = False
    ys, xs = np.nonzero(padded)
    for y, x in zip(ys, xs):
        ring = [bool(padded[y + dy, x + dx]) for dy, dx in RING_OFFSETS]
        north, east, south, west = ring[0], ring[2], ring[4], ring[6]
        if north + east + south + west != 2 or (north and south) or (east and west):
            continue
        if sum(ring) < 2 or _ring_groups(ring) != 1:
            continue
        padded[y, x] = False
        removed = True
    skeleton[:] = padded[1:-1, 1:-1]
    return removed


def skeletonize(mask: np.ndarray) -> np.ndarray:
    """Thin a binary mask to a one-pixel-wide 8-connected skeleton.

    scikit-image thinning followed by removal of redundant staircase pixels,
    repeated until neither changes the result.  A component that thinning
    erases completely keeps the pixel nearest to its centroid, so the
    component count is preserved.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return mask.copy()

    skeleton = np.asarray(morphology.skeletonize(mask), dtype=bool)
    while _remove_staircase_pixels(skeleton):
        skeleton = np.asarray(morphology.skeletonize(skeleton), dtype=bool)

    labels, count = ndimage.label(mask, structure=EIGHT_CONNECTIVITY)
    if count:
        kept = ndimage.maximum(skeleton, labels, index=np.arange(1, count + 1))
        for component in np.flatnonzero(~np.asarray(kept, dtype=bool)) + 1:
            ys, xs = np.nonzero(labels == component)
            cy, cx = ys.mean(), xs.mean()
            nearest = np.lexsort((xs, ys, (ys - cy) ** 2 + (xs - cx) ** 2))[0]
            skeleton[ys[nearest], xs[nearest]] = True
    return skeleton


def node_type_map(skeleton: np.ndarray) -> np.ndarray:
    """Per-pixel 1 + on-skeleton neighbour count; 0 off the skeleton.

    2 marks an endpoint, 3 a connection and 4 or more a bifurcation.
    """
    skeleton = np.asarray(skeleton, dtype=bool)
    counts = ndimage.convolve(
        skeleton.astype(np.int32), np.ones((3, 3), dtype=np.int32), mode="constant", cval=0
    )
    return counts * skeleton


def connected_components(mask: np.ndarray) -> tuple[np.ndarray, int]:
    """Label 8-connected components 1..C in row-major first-encounter order."""
    labels, count = ndimage.label(np.asarray(mask, dtype=bool), structure=EIGHT_CONNECTIVITY)
    return labels.astype(np.int32), int(count)


def fill_holes(mask: np.ndarray) -> np.ndarray:
    return ndimage.binary_fill_holes(np.asarray(mask, dtype=bool))


def dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    """Chebyshev dilation by ``radius`` pixels."""
    mask = np.asarray(mask, dtype=bool)
    if radius <= 0:
        return mask.copy()
    return ndimage.binary_dilation(mask, structure=EIGHT_CONNECTIVITY, iterations=radius)


def line_points(start: Point, end: Point) -> list[Point]:
    """8-connected pixel run from ``start`` to ``end`` inclusive."""
    (x0, y0), (x1, y1) = start, end
    steps = max(abs(x1 - x0), abs(y1 - y0)) + 1
    xs = np.rint(np.linspace(x0, x1, steps)).astype(int)
    ys = np.rint(np.linspace(y0, y1, steps)).astype(int)
    return [(int(x), int(y)) for x, y in zip(xs, ys)]


def rasterize_polyline(points: Sequence[Point]) -> list[Point]:
    """Join consecutive vertices with 8-connected runs, dropping repeated pixels."""
    if not points:
        return []
    pixels: list[Point] = [tuple(points[0])]
    for start, end in zip(points, points[1:]):
        for pixel in line_points(tuple(start), tuple(end))[1:]:
            if pixel != pixels[-1]:
                pixels.append(pixel)
    return pixels


def polyline_length(points: Sequence[Point]) -> float:
    if len(points) < 2:
        return 0.0
    pts = np.asarray(points, dtype=float)
    return float(np.sqrt((np.diff(pts, axis=0) ** 2).sum(axis=1)).sum())


def neighbours_of(point: Point, shape: Sequence[int]) -> list[Point]:
    """In-bounds 8-neighbours of ``point`` in ring order."""
    x, y = point
    height, width = shape[0], shape[1]
    result = []
    for dy, dx in RING_OFFSETS:
        nx, ny = x + dx, y + dy
        if 0 <= nx < width and 0 <= ny < height:
            result.append((nx, ny))
    return result


def frontier_mask(covered: np.ndarray, margin: int) -> np.ndarray:
    """Pixels within ``margin`` of an uncovered pixel or of the image border."""
    covered = np.asarray(covered, dtype=bool)
    margin = max(int(margin), 1)
    outside = np.pad(~covered, margin, constant_values=True)
    grown = dilate(outside, margin)
    return grown[margin:-margin, margin:-margin]


def bounding_window_slices(windows: Sequence[Window], shape: Sequence[int], margin: int = 0) -> tuple[slice, slice]:
    """Slices of the bounding box of ``windows`` grown by ``margin`` and clipped to ``shape``."""
    x0 = max(min(w.x for w in windows) - margin, 0)
    y0 = max(min(w.y for w in windows) - margin, 0)
    x1 = min(max(w.x + w.size for w in windows) + margin, shape[1])
    y1 = min(max(w.y + w.size for w in windows) + margin, shape[0])
    return slice(y0, y1), slice(x0, x1)

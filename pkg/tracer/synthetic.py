"""Synthetic vascular scenes with exact ground truth.

Each tree grows from a point on the image border by recursive bifurcation.
Segments are drawn as capsules so that every tree has a crisp instance mask;
trees may cross each other, and crossing pixels belong to every tree drawn
through them.  No tree reaches the start of another tree's trunk, where its
seed vector lies.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial.distance import cdist

from tracer.errors import GenerationError, InvalidArgumentError
from tracer.raster import Point
from tracer.tracing import SeedVector
from tracer.tree import BIFURCATION, ENDPOINT, VesselTree

logger = logging.getLogger(__name__)

WIDTH_TAPER = 0.8
MIN_WIDTH = 2.0
SEED_OFFSET = 10
# keeps branch tips this far inside the image
BORDER_MARGIN = 6
CLEARANCE = 3.0
# other trees stay this far from a trunk over its first two seed offsets
SEED_CLEARANCE = 3.0


@dataclass(frozen=True)
class TreeSpec:
    """Shape of one synthetic tree.

    Args:
        depth: Bifurcation generations; 0 gives a single segment
        angle_range: Total opening angle of a bifurcation, in degrees
        length_range: Segment length, in pixels
        width_range: Trunk width, in pixels; children taper by 0.8 per generation
        contrast: Darkening of vessel pixels against the background
    """

    depth: int = 2
    angle_range: tuple[float, float] = (40.0, 80.0)
    length_range: tuple[float, float] = (40.0, 70.0)
    width_range: tuple[float, float] = (4.0, 6.0)
    contrast: float = 0.4

    def __post_init__(self):
        if not 0 <= self.depth <= 6:
            raise InvalidArgumentError(f"depth must be in 0..6, got {self.depth}")
        low, high = self.angle_range
        if not 0 < low <= high < 180:
            raise InvalidArgumentError(f"Invalid angle range {self.angle_range}")
        if not 20 <= self.length_range[0] <= self.length_range[1]:
            raise InvalidArgumentError(f"Segments must be at least 20 px, got {self.length_range}")
        if not MIN_WIDTH <= self.width_range[0] <= self.width_range[1]:
            raise InvalidArgumentError(f"Widths must be at least 2 px, got {self.width_range}")
        if not 0 < self.contrast <= 1:
            raise InvalidArgumentError(f"contrast must be in (0, 1], got {self.contrast}")


@dataclass(frozen=True)
class SceneSpec:
    width: int = 256
    height: int = 256
    trees: tuple[TreeSpec, ...] = (TreeSpec(),)
    noise_sigma: float = 0.02
    rng_seed: int = 0
    force_crossing: bool = False
    max_attempts: int = 200

    def __post_init__(self):
        if not 1 <= len(self.trees) <= 4:
            raise InvalidArgumentError(f"Scene needs 1..4 trees, got {len(self.trees)}")
        if min(self.width, self.height) < 32:
            raise InvalidArgumentError(f"Image too small: {self.width}x{self.height}")
        if self.noise_sigma < 0:
            raise InvalidArgumentError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.max_attempts < 1:
            raise InvalidArgumentError("max_attempts must be >= 1")


@dataclass
class Scene:
    image: np.ndarray
    semantic: np.ndarray
    instance_masks: dict[str, np.ndarray]
    trees: dict[str, VesselTree]
    seeds: list[SeedVector]
    spec: Optional[SceneSpec] = None


@dataclass
class _Segment:
    start: np.ndarray
    end: np.ndarray
    width: float
    parent: Optional[int]
    children: list[int] = field(default_factory=list)


def _unit(angle: float) -> np.ndarray:
    return np.array([np.cos(angle), np.sin(angle)])


def _border_origin(rng: np.random.Generator, width: int, height: int) -> tuple[np.ndarray, float]:
    """A point on a random image side and the inward heading there."""
    side = int(rng.integers(4))
    u = rng.uniform(0.3, 0.7)
    if side == 0:
        origin, inward = np.array([0.0, u * (height - 1)]), 0.0
    elif side == 1:
        origin, inward = np.array([width - 1.0, u * (height - 1)]), np.pi
    elif side == 2:
        origin, inward = np.array([u * (width - 1), 0.0]), np.pi / 2
    else:
        origin, inward = np.array([u * (width - 1), height - 1.0]), -np.pi / 2
    return origin, inward


def _grow(rng: np.random.Generator, spec: TreeSpec, origin: np.ndarray, heading: float) -> list[_Segment]:
    """Draw segment geometry depth-first; index 0 is the trunk."""
    segments: list[_Segment] = []

    def grow(start: np.ndarray, angle: float, width: float, level: int, parent: Optional[int]):
        length = rng.uniform(*spec.length_range)
        end = start + length * _unit(angle)
        index = len(segments)
        segments.append(_Segment(start, end, width, parent))
        if parent is not None:
            segments[parent].children.append(index)
        if level == spec.depth:
            return
        opening = np.radians(rng.uniform(*spec.angle_range))
        split = rng.uniform(0.3, 0.7)
        child_width = max(width * WIDTH_TAPER, MIN_WIDTH)
        grow(end, angle + opening * split, child_width, level + 1, index)
        grow(end, angle - opening * (1 - split), child_width, level + 1, index)

    grow(origin, heading, rng.uniform(*spec.width_range), 0, None)
    return segments


def _samples(segment: _Segment) -> np.ndarray:
    count = max(int(np.ceil(np.hypot(*(segment.end - segment.start)) * 2)), 2)
    t = np.linspace(0.0, 1.0, count)[:, None]
    return segment.start + t * (segment.end - segment.start)


def _fits(segments: list[_Segment], width: int, height: int) -> bool:
    for segment in segments:
        x, y = segment.end
        if not (BORDER_MARGIN <= x <= width - 1 - BORDER_MARGIN and BORDER_MARGIN <= y <= height - 1 - BORDER_MARGIN):
            return False
    return True


def _self_crossing(segments: list[_Segment]) -> bool:
    """True when two segments not sharing an endpoint come too close."""
    points = [_samples(s) for s in segments]
    for i, a in enumerate(segments):
        for j in range(i + 1, len(segments)):
            b = segments[j]
            joined = (
                a.parent == j or b.parent == i or a.parent == b.parent
            )
            if joined:
                continue
            gap = cdist(points[i], points[j]).min()
            if gap < (a.width + b.width) / 2 + CLEARANCE:
                return True
    return False


def _capsule_mask(segment: _Segment, shape: tuple[int, int], start: Optional[np.ndarray] = None) -> np.ndarray:
    """Pixels whose centre lies within half the width of the segment."""
    height, width = shape
    a = segment.start if start is None else start
    b = segment.end
    ys, xs = np.mgrid[0:height, 0:width]
    pixels = np.stack([xs, ys], axis=-1).astype(float)
    direction = b - a
    t = np.clip(((pixels - a) @ direction) / float(direction @ direction), 0.0, 1.0)
    nearest = a + t[..., None] * direction
    distance = np.sqrt(((pixels - nearest) ** 2).sum(axis=-1))
    return distance <= segment.width / 2


def _rasterize(segments: list[_Segment], shape: tuple[int, int], heading: float) -> np.ndarray:
    mask = np.zeros(shape, dtype=bool)
    for index, segment in enumerate(segments):
        # the trunk enters from outside so the vessel is cut by the image edge
        start = segment.start - segment.width * _unit(heading) if index == 0 else None
        mask |= _capsule_mask(segment, shape, start)
    return mask


def _seed_zone(segments: list[_Segment], shape: tuple[int, int], heading: float) -> np.ndarray:
    """Trunk start around the seed vector, widened by ``SEED_CLEARANCE``."""
    trunk = segments[0]
    unit = _unit(heading)
    reach = min(2 * SEED_OFFSET, float(np.hypot(*(trunk.end - trunk.start))))
    zone = _Segment(trunk.start, trunk.start + reach * unit, trunk.width + 2 * SEED_CLEARANCE, None)
    return _capsule_mask(zone, shape, trunk.start - trunk.width * unit)


def _pixel(point: np.ndarray, width: int, height: int) -> Point:
    x = int(np.clip(np.rint(point[0]), 0, width - 1))
    y = int(np.clip(np.rint(point[1]), 0, height - 1))
    return x, y


def _ground_truth(tree_id: str, segments: list[_Segment], width: int, height: int) -> VesselTree:
    tree = VesselTree(tree_id, _pixel(segments[0].start, width, height))
    nodes = {}
    for index, segment in enumerate(segments):
        parent_node = tree.origin if segment.parent is None else nodes[segment.parent]
        kind = BIFURCATION if segment.children else ENDPOINT
        start = tree.position(parent_node)
        end = _pixel(segment.end, width, height)
        nodes[index] = tree.add_node(kind, end)
        tree.add_edge(parent_node, nodes[index], [start, end])
    return tree


def generate_scene(spec: SceneSpec) -> Scene:
    """Generate an image, its masks, ground-truth trees and seed vectors."""
    rng = np.random.default_rng(spec.rng_seed)
    shape = (spec.height, spec.width)
    center = np.array([(spec.width - 1) / 2, (spec.height - 1) / 2])

    instance_masks: dict[str, np.ndarray] = {}
    trees: dict[str, VesselTree] = {}
    seeds: list[SeedVector] = []
    seed_zones: list[np.ndarray] = []
    darkness = np.zeros(shape)

    for index, tree_spec in enumerate(spec.trees):
        tree_id = f"tree{index + 1}"
        for attempt in range(spec.max_attempts):
            origin, inward = _border_origin(rng, spec.width, spec.height)
            if spec.force_crossing:
                offset = center - origin
                heading = float(np.arctan2(offset[1], offset[0]))
            else:
                heading = inward + np.radians(rng.uniform(-25.0, 25.0))
            segments = _grow(rng, tree_spec, origin, heading)
            if not _fits(segments, spec.width, spec.height) or _self_crossing(segments):
                continue
            mask = _rasterize(segments, shape, heading)
            zone = _seed_zone(segments, shape, heading)
            # a seed on another tree would make the start ambiguous
            if any((zone & other).any() for other in instance_masks.values()):
                continue
            if any((mask & other).any() for other in seed_zones):
                continue
            if spec.force_crossing and instance_masks:
                if not any((mask & other).any() for other in instance_masks.values()):
                    continue
            break
        else:
            raise GenerationError(
                f"Could not fit {tree_id} (depth {tree_spec.depth}) in "
                f"{spec.width}x{spec.height} after {spec.max_attempts} attempts"
            )
        logger.debug(f"Generated {tree_id} after {attempt + 1} attempt(s)")

        tree = _ground_truth(tree_id, segments, spec.width, spec.height)
        problems = tree.problems()
        if problems:
            raise GenerationError(f"Ground truth for {tree_id} is invalid: {problems}")
        instance_masks[tree_id] = mask
        seed_zones.append(zone)
        trees[tree_id] = tree
        darkness = np.maximum(darkness, tree_spec.contrast * mask)

        p1 = tree.position(tree.origin)
        p2 = _pixel(np.asarray(p1, dtype=float) + SEED_OFFSET * _unit(heading), spec.width, spec.height)
        seeds.append(SeedVector(tree_id=tree_id, p1=p1, p2=p2))

    semantic = np.zeros(shape, dtype=bool)
    for mask in instance_masks.values():
        semantic |= mask

    gray = 0.6 - darkness
    if spec.noise_sigma > 0:
        gray = gray + rng.normal(0.0, spec.noise_sigma, size=shape)
    image = np.clip(np.stack([gray, 0.55 * gray, 0.3 * gray], axis=-1), 0.0, 1.0)

    logger.info(f"Generated scene {spec.width}x{spec.height} with {len(trees)} tree(s)")
    return Scene(
        image=image,
        semantic=semantic,
        instance_masks=instance_masks,
        trees=trees,
        seeds=seeds,
        spec=spec,
    )

"""Semi-automatic vessel tree tracing for Vessel Tracer.

One trace starts from a seed vector near the tree root and repeats, until no
unvisited endpoint remains:

1. sample the instance holding the start point in five shifted patches,
2. fold those votes into the tree's probability map and binarize it,
3. build or grow the vessel tree from the binarized mask,
4. move to the unvisited endpoint nearest the previous start.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from tracer.clustering import MeanShiftParams, label_pixels
from tracer.embedder import Embedder
from tracer.errors import DegeneratePatchError, InvalidArgumentError, InvalidSeedError
from tracer.raster import (
    DEFAULT_PATCH_SIZE,
    Point,
    Window,
    bounding_window_slices,
    connected_components,
    crop_patch,
    dilate,
    fill_holes,
    frontier_mask,
    node_type_map,
    skeletonize,
)
from tracer.temporal import DEFAULT_STEP, build_temporal_sequence
from tracer.tree import VesselTree, build_tree, extend_tree

logger = logging.getLogger(__name__)

DEFAULT_SHIFTS: tuple[tuple[int, int], ...] = ((0, 0), (0, -10), (0, 10), (-10, 0), (10, 0))
# further first patches tried along the seed heading before giving up
FIRST_PATCH_RETRIES = 3


@dataclass(frozen=True)
class TraceConfig:
    """Tracing parameters.

    Args:
        patch_size: Side of the square patches fed to the embedder
        step: Spacing of history frames along the traced centerline
        shifts: Base-patch displacements used for multi-sampling, (dx, dy)
        prob_threshold: Binarization threshold of the probability map
        start_dedup_radius: Endpoints this close to a used start are skipped
        max_patches: Upper bound on start points per tree
        min_branch_length: Shorter closed terminal branches are pruned as spurs
        frontier_margin: Distance to unsampled pixels that keeps an endpoint open
        snap_radius: Search radius for foreground when the start is on background
        attach_radius: Skeleton pixels this close to the tree count as traced
        sample_workers: Threads running the shifted inferences
        dynamic_map: Accumulate votes across iterations instead of replacing them
        mean_shift: Clustering parameters for the embedded patches
    """

    patch_size: int = DEFAULT_PATCH_SIZE
    step: int = DEFAULT_STEP
    shifts: tuple[tuple[int, int], ...] = DEFAULT_SHIFTS
    prob_threshold: float = 0.6
    start_dedup_radius: float = 5.0
    max_patches: int = 10000
    min_branch_length: float = 10.0
    frontier_margin: int = 5
    snap_radius: float = 3.0
    attach_radius: int = 3
    sample_workers: int = 1
    dynamic_map: bool = True
    mean_shift: MeanShiftParams = field(default_factory=MeanShiftParams)

    def __post_init__(self):
        if not 0.5 < self.prob_threshold <= 1.0:
            raise InvalidArgumentError(
                f"prob_threshold must be in (0.5, 1], got {self.prob_threshold}"
            )
        if (0, 0) not in [tuple(s) for s in self.shifts]:
            raise InvalidArgumentError("shifts must include (0, 0)")
        if self.patch_size < 8:
            raise InvalidArgumentError(f"patch_size too small: {self.patch_size}")
        if self.step <= 0:
            raise InvalidArgumentError(f"step must be positive, got {self.step}")
        if self.max_patches < 1:
            raise InvalidArgumentError(f"max_patches must be >= 1, got {self.max_patches}")
        if self.sample_workers < 1:
            raise InvalidArgumentError(f"sample_workers must be >= 1, got {self.sample_workers}")
        if max(abs(c) for s in self.shifts for c in s) >= self.patch_size // 2:
            raise InvalidArgumentError("shifts must stay within half a patch")


@dataclass(frozen=True)
class SeedVector:
    """Two user-marked points near a tree root: start ``p1`` and heading toward ``p2``."""

    tree_id: str
    p1: Point
    p2: Point


@dataclass
class Vote:
    """Selected-instance mask of one sampled patch."""

    mask: np.ndarray
    window: Window


@dataclass
class ProbabilityMap:
    """Per-pixel running mean of instance votes."""

    sum: np.ndarray
    count: np.ndarray

    @classmethod
    def empty(cls, shape: Sequence[int]) -> "ProbabilityMap":
        return cls(
            sum=np.zeros(shape[:2], dtype=np.float64),
            count=np.zeros(shape[:2], dtype=np.int64),
        )

    @property
    def shape(self) -> tuple[int, int]:
        return self.sum.shape

    @property
    def covered(self) -> np.ndarray:
        return self.count > 0

    def value(self) -> np.ndarray:
        safe = np.where(self.count > 0, self.count, 1)
        return np.where(self.count > 0, self.sum / safe, 0.0)

    def update(self, votes: Sequence[Vote], dynamic: bool = True) -> "ProbabilityMap":
        """Add every vote to the pixels its window covers.

        Without ``dynamic`` the pixels under the new windows forget earlier
        iterations and hold the mean of these votes only.
        """
        for vote in votes:
            w = vote.window
            if w.x < 0 or w.y < 0 or w.x + w.size > self.shape[1] or w.y + w.size > self.shape[0]:
                raise InvalidArgumentError(f"Vote window {w} exceeds map extent {self.shape}")
        if not dynamic:
            for vote in votes:
                self.sum[vote.window.slices] = 0.0
                self.count[vote.window.slices] = 0
        for vote in votes:
            slices = vote.window.slices
            self.count[slices] += 1
            self.sum[slices] += vote.mask
        return self

    def binarize(self, threshold: float = 0.6) -> np.ndarray:
        return self.value() >= threshold


@dataclass
class TraceResult:
    """Everything one traced tree produced."""

    tree_id: str
    mask: np.ndarray
    tree: VesselTree
    probability: ProbabilityMap
    colormap: np.ndarray
    patches: int
    truncated: bool = False


def derive_seed(seed: SeedVector) -> tuple[Point, np.ndarray]:
    """Start point and unit heading of a seed vector."""
    p1 = np.asarray(seed.p1, dtype=float)
    p2 = np.asarray(seed.p2, dtype=float)
    offset = p2 - p1
    norm = float(np.hypot(*offset))
    if norm == 0:
        raise InvalidSeedError(f"Seed {seed.tree_id} has coincident points {seed.p1}")
    return (int(seed.p1[0]), int(seed.p1[1])), offset / norm


def update_probability_map(
    probability: ProbabilityMap, votes: Sequence[Vote], dynamic: bool = True
) -> ProbabilityMap:
    return probability.update(votes, dynamic=dynamic)


def binarize_probability(probability: ProbabilityMap, threshold: float = 0.6) -> np.ndarray:
    return probability.binarize(threshold)


def _nearest_foreground(mask: np.ndarray, point: Point, radius: float) -> Optional[Point]:
    """Foreground pixel nearest ``point`` within ``radius``; ties go to smaller (y, x)."""
    x, y = point
    if 0 <= y < mask.shape[0] and 0 <= x < mask.shape[1] and mask[y, x]:
        return point
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        return None
    distance = np.hypot(xs - x, ys - y)
    best = np.lexsort((xs, ys, distance))[0]
    if distance[best] > radius:
        return None
    return int(xs[best]), int(ys[best])


def _select_instance(labels: np.ndarray, local_start: Point, snap_radius: float) -> np.ndarray:
    """Instance holding most foreground within ``snap_radius`` of the start.

    A single mislabelled pixel under the start does not decide the vote;
    ties go to the label at the (snapped) start.
    """
    hit = _nearest_foreground(labels > 0, local_start, snap_radius)
    if hit is None:
        return np.zeros(labels.shape, dtype=bool)
    yy, xx = np.ogrid[: labels.shape[0], : labels.shape[1]]
    disc = (xx - hit[0]) ** 2 + (yy - hit[1]) ** 2 <= snap_radius ** 2
    ids, counts = np.unique(labels[disc & (labels > 0)], return_counts=True)
    at_start = labels[hit[1], hit[0]]
    best = counts.max()
    chosen = at_start if counts[ids == at_start][0] == best else ids[np.argmax(counts)]
    return labels == chosen


def sample_patch_labels(
    image: np.ndarray,
    semantic_mask: np.ndarray,
    tree: Optional[VesselTree],
    start: Point,
    embedder: Embedder,
    config: TraceConfig = TraceConfig(),
    heading: Optional[Sequence[float]] = None,
) -> list[Vote]:
    """Instance masks holding ``start`` in each shifted base patch.

    The history frames are shared by all shifts; only the base frame moves.
    A shift whose labelling has no instance within ``snap_radius`` of the
    start yields an empty vote.  ``heading`` (the seed direction) travels
    with a sequence that has no history.
    """
    height, width = image.shape[:2]
    if not (0 <= start[0] < width and 0 <= start[1] < height):
        raise InvalidArgumentError(f"Start {start} lies outside the image")
    sequence = build_temporal_sequence(tree, image, start, config.step, config.patch_size, heading)

    def sample(shift: tuple[int, int]) -> Vote:
        center = (start[0] + shift[0], start[1] + shift[1])
        base = crop_patch(image, center, config.patch_size)
        window = base.window
        semantic_patch = np.asarray(semantic_mask[window.slices], dtype=bool)
        field_ = embedder.embed(sequence.with_base(base, center), semantic_patch)
        labels = label_pixels(field_, semantic_patch, config.mean_shift)
        mask = _select_instance(labels, window.to_local(start), config.snap_radius)
        if not mask.any():
            logger.debug(f"No instance near {start} in window {window}; empty vote")
        return Vote(mask=mask, window=window)

    shifts = [tuple(s) for s in config.shifts]
    if config.sample_workers > 1:
        with ThreadPoolExecutor(max_workers=config.sample_workers) as pool:
            return list(pool.map(sample, shifts))
    return [sample(shift) for shift in shifts]


def _component_at(mask: np.ndarray, point: Point, radius: float) -> Optional[np.ndarray]:
    hit = _nearest_foreground(mask, point, radius)
    if hit is None:
        return None
    labels, _ = connected_components(mask)
    return labels == labels[hit[1], hit[0]]


def init_tree(
    instance_mask: np.ndarray,
    start: Point,
    direction: Sequence[float],
    tree_id: str = "tree",
    covered: Optional[np.ndarray] = None,
    config: TraceConfig = TraceConfig(),
) -> VesselTree:
    """Root a new tree at the open endpoint lying furthest behind the seed heading.

    ``covered`` marks pixels already sampled; endpoints near uncovered pixels
    or the image border are open.  With no coverage given every pixel
    outside the mask's bounding box counts as unexplored.
    """
    instance_mask = np.asarray(instance_mask, dtype=bool)
    component = _component_at(instance_mask, start, config.snap_radius)
    if component is None:
        raise DegeneratePatchError(
            f"Tree {tree_id}: no vessel at start {start}", tree=VesselTree(tree_id, start)
        )
    if covered is None:
        covered = np.zeros_like(instance_mask)
        covered[ndimage.find_objects(component.astype(np.int32))[0]] = True
    frontier = frontier_mask(covered, config.frontier_margin)

    skeleton = skeletonize(fill_holes(component))
    values = node_type_map(skeleton)
    ys, xs = np.nonzero((values == 2) & frontier)
    if ys.size == 0:
        raise DegeneratePatchError(
            f"Tree {tree_id}: first patch has no open endpoint", tree=VesselTree(tree_id, start)
        )
    dx, dy = float(direction[0]), float(direction[1])
    projection = (xs - start[0]) * dx + (ys - start[1]) * dy
    source = np.lexsort((xs, ys, projection))[0]
    origin = (int(xs[source]), int(ys[source]))
    tree = build_tree(skeleton, origin, tree_id, frontier, config.min_branch_length)
    logger.info(f"Tree {tree_id} rooted at {origin}: {tree.census()}")
    return tree


def update_tree(
    tree: VesselTree,
    mask: np.ndarray,
    windows: Sequence[Window],
    covered: Optional[np.ndarray] = None,
    config: TraceConfig = TraceConfig(),
) -> list[int]:
    """Grow ``tree`` with the parts of ``mask`` revealed inside ``windows``.

    Only mask components connected to the current centerlines are used.
    The skeleton is recomputed over a margin around the windows and kept
    inside the windows, so crop borders do not create false endpoints.
    Branches cut where the kept zone ends are open even on covered ground
    and are never pruned as spurs.  Returns the new endpoint ids.
    """
    mask = np.asarray(mask, dtype=bool)
    if not windows:
        return []
    centerline = tree.skeleton_mask(mask.shape)
    labels, _ = connected_components(mask)
    touching = np.unique(labels[dilate(centerline, 1) & mask])
    touching = touching[touching > 0]
    if touching.size == 0:
        logger.warning(f"Tree {tree.tree_id}: new mask is disconnected from the tree; vote discarded")
        return []
    connected = np.isin(labels, touching)

    region = bounding_window_slices(windows, mask.shape, config.patch_size // 2)
    zone = bounding_window_slices(windows, mask.shape, 4)
    full = np.zeros_like(mask)
    full[region] = skeletonize(fill_holes(connected[region]))
    keep = np.zeros_like(mask)
    keep[zone] = True
    skeleton = full & keep

    if covered is None:
        covered = np.zeros_like(mask)
        for window in windows:
            covered[window.slices] = True
    # a centerline cut at the zone edge goes on beyond it, so its end stays open
    frontier = frontier_mask(covered, config.frontier_margin) | dilate(full & ~keep, 1)
    created = extend_tree(tree, skeleton, frontier, config.min_branch_length, config.attach_radius)
    if created:
        logger.debug(f"Tree {tree.tree_id}: {len(created)} new endpoint(s), census {tree.census()}")
    return created


def next_start_point(
    tree: VesselTree,
    used_starts: Sequence[Point],
    last_start: Point,
    config: TraceConfig = TraceConfig(),
) -> Optional[Point]:
    """Unvisited endpoint nearest ``last_start``, or None when the trace is done."""
    candidates = []
    for node in tree.endpoints():
        x, y = tree.position(node)
        if any(np.hypot(x - ux, y - uy) <= config.start_dedup_radius for ux, uy in used_starts):
            continue
        candidates.append((float(np.hypot(x - last_start[0], y - last_start[1])), y, x))
    if not candidates:
        return None
    _, y, x = min(candidates)
    return x, y


def hierarchy_colormap(tree: VesselTree, mask: np.ndarray) -> np.ndarray:
    """Normalized centerline distance to the origin for every mask pixel."""
    mask = np.asarray(mask, dtype=bool)
    distances = tree.distance_raster(mask.shape)
    on_skeleton = ~np.isnan(distances)
    colormap = np.zeros(mask.shape, dtype=np.float64)
    if not on_skeleton.any() or not mask.any():
        return colormap
    _, (near_y, near_x) = ndimage.distance_transform_edt(~on_skeleton, return_indices=True)
    nearest = distances[near_y, near_x]
    peak = float(np.nanmax(distances))
    if peak > 0:
        colormap[mask] = nearest[mask] / peak
    return colormap


def _retry_point(
    start: Point, direction: np.ndarray, attempt: int, shape: Sequence[int], config: TraceConfig
) -> Optional[Point]:
    """Start of the next first-patch attempt, one step further along the seed heading."""
    if attempt > FIRST_PATCH_RETRIES:
        return None
    x = int(round(start[0] + attempt * config.step * float(direction[0])))
    y = int(round(start[1] + attempt * config.step * float(direction[1])))
    if not (0 <= x < shape[1] and 0 <= y < shape[0]):
        return None
    return x, y


def trace_tree(
    image: np.ndarray,
    semantic_mask: np.ndarray,
    seed: SeedVector,
    embedder: Embedder,
    config: TraceConfig = TraceConfig(),
) -> TraceResult:
    """Trace one vessel tree from its seed until no new start point is found.

    A first patch that yields no tree is retried up to ``FIRST_PATCH_RETRIES``
    times, each a step further along the seed heading, before the trace ends
    with an origin-only tree at the seed.
    """
    semantic_mask = np.asarray(semantic_mask, dtype=bool)
    if semantic_mask.shape != image.shape[:2]:
        raise InvalidArgumentError(
            f"Semantic mask {semantic_mask.shape} does not match image {image.shape[:2]}"
        )
    start, direction = derive_seed(seed)
    height, width = semantic_mask.shape
    if not (0 <= start[0] < width and 0 <= start[1] < height):
        raise InvalidSeedError(f"Seed {seed.tree_id} start {start} lies outside the image")

    logger.info(f"Tracing tree {seed.tree_id} from {start}")
    probability = ProbabilityMap.empty(semantic_mask.shape)
    tree: Optional[VesselTree] = None
    used: list[Point] = []
    patches = 0
    truncated = False
    current: Optional[Point] = start

    while current is not None:
        if patches >= config.max_patches:
            truncated = True
            logger.warning(
                f"Tree {seed.tree_id}: stopped at max_patches={config.max_patches}; result is partial"
            )
            break
        heading = direction if tree is None else None
        votes = sample_patch_labels(image, semantic_mask, tree, current, embedder, config, heading)
        patches += 1
        used.append(current)
        probability.update(votes, dynamic=config.dynamic_map)
        mask = probability.binarize(config.prob_threshold)

        if tree is None:
            try:
                tree = init_tree(mask, current, direction, seed.tree_id, probability.covered, config)
            except DegeneratePatchError as e:
                current = _retry_point(start, direction, len(used), semantic_mask.shape, config)
                if current is None:
                    logger.warning(f"{e}; keeping origin-only tree")
                    tree = VesselTree(seed.tree_id, start)
                    break
                logger.info(f"{e}; retrying the first patch at {current}")
                probability = ProbabilityMap.empty(semantic_mask.shape)
                continue
        else:
            update_tree(tree, mask, [vote.window for vote in votes], probability.covered, config)
        current = next_start_point(tree, used, current, config)

    if tree is None:
        tree = VesselTree(seed.tree_id, start)
    mask = probability.binarize(config.prob_threshold)
    logger.info(
        f"Tree {seed.tree_id} finished after {patches} patch(es): "
        f"{int(mask.sum())} px, {tree.census()}"
    )
    return TraceResult(
        tree_id=seed.tree_id,
        mask=mask,
        tree=tree,
        probability=probability,
        colormap=hierarchy_colormap(tree, mask),
        patches=patches,
        truncated=truncated,
    )


def trace_all(
    image: np.ndarray,
    semantic_mask: np.ndarray,
    seeds: Sequence[SeedVector],
    embedder: Embedder,
    config: TraceConfig = TraceConfig(),
    jobs: int = 1,
) -> list[TraceResult]:
    """Trace every seeded tree; results follow the seed order."""
    ids = [seed.tree_id for seed in seeds]
    if len(set(ids)) != len(ids):
        raise InvalidArgumentError("Seed tree ids must be unique")

    def run(seed: SeedVector) -> TraceResult:
        return trace_tree(image, semantic_mask, seed, embedder, config)

    if jobs > 1 and len(seeds) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(run, seeds))
    return [run(seed) for seed in seeds]

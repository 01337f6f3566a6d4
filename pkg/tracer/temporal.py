"""Causal temporal convolution and temporal sequences along a traced tree."""

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from tracer.errors import InvalidArgumentError, InvalidTargetError
from tracer.raster import DEFAULT_PATCH_SIZE, Patch, Point, crop_patch

logger = logging.getLogger(__name__)

MAX_SEQUENCE_LENGTH = 5
DEFAULT_STEP = 10


@dataclass(frozen=True)
class CausalKernel:
    """Temporal taps; ``taps[k]`` weights the frame ``k`` steps in the past."""

    taps: tuple[float, ...]

    def __post_init__(self):
        if not self.taps:
            raise InvalidArgumentError("Causal kernel needs at least one tap")

    @property
    def width(self) -> int:
        return len(self.taps)


@dataclass
class TemporalSequence:
    """Patches ordered from the earliest history frame to the base frame.

    ``anchor`` is the trace start point the sequence was built for; it can
    differ from the base frame centre when the base patch is shifted.
    ``heading`` is the seed's unit direction, set on the first patch of a
    trace only.
    """

    frames: list[Patch]
    centers: list[Point]
    anchor: Optional[Point] = None
    history: list[Point] = field(default_factory=list)
    heading: Optional[tuple[float, float]] = None

    def __post_init__(self):
        if not 1 <= len(self.frames) <= MAX_SEQUENCE_LENGTH:
            raise InvalidArgumentError(
                f"Sequence length must be 1..{MAX_SEQUENCE_LENGTH}, got {len(self.frames)}"
            )
        if len({frame.pixels.shape for frame in self.frames}) != 1:
            raise InvalidArgumentError("All frames of a sequence must share one size")

    @property
    def base(self) -> Patch:
        return self.frames[-1]

    def with_base(self, base: Patch, center: Point) -> "TemporalSequence":
        """Same history, different base frame."""
        return TemporalSequence(
            frames=self.frames[:-1] + [base],
            centers=self.centers[:-1] + [center],
            anchor=self.anchor,
            history=list(self.history),
            heading=self.heading,
        )


def causal_conv_time(sequence: Sequence[np.ndarray], kernel: CausalKernel) -> list[np.ndarray]:
    """Convolve frames along time using present and past frames only.

    Missing history before frame 0 is filled by replicating frame 0.
    """
    if not sequence:
        raise InvalidArgumentError("Sequence must contain at least one frame")
    frames = np.stack([np.asarray(frame, dtype=float) for frame in sequence])
    output = []
    for j in range(len(frames)):
        acc = np.zeros_like(frames[0])
        for k, tap in enumerate(kernel.taps):
            acc = acc + tap * frames[max(j - k, 0)]
        output.append(acc)
    return output


def _walk_back(path: np.ndarray, step: float, count: int) -> list[Point]:
    """Points at arc lengths step, 2*step, ... along ``path`` (as far as it reaches)."""
    if len(path) < 2:
        return []
    segment = np.sqrt((np.diff(path, axis=0) ** 2).sum(axis=1))
    arc = np.concatenate([[0.0], np.cumsum(segment)])
    points = []
    for k in range(1, count + 1):
        distance = k * step
        if distance > arc[-1] + 1e-9:
            break
        index = min(int(np.searchsorted(arc, distance, side="right")) - 1, len(segment) - 1)
        t = (distance - arc[index]) / segment[index] if segment[index] > 0 else 0.0
        x, y = path[index] + t * (path[index + 1] - path[index])
        points.append((int(round(x)), int(round(y))))
    return points


def build_temporal_sequence(
    tree,
    image: np.ndarray,
    target: Point,
    step: int = DEFAULT_STEP,
    size: int = DEFAULT_PATCH_SIZE,
    heading: Optional[Sequence[float]] = None,
) -> TemporalSequence:
    """Crop up to four history patches stepping back along the tree from ``target``.

    The walk starts at the tree node nearest the target and follows stored
    centerlines toward the origin, crossing into grandparent edges when the
    parent edge is too short.  A tree without history yields the base patch
    alone; ``heading`` is then kept on the sequence.
    """
    height, width = image.shape[:2]
    tx, ty = target
    if not (0 <= tx < width and 0 <= ty < height):
        raise InvalidArgumentError(f"Target {target} lies outside the image")
    base = crop_patch(image, target, size)

    history: list[Point] = []
    if tree is not None and tree.node_count > 0:
        node, distance = tree.nearest_node(target)
        if distance > size:
            raise InvalidTargetError(
                f"Target {target} is {distance:.1f} px from the nearest tree node"
            )
        path = np.asarray(tree.path_to_origin(node), dtype=float)
        history = _walk_back(path, step, MAX_SEQUENCE_LENGTH - 1)

    # earliest frame first
    centers = list(reversed(history)) + [target]
    frames = [crop_patch(image, center, size) for center in centers[:-1]] + [base]
    logger.debug(f"Temporal sequence at {target}: {len(frames)} frame(s)")
    kept = None if history or heading is None else (float(heading[0]), float(heading[1]))
    return TemporalSequence(frames=frames, centers=centers, anchor=target, history=history, heading=kept)

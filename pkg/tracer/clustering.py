"""Flat-kernel mean-shift clustering of embedding vectors."""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial.distance import cdist

from tracer.errors import EmptyInputError, InvalidArgumentError

logger = logging.getLogger(__name__)

# seeds shifted per distance-matrix block
_CHUNK = 1024


@dataclass(frozen=True)
class MeanShiftParams:
    """Flat-kernel mean-shift settings.

    ``shift_tol`` defaults to 1e-3 * bandwidth and ``merge_radius`` to
    bandwidth / 2 when left unset.
    """

    bandwidth: float = 1.0
    max_iters: int = 300
    shift_tol: Optional[float] = None
    merge_radius: Optional[float] = None
    seed_stride: int = 1

    def __post_init__(self):
        if self.bandwidth <= 0:
            raise InvalidArgumentError(f"Bandwidth must be positive, got {self.bandwidth}")
        if self.max_iters < 1:
            raise InvalidArgumentError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.seed_stride < 1:
            raise InvalidArgumentError(f"seed_stride must be >= 1, got {self.seed_stride}")
        if self.merge_radius is not None and self.merge_radius > self.bandwidth:
            raise InvalidArgumentError("merge_radius must not exceed bandwidth")

    @property
    def tol(self) -> float:
        return self.shift_tol if self.shift_tol is not None else 1e-3 * self.bandwidth

    @property
    def merge(self) -> float:
        return self.merge_radius if self.merge_radius is not None else self.bandwidth / 2


def _shift(seeds: np.ndarray, points: np.ndarray, bandwidth: float) -> np.ndarray:
    """Move each seed to the mean of the points within ``bandwidth``."""
    shifted = np.empty_like(seeds)
    for start in range(0, len(seeds), _CHUNK):
        block = seeds[start : start + _CHUNK]
        within = (cdist(block, points) <= bandwidth).astype(float)
        counts = within.sum(axis=1, keepdims=True)
        # a seed always sees at least itself unless it drifted off the data
        safe = np.where(counts > 0, counts, 1.0)
        shifted[start : start + _CHUNK] = np.where(counts > 0, within @ points / safe, block)
    return shifted


def _merge(positions: np.ndarray, radius: float) -> tuple[np.ndarray, np.ndarray]:
    """Greedily merge converged positions closer than ``radius``.

    Positions are visited in lexicographic order so the result does not depend
    on input order.
    """
    order = np.lexsort(positions.T[::-1])
    representatives: list[np.ndarray] = []
    members: list[list[int]] = []
    assignment = np.empty(len(positions), dtype=int)
    for index in order:
        position = positions[index]
        if representatives:
            distances = np.sqrt(((np.asarray(representatives) - position) ** 2).sum(axis=1))
            nearest = int(np.argmin(distances))
            if distances[nearest] < radius:
                members[nearest].append(index)
                assignment[index] = nearest
                continue
        representatives.append(position)
        members.append([index])
        assignment[index] = len(representatives) - 1
    modes = np.stack([positions[m].mean(axis=0) for m in members])
    return modes, assignment


def mean_shift_modes(points: np.ndarray, params: MeanShiftParams = MeanShiftParams()) -> tuple[np.ndarray, np.ndarray]:
    """Find density modes of ``points`` (N, D) and the mode index of every point."""
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or len(points) == 0:
        raise EmptyInputError("Mean shift needs at least one point")

    seeds = points[:: params.seed_stride].copy()
    active = np.ones(len(seeds), dtype=bool)
    iterations = 0
    while active.any() and iterations < params.max_iters:
        moved = _shift(seeds[active], points, params.bandwidth)
        movement = np.sqrt(((moved - seeds[active]) ** 2).sum(axis=1))
        seeds[active] = moved
        still = movement >= params.tol
        active[np.flatnonzero(active)[~still]] = False
        iterations += 1
    if active.any():
        logger.debug(f"Mean shift stopped at max_iters with {int(active.sum())} seeds moving")

    modes, seed_assignment = _merge(seeds, params.merge)
    if params.seed_stride == 1:
        return modes, seed_assignment
    nearest = np.argmin(cdist(points, modes), axis=1)
    return modes, nearest


def label_pixels(field: np.ndarray, vessel_mask: np.ndarray, params: MeanShiftParams = MeanShiftParams()) -> np.ndarray:
    """Cluster masked pixel embeddings into an instance label map.

    Labels 1..C are ordered by decreasing member count, ties broken by the
    mode coordinates; unmasked pixels are 0.
    """
    vessel_mask = np.asarray(vessel_mask, dtype=bool)
    if field.shape[:2] != vessel_mask.shape:
        raise InvalidArgumentError(
            f"Embedding field {field.shape} does not match mask {vessel_mask.shape}"
        )
    labels = np.zeros(vessel_mask.shape, dtype=np.int32)
    if not vessel_mask.any():
        return labels

    modes, assignment = mean_shift_modes(field[vessel_mask], params)
    counts = np.bincount(assignment, minlength=len(modes))
    order = np.lexsort(tuple(modes.T[::-1]) + (-counts,))
    relabel = np.empty(len(modes), dtype=np.int32)
    relabel[order] = np.arange(1, len(modes) + 1)
    labels[vessel_mask] = relabel[assignment]
    return labels

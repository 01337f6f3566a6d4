"""Embedding producers for Vessel Tracer.

An embedder maps a temporal sequence of patches to a D-dimensional embedding
for every pixel of the base frame.  The network that does this in practice is
trained elsewhere; this module holds the interface and an oracle that builds
the embedding from ground-truth instance masks.
"""

import logging
from dataclasses import dataclass
from typing import Mapping, Optional, Protocol, runtime_checkable

import numpy as np

from tracer.errors import ConfigurationError, InvalidArgumentError
from tracer.loss import DEFAULT_EMBEDDING_DIM, LossParams
from tracer.temporal import TemporalSequence

logger = logging.getLogger(__name__)

# pixels ahead of the anchor searched for a single owner on the first patch
HEADING_REACH = 20


@runtime_checkable
class Embedder(Protocol):
    """Anything that embeds the base frame of a temporal sequence.

    Implementations must be safe to call from several threads at once.
    """

    dim: int

    def embed(self, sequence: TemporalSequence, semantic_mask: np.ndarray) -> np.ndarray:
        """Return an (H, W, dim) field for the base frame."""
        ...


@dataclass(frozen=True)
class OracleParams:
    """Error model of the oracle embedder.

    Args:
        noise_sigma: Standard deviation of Gaussian noise on every component
        corruption_fraction: Share of foreground pixels moved to a wrong instance
        center_spacing: Distance of each instance centre from the origin
        dim: Embedding dimension
    """

    noise_sigma: float = 0.0
    corruption_fraction: float = 0.0
    center_spacing: float = 7.0
    dim: int = DEFAULT_EMBEDDING_DIM

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise InvalidArgumentError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if not 0 <= self.corruption_fraction < 1:
            raise InvalidArgumentError(
                f"corruption_fraction must be in [0, 1), got {self.corruption_fraction}"
            )
        if self.dim < 2:
            raise InvalidArgumentError(f"dim must be >= 2, got {self.dim}")

    def check_separable(self, loss: LossParams = LossParams()) -> None:
        if self.center_spacing < 2 * loss.delta_d:
            raise ConfigurationError(
                f"center_spacing {self.center_spacing} is below 2*delta_d = {2 * loss.delta_d}"
            )


def oracle_embed(
    sequence: TemporalSequence,
    semantic_mask: np.ndarray,
    truth: np.ndarray,
    params: OracleParams = OracleParams(),
    rng_seed: Optional[int | list[int]] = 0,
) -> np.ndarray:
    """Embed instance ``c`` at ``center_spacing`` along axis ``c - 1``.

    A ``corruption_fraction`` of foreground pixels is moved to the centre of
    a different instance present in the patch, or to an unused axis when the
    patch holds one instance only.  Noise is added afterwards.
    """
    base = sequence.base.pixels
    truth = np.asarray(truth)
    if truth.shape != base.shape[:2] or np.shape(semantic_mask) != base.shape[:2]:
        raise InvalidArgumentError(
            f"Truth {truth.shape} and mask {np.shape(semantic_mask)} must match "
            f"the base frame {base.shape[:2]}"
        )
    present = np.unique(truth[truth > 0])
    if present.size and present.max() > params.dim:
        raise ConfigurationError(
            f"Instance id {int(present.max())} needs more than {params.dim} axes"
        )

    rng = np.random.default_rng(rng_seed)
    assigned = truth.astype(np.int64).copy()
    ys, xs = np.nonzero(truth > 0)
    n_corrupt = int(round(params.corruption_fraction * ys.size))
    if n_corrupt:
        picked = rng.choice(ys.size, size=n_corrupt, replace=False)
        if present.size > 1:
            for index in picked:
                own = assigned[ys[index], xs[index]]
                others = present[present != own]
                assigned[ys[index], xs[index]] = int(rng.choice(others))
        else:
            unused = np.setdiff1d(np.arange(1, params.dim + 1), present)
            assigned[ys[picked], xs[picked]] = int(unused[-1])

    centers = np.zeros((params.dim + 1, params.dim))
    centers[np.arange(1, params.dim + 1), np.arange(params.dim)] = params.center_spacing
    field = centers[assigned]
    if params.noise_sigma > 0:
        field = field + rng.normal(0.0, params.noise_sigma, size=field.shape)
    return field


class OracleEmbedder:
    """Oracle bound to the ground-truth masks of every tree in an image.

    Tree ``k`` (in mapping order) becomes instance ``k + 1``.  Pixels owned by
    several trees go to the tree owning the sequence's trace anchor.  When the
    anchor itself sits on an overlap, the history centres decide, most recent
    first; without history the pixels ahead of the anchor along the seed
    heading decide, and failing that the lowest instance id.
    """

    def __init__(
        self,
        tree_masks: Mapping[str, np.ndarray],
        params: OracleParams = OracleParams(),
        seed: int = 0,
        loss_params: LossParams = LossParams(),
    ):
        if not tree_masks:
            raise InvalidArgumentError("Oracle needs at least one tree mask")
        params.check_separable(loss_params)
        if len(tree_masks) > params.dim:
            raise ConfigurationError(f"{len(tree_masks)} trees exceed embedding dim {params.dim}")
        self.tree_ids = list(tree_masks)
        self.owners = np.stack([np.asarray(m, dtype=bool) for m in tree_masks.values()])
        self.params = params
        self.seed = seed
        self.dim = params.dim

    def _owners_at(self, point) -> set[int]:
        x, y = point
        _, height, width = self.owners.shape
        if not (0 <= x < width and 0 <= y < height):
            return set()
        return set(np.flatnonzero(self.owners[:, y, x]).tolist())

    def _preferred(self, sequence: TemporalSequence) -> Optional[int]:
        anchor = sequence.anchor if sequence.anchor is not None else sequence.centers[-1]
        at_anchor = self._owners_at(anchor)
        if len(at_anchor) == 1:
            return next(iter(at_anchor))
        candidates = at_anchor or set(range(len(self.tree_ids)))
        for center in sequence.history:
            owners = self._owners_at(center) & candidates
            if len(owners) == 1:
                return next(iter(owners))
        if sequence.heading is not None:
            dx, dy = sequence.heading
            for k in range(1, HEADING_REACH + 1):
                ahead = (int(round(anchor[0] + k * dx)), int(round(anchor[1] + k * dy)))
                owners = self._owners_at(ahead) & candidates
                if len(owners) == 1:
                    return next(iter(owners))
        if at_anchor:
            return min(at_anchor)
        recent = self._owners_at(sequence.history[0]) if sequence.history else set()
        return min(recent) if recent else None

    def truth_for(self, sequence: TemporalSequence) -> np.ndarray:
        """Instance label map of the base window with overlaps resolved."""
        window = sequence.base.window
        local = self.owners[(slice(None),) + window.slices]
        labels = np.where(local.any(axis=0), np.argmax(local, axis=0) + 1, 0)
        preferred = self._preferred(sequence)
        if preferred is not None:
            labels[local[preferred]] = preferred + 1
        return labels

    def embed(self, sequence: TemporalSequence, semantic_mask: np.ndarray) -> np.ndarray:
        window = sequence.base.window
        anchor = sequence.anchor if sequence.anchor is not None else sequence.centers[-1]
        rng_seed = [
            self.seed,
            window.x,
            window.y,
            max(int(anchor[0]), 0),
            max(int(anchor[1]), 0),
            len(sequence.frames),
        ]
        return oracle_embed(sequence, semantic_mask, self.truth_for(sequence), self.params, rng_seed)

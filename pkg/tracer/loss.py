"""Discriminative embedding loss, its temporal average and analytic gradient.

All norms are Euclidean.  Sums run over instance ids in ascending order and
over pixels in row-major order, so results are deterministic.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from tracer.errors import EmptyInputError, InvalidArgumentError

logger = logging.getLogger(__name__)

DEFAULT_EMBEDDING_DIM = 12
# slack on the hinge thresholds when judging a fit converged
SETTLE_MARGIN = 1e-2


@dataclass(frozen=True)
class LossParams:
    """Hinge thresholds and term weights of the discriminative loss."""

    delta_v: float = 0.5
    delta_d: float = 3.0
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 0.001

    def __post_init__(self):
        if self.delta_v <= 0:
            raise InvalidArgumentError(f"delta_v must be positive, got {self.delta_v}")
        if self.delta_d <= self.delta_v:
            raise InvalidArgumentError(
                f"delta_d ({self.delta_d}) must exceed delta_v ({self.delta_v})"
            )
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise InvalidArgumentError("Loss weights must be non-negative")


@dataclass(frozen=True)
class LossBreakdown:
    attraction: float
    repulsion: float
    regularization: float
    total: float

    def to_dict(self) -> dict:
        return {
            "attraction": self.attraction,
            "repulsion": self.repulsion,
            "regularization": self.regularization,
            "total": self.total,
        }


@dataclass(frozen=True)
class ClusterStats:
    label: int
    mean: np.ndarray
    count: int


@dataclass
class FitResult:
    """Outcome of optimising free per-pixel embeddings."""

    field: np.ndarray
    breakdown: LossBreakdown
    steps: int
    converged: bool


def _validate(field: np.ndarray, labels: np.ndarray) -> None:
    if field.ndim != 3 or field.shape[:2] != labels.shape:
        raise InvalidArgumentError(
            f"Embedding field {field.shape} does not match label map {labels.shape}"
        )
    if field.shape[2] < 2:
        raise InvalidArgumentError(f"Embedding dimension must be >= 2, got {field.shape[2]}")


def cluster_means(field: np.ndarray, labels: np.ndarray) -> list[ClusterStats]:
    """Mean embedding and member count of every nonzero label, by ascending id."""
    field = np.asarray(field, dtype=float)
    labels = np.asarray(labels)
    _validate(field, labels)
    ids = np.unique(labels[labels > 0])
    if ids.size == 0:
        raise EmptyInputError("Label map has no foreground pixels")
    stats = []
    for label in ids:
        members = field[labels == label]
        stats.append(ClusterStats(label=int(label), mean=members.mean(axis=0), count=len(members)))
    return stats


def _hinge_norm(vectors: np.ndarray) -> np.ndarray:
    return np.sqrt((vectors ** 2).sum(axis=-1))


def loss_terms(field: np.ndarray, labels: np.ndarray, params: LossParams = LossParams()) -> LossBreakdown:
    """Attraction, repulsion and regularization terms and their weighted total."""
    field = np.asarray(field, dtype=float)
    labels = np.asarray(labels)
    stats = cluster_means(field, labels)
    n_clusters = len(stats)

    attraction = 0.0
    for cluster in stats:
        members = field[labels == cluster.label]
        hinge = np.maximum(0.0, _hinge_norm(cluster.mean - members) - params.delta_v)
        attraction += float((hinge ** 2).sum()) / cluster.count
    attraction /= n_clusters

    means = np.stack([cluster.mean for cluster in stats])
    repulsion = 0.0
    if n_clusters > 1:
        distances = _hinge_norm(means[:, None, :] - means[None, :, :])
        hinge = np.maximum(0.0, 2.0 * params.delta_d - distances)
        np.fill_diagonal(hinge, 0.0)
        repulsion = float((hinge ** 2).sum()) / (n_clusters * (n_clusters - 1))

    regularization = float(_hinge_norm(means).sum()) / n_clusters

    total = params.alpha * attraction + params.beta * repulsion + params.gamma * regularization
    return LossBreakdown(attraction, repulsion, regularization, total)


def temporal_breakdown(
    per_frame: Sequence[tuple[np.ndarray, np.ndarray]], params: LossParams = LossParams()
) -> LossBreakdown:
    """Average of the per-frame breakdowns over a temporal sequence."""
    if not per_frame:
        raise EmptyInputError("Temporal loss needs at least one frame")
    frames = [loss_terms(field, labels, params) for field, labels in per_frame]
    count = len(frames)
    return LossBreakdown(
        attraction=sum(f.attraction for f in frames) / count,
        repulsion=sum(f.repulsion for f in frames) / count,
        regularization=sum(f.regularization for f in frames) / count,
        total=sum(f.total for f in frames) / count,
    )


def temporal_loss(
    per_frame: Sequence[tuple[np.ndarray, np.ndarray]], params: LossParams = LossParams()
) -> float:
    """Mean discriminative loss over 1..T frames."""
    return temporal_breakdown(per_frame, params).total


def _unit(vectors: np.ndarray) -> np.ndarray:
    norms = _hinge_norm(vectors)[..., None]
    safe = np.where(norms > 0, norms, 1.0)
    return np.where(norms > 0, vectors / safe, 0.0)


def loss_gradient(field: np.ndarray, labels: np.ndarray, params: LossParams = LossParams()) -> np.ndarray:
    """Analytic gradient of the total loss with respect to every pixel embedding.

    Pixel gradients include the path through their cluster mean.  Background
    gradients are zero, as are subgradients at hinge boundaries and at zero norm.
    """
    field = np.asarray(field, dtype=float)
    labels = np.asarray(labels)
    stats = cluster_means(field, labels)
    n_clusters = len(stats)
    means = np.stack([cluster.mean for cluster in stats])

    # gradient of repulsion and regularization with respect to each mean
    mean_grads = np.zeros_like(means)
    if n_clusters > 1:
        diffs = means[:, None, :] - means[None, :, :]
        distances = _hinge_norm(diffs)
        hinge = np.maximum(0.0, 2.0 * params.delta_d - distances)
        np.fill_diagonal(hinge, 0.0)
        pair_grad = -4.0 * hinge[..., None] * _unit(diffs)
        mean_grads += params.beta * pair_grad.sum(axis=1) / (n_clusters * (n_clusters - 1))
    mean_grads += params.gamma * _unit(means) / n_clusters

    gradient = np.zeros_like(field)
    for index, cluster in enumerate(stats):
        member_mask = labels == cluster.label
        members = field[member_mask]
        offsets = cluster.mean - members
        hinge = np.maximum(0.0, _hinge_norm(offsets) - params.delta_v)
        weighted = hinge[:, None] * _unit(offsets)
        scale = 2.0 * params.alpha / (n_clusters * cluster.count)
        pixel_grad = scale * (weighted.sum(axis=0) / cluster.count - weighted)
        pixel_grad += mean_grads[index] / cluster.count
        gradient[member_mask] = pixel_grad
    return gradient


def hinges_settled(field: np.ndarray, labels: np.ndarray, params: LossParams = LossParams()) -> bool:
    """Whether every hinge of the loss is inactive, up to ``SETTLE_MARGIN``.

    Every member lies within ``delta_v`` of its cluster mean and every pair
    of means is at least ``2 * delta_d`` apart.
    """
    stats = cluster_means(field, labels)
    for cluster in stats:
        members = np.asarray(field, dtype=float)[np.asarray(labels) == cluster.label]
        if _hinge_norm(members - cluster.mean).max() > params.delta_v + SETTLE_MARGIN:
            return False
    if len(stats) > 1:
        means = np.stack([cluster.mean for cluster in stats])
        distances = _hinge_norm(means[:, None, :] - means[None, :, :])
        np.fill_diagonal(distances, np.inf)
        if distances.min() < 2.0 * params.delta_d - SETTLE_MARGIN:
            return False
    return True


def fit_free_embeddings(
    labels: np.ndarray,
    params: LossParams = LossParams(),
    rng_seed: Optional[int] = 0,
    dim: int = DEFAULT_EMBEDDING_DIM,
    lr: float = 0.1,
    max_steps: int = 2000,
    tol: float = 1e-3,
) -> FitResult:
    """Treat embeddings as free parameters and descend the loss.

    Foreground embeddings start i.i.d. normal(0, 0.1).  Each pixel's step is
    scaled by ``C * N_c``, the inverse of its weight in the loss, so the
    effective per-pixel step size is ``lr * C * N_c`` and large clusters move
    as fast as small ones.  Descent stops once the separating part of the
    loss (weighted attraction plus repulsion) is at most ``tol`` and
    ``hinges_settled`` holds; the regularization term alone cannot reach that
    level with two or more clusters held ``2 * delta_d`` apart.
    """
    labels = np.asarray(labels)
    if not (labels > 0).any():
        raise EmptyInputError("Label map has no foreground pixels")
    rng = np.random.default_rng(rng_seed)
    field = np.zeros(labels.shape + (dim,))
    foreground = labels > 0
    field[foreground] = rng.normal(0.0, 0.1, size=(int(foreground.sum()), dim))

    ids, counts = np.unique(labels[foreground], return_counts=True)
    step_scale = np.zeros(labels.shape)
    step_scale[foreground] = len(ids) * counts[np.searchsorted(ids, labels[foreground])]
    step_scale = step_scale[..., None]

    def separation(b: LossBreakdown) -> float:
        return params.alpha * b.attraction + params.beta * b.repulsion

    def done(b: LossBreakdown) -> bool:
        return separation(b) <= tol and hinges_settled(field, labels, params)

    breakdown = loss_terms(field, labels, params)
    steps = 0
    while not done(breakdown) and steps < max_steps:
        field -= lr * step_scale * loss_gradient(field, labels, params)
        steps += 1
        breakdown = loss_terms(field, labels, params)

    converged = done(breakdown)
    if not converged:
        logger.warning(
            f"Free embedding fit did not converge after {steps} steps "
            f"(separation loss {separation(breakdown):.3g})"
        )
    else:
        logger.debug(f"Free embedding fit converged after {steps} steps")
    return FitResult(field=field, breakdown=breakdown, steps=steps, converged=converged)

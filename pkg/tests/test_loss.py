"""Tests for the discriminative loss and its gradient."""

import itertools

import numpy as np
import pytest

from tracer.errors import EmptyInputError, InvalidArgumentError
from tracer.loss import (
    LossParams,
    cluster_means,
    fit_free_embeddings,
    hinges_settled,
    loss_gradient,
    loss_terms,
    temporal_breakdown,
    temporal_loss,
)


def numeric_gradient(field, labels, params, eps=1e-5):
    gradient = np.zeros_like(field)
    for index in np.ndindex(field.shape):
        if labels[index[:2]] == 0:
            continue
        plus = field.copy()
        minus = field.copy()
        plus[index] += eps
        minus[index] -= eps
        gradient[index] = (
            loss_terms(plus, labels, params).total - loss_terms(minus, labels, params).total
        ) / (2 * eps)
    return gradient


def random_configuration(rng, clusters, dim, shape=(4, 5)):
    labels = rng.integers(0, clusters + 1, size=shape)
    labels.flat[:clusters] = np.arange(1, clusters + 1)
    field = rng.normal(0.0, 1.0, size=shape + (dim,))
    return field, labels


class TestParams:
    def test_defaults(self):
        params = LossParams()
        assert (params.delta_v, params.delta_d) == (0.5, 3.0)
        assert (params.alpha, params.beta, params.gamma) == (1.0, 1.0, 0.001)

    @pytest.mark.parametrize(
        "kwargs",
        [{"delta_v": 0.0}, {"delta_v": 2.0, "delta_d": 1.0}, {"gamma": -1.0}],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(InvalidArgumentError):
            LossParams(**kwargs)


class TestLossTerms:
    def test_attraction_of_spread_cluster(self):
        field = np.zeros((1, 2, 2))
        field[0, 0] = [1.0, 0.0]
        field[0, 1] = [-1.0, 0.0]
        labels = np.array([[1, 1]])
        terms = loss_terms(field, labels)
        # each pixel is 1 from the mean: hinge 0.5, squared 0.25, averaged over 2 pixels
        assert terms.attraction == pytest.approx(0.25)
        assert terms.repulsion == 0.0
        assert terms.regularization == pytest.approx(0.0)

    def test_repulsion_of_close_means(self):
        field = np.zeros((1, 2, 2))
        field[0, 1] = [2.0, 0.0]
        labels = np.array([[1, 2]])
        terms = loss_terms(field, labels)
        assert terms.attraction == 0.0
        assert terms.repulsion == pytest.approx(16.0)
        assert terms.regularization == pytest.approx(1.0)
        assert terms.total == pytest.approx(16.0 + 0.001)

    def test_separated_clusters_have_no_hinge_loss(self):
        field = np.zeros((1, 3, 3))
        field[0, 0] = [7.0, 0.0, 0.0]
        field[0, 1] = [0.0, 7.0, 0.0]
        field[0, 2] = [0.0, 0.0, 7.0]
        terms = loss_terms(field, np.array([[1, 2, 3]]))
        assert terms.attraction == 0.0
        assert terms.repulsion == 0.0
        assert terms.regularization == pytest.approx(7.0)

    def test_background_is_ignored(self, rng):
        field = rng.normal(size=(3, 3, 4))
        labels = np.array([[1, 1, 0], [2, 0, 0], [2, 2, 0]])
        changed = field.copy()
        changed[labels == 0] = 100.0
        assert loss_terms(field, labels).total == pytest.approx(loss_terms(changed, labels).total)

    def test_empty_labels(self):
        with pytest.raises(EmptyInputError):
            loss_terms(np.zeros((2, 2, 3)), np.zeros((2, 2), dtype=int))

    def test_shape_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            loss_terms(np.zeros((2, 3, 3)), np.ones((2, 2), dtype=int))

    def test_cluster_means(self):
        field = np.arange(8, dtype=float).reshape(2, 2, 2)
        stats = cluster_means(field, np.array([[2, 2], [0, 5]]))
        assert [s.label for s in stats] == [2, 5]
        assert np.allclose(stats[0].mean, [1.0, 2.0])
        assert stats[1].count == 1


def test_temporal_loss_is_frame_average(rng):
    frames = [random_configuration(rng, c, 3) for c in (1, 2, 3)]
    expected = np.mean([loss_terms(f, l).total for f, l in frames])
    assert temporal_loss(frames) == pytest.approx(expected)
    breakdown = temporal_breakdown(frames)
    assert breakdown.total == pytest.approx(expected)
    assert set(breakdown.to_dict()) == {"attraction", "repulsion", "regularization", "total"}
    with pytest.raises(EmptyInputError):
        temporal_loss([])


@pytest.mark.parametrize("clusters,dim", itertools.product([1, 2, 3, 5], [2, 12]))
def test_gradient_matches_finite_differences(rng, clusters, dim):
    params = LossParams()
    for _ in range(3):
        field, labels = random_configuration(rng, clusters, dim)
        analytic = loss_gradient(field, labels, params)
        numeric = numeric_gradient(field, labels, params)
        assert np.allclose(analytic, numeric, rtol=1e-4, atol=1e-7)


def test_gradient_is_zero_on_background(rng):
    field, labels = random_configuration(rng, 2, 3)
    labels[0, :] = 0
    labels.flat[5] = 1
    labels.flat[6] = 2
    assert not loss_gradient(field, labels)[labels == 0].any()


class TestFitFreeEmbeddings:
    def test_two_clusters_separate(self):
        labels = np.zeros((6, 6), dtype=int)
        labels[:, :3] = 1
        labels[:, 3:] = 2
        fit = fit_free_embeddings(labels, rng_seed=0, tol=1e-5)
        assert fit.converged
        means = [s.mean for s in cluster_means(fit.field, labels)]
        assert np.linalg.norm(means[0] - means[1]) >= 2 * 3.0 - 1e-2

    def test_deterministic(self):
        labels = np.array([[1, 1, 2], [0, 2, 2]])
        a = fit_free_embeddings(labels, rng_seed=5)
        b = fit_free_embeddings(labels, rng_seed=5)
        assert np.array_equal(a.field, b.field)
        assert a.steps == b.steps

    def test_background_stays_zero(self):
        labels = np.array([[1, 0], [0, 2]])
        fit = fit_free_embeddings(labels)
        assert not fit.field[labels == 0].any()

    def test_not_converging_is_reported(self, caplog):
        labels = np.array([[1, 2]])
        fit = fit_free_embeddings(labels, max_steps=1, tol=0.0)
        assert not fit.converged
        assert fit.steps == 1
        assert "did not converge" in caplog.text

    def test_empty(self):
        with pytest.raises(EmptyInputError):
            fit_free_embeddings(np.zeros((3, 3), dtype=int))

    def test_single_cluster_converges_inside_delta_v(self):
        labels = np.ones((5, 6), dtype=int)
        fit = fit_free_embeddings(labels, rng_seed=2)
        assert fit.converged
        (cluster,) = cluster_means(fit.field, labels)
        assert np.linalg.norm(fit.field[labels == 1] - cluster.mean, axis=1).max() <= 0.5
        assert fit.breakdown.repulsion == 0.0

    def test_six_clusters_in_twelve_dimensions(self):
        labels = np.repeat(np.arange(1, 7)[None, :], 6, axis=0)
        params = LossParams()
        fit = fit_free_embeddings(labels, params, rng_seed=3, tol=1e-5)
        assert fit.converged
        means = cluster_means(fit.field, labels)
        for cluster in means:
            members = fit.field[labels == cluster.label]
            assert np.linalg.norm(members - cluster.mean, axis=1).max() <= params.delta_v + 1e-2
        pairs = list(itertools.combinations(means, 2))
        assert len(pairs) == 15
        for a, b in pairs:
            assert np.linalg.norm(a.mean - b.mean) >= 2 * params.delta_d - 1e-2

    def test_converged_fits_keep_every_member_inside_the_margin(self):
        rng = np.random.default_rng(1)
        params = LossParams()
        for trial in range(12):
            labels = rng.integers(0, int(rng.integers(2, 5)), size=(8, 8))
            labels[0, 0] = 1
            fit = fit_free_embeddings(labels, params, rng_seed=trial, tol=1e-5)
            if not fit.converged:
                continue
            assert hinges_settled(fit.field, labels, params)
            for cluster in cluster_means(fit.field, labels):
                members = fit.field[labels == cluster.label]
                assert np.linalg.norm(members - cluster.mean, axis=1).max() <= params.delta_v + 1e-2


class TestHingesSettled:
    def test_member_just_outside_delta_v(self):
        labels = np.array([[1, 1], [2, 2]])
        field = np.zeros((2, 2, 2))
        field[0, 0] = [0.52, 0.0]
        field[0, 1] = [-0.52, 0.0]
        field[1, :] = [10.0, 0.0]
        assert not hinges_settled(field, labels)
        field[0, 0] = [0.505, 0.0]
        field[0, 1] = [-0.505, 0.0]
        assert hinges_settled(field, labels)

    def test_means_too_close(self):
        labels = np.array([[1, 2]])
        field = np.array([[[0.0, 0.0], [5.98, 0.0]]])
        assert not hinges_settled(field, labels)
        field[0, 1] = [5.995, 0.0]
        assert hinges_settled(field, labels)

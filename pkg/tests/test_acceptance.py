"""Desk-scale end-to-end checks on synthetic scenes.

These run the whole pipeline many times and take minutes; select them with
``pytest -m slow``.
"""

import numpy as np
import pytest
from scipy import stats

from tests.test_loss import numeric_gradient, random_configuration
from tests.test_raster import brute_force_node_types
from tracer.clustering import label_pixels
from tracer.embedder import OracleEmbedder, OracleParams
from tracer.errors import GenerationError
from tracer.loss import LossParams, cluster_means, fit_free_embeddings, loss_gradient
from tracer.metrics import InstanceSetPair, dice, evaluate_instances, instances_from_label_map
from tracer.raster import node_type_map, skeletonize
from tracer.synthetic import SceneSpec, TreeSpec, generate_scene
from tracer.tracing import TraceConfig, trace_all
from tracer.tree import BIFURCATION

pytestmark = pytest.mark.slow

SCENES = 30


def scene_for(index, noise_sigma=0.0):
    """A seeded scene with 1-3 trees of depth 0-3; retried with the next seed if it cannot fit."""
    rng = np.random.default_rng(index)
    for attempt in range(20):
        trees = []
        for _ in range(int(rng.integers(1, 4))):
            depth = int(rng.integers(0, 4))
            length = (25.0, 40.0) if depth >= 2 else (40.0, 60.0)
            trees.append(TreeSpec(depth=depth, length_range=length, width_range=(4.0, 6.0)))
        spec = SceneSpec(trees=tuple(trees), noise_sigma=noise_sigma, rng_seed=1000 * index + attempt)
        try:
            return generate_scene(spec)
        except GenerationError:
            continue
    raise AssertionError(f"no scene fits for index {index}")


def tree_dice(result, scene):
    """Dice against the tree's mask, ignoring pixels shared with other trees."""
    truth = scene.instance_masks[result.tree_id]
    shared = np.zeros_like(truth)
    for tree_id, mask in scene.instance_masks.items():
        if tree_id != result.tree_id:
            shared |= mask & truth
    return dice(result.mask & ~shared, truth & ~shared)


def trace_scene(scene, oracle_params=OracleParams(), config=TraceConfig(), seed=0):
    oracle = OracleEmbedder(scene.instance_masks, oracle_params, seed=seed)
    return trace_all(scene.image, scene.semantic, scene.seeds, oracle, config)


def test_gradient_matches_finite_differences_broadly():
    rng = np.random.default_rng(0)
    params = LossParams()
    checked = 0
    for clusters in range(1, 7):
        for dim in (2, 12):
            for _ in range(9):
                field, labels = random_configuration(rng, clusters, dim, shape=(3, 4))
                analytic = loss_gradient(field, labels, params)
                numeric = numeric_gradient(field, labels, params)
                scale = np.maximum(np.abs(numeric), 1e-3)
                assert np.max(np.abs(analytic - numeric) / scale) <= 1e-4
                checked += 1
    assert checked >= 100


def test_free_embeddings_separate_and_cluster_back():
    rng = np.random.default_rng(1)
    params = LossParams()
    converged = 0
    for trial in range(50):
        labels = rng.integers(0, int(rng.integers(2, 5)), size=(8, 8))
        if not (labels > 0).any():
            labels[0, 0] = 1
        fit = fit_free_embeddings(labels, params, rng_seed=trial, tol=1e-5)
        if not fit.converged:
            continue
        converged += 1
        means = cluster_means(fit.field, labels)
        for cluster in means:
            members = fit.field[labels == cluster.label]
            radius = np.linalg.norm(members - cluster.mean, axis=1).max()
            assert radius <= params.delta_v + 1e-2
        for i, a in enumerate(means):
            for b in means[i + 1 :]:
                assert np.linalg.norm(a.mean - b.mean) >= 2 * params.delta_d - 1e-2
        clusters = label_pixels(fit.field, labels > 0)
        report = evaluate_instances(
            InstanceSetPair(instances_from_label_map(clusters), instances_from_label_map(labels))
        )
        assert report.sbd == 1.0
    assert converged >= 48


def test_node_types_on_random_skeletons():
    rng = np.random.default_rng(2)
    for _ in range(100):
        skeleton = skeletonize(rng.random((32, 32)) < 0.4)
        assert np.array_equal(node_type_map(skeleton), brute_force_node_types(skeleton))


def test_noiseless_tracing_recovers_every_tree():
    for index in range(SCENES):
        scene = scene_for(index)
        for result in trace_scene(scene):
            truth_tree = scene.trees[result.tree_id]
            assert tree_dice(result, scene) >= 0.99, (index, result.tree_id)
            assert result.tree.census()[BIFURCATION] == truth_tree.census()[BIFURCATION], (
                index,
                result.tree_id,
            )


def test_noisy_tracing_mostly_recovers_trees():
    params = OracleParams(noise_sigma=0.3 * LossParams().delta_v, corruption_fraction=0.1)
    passed = 0
    for index in range(SCENES):
        scene = scene_for(index)
        results = trace_scene(scene, params, seed=index)
        passed += all(tree_dice(r, scene) >= 0.95 for r in results)
    assert passed >= 0.9 * SCENES


def test_multi_sampling_beats_single_sample():
    params = OracleParams(corruption_fraction=0.2)
    single = TraceConfig(shifts=((0, 0),))
    wins = losses = 0
    for index in range(SCENES):
        scene = scene_for(index)
        multi_dice = np.mean([tree_dice(r, scene) for r in trace_scene(scene, params, seed=index)])
        single_dice = np.mean([tree_dice(r, scene) for r in trace_scene(scene, params, single, seed=index)])
        wins += multi_dice > single_dice
        losses += multi_dice < single_dice
    assert wins > losses
    assert stats.binomtest(wins, wins + losses, 0.5, alternative="greater").pvalue < 0.05

"""Tests for causal temporal convolution and temporal sequences."""

import numpy as np
import pytest

from tracer.errors import InvalidArgumentError, InvalidTargetError
from tracer.raster import crop_patch
from tracer.temporal import (
    CausalKernel,
    TemporalSequence,
    build_temporal_sequence,
    causal_conv_time,
)
from tracer.tree import ENDPOINT, VesselTree


def straight_tree(length=60):
    tree = VesselTree("t", (10, 100))
    tip = tree.add_node(ENDPOINT, (10 + length, 100))
    tree.add_edge(tree.origin, tip, [(10, 100), (10 + length, 100)])
    return tree, tip


class TestCausalConv:
    def test_identity_kernel(self, rng):
        frames = [rng.random((3, 3)) for _ in range(4)]
        out = causal_conv_time(frames, CausalKernel((1.0,)))
        assert all(np.array_equal(a, b) for a, b in zip(frames, out))

    def test_replicate_padding(self):
        frames = [np.full((2, 2), float(v)) for v in (1, 2, 3)]
        out = causal_conv_time(frames, CausalKernel((1.0, 1.0, 1.0)))
        assert [o[0, 0] for o in out] == [3.0, 4.0, 6.0]

    def test_perturbing_a_frame_leaves_earlier_outputs_untouched(self, rng):
        for _ in range(100):
            frames = [rng.normal(size=(4, 4)) for _ in range(5)]
            kernel = CausalKernel(tuple(rng.normal(size=int(rng.integers(1, 6)))))
            j = int(rng.integers(0, 5))
            changed = [f.copy() for f in frames]
            changed[j] = changed[j] + rng.normal(size=(4, 4))
            before = causal_conv_time(frames, kernel)
            after = causal_conv_time(changed, kernel)
            for k in range(j):
                assert np.array_equal(before[k], after[k])

    def test_empty_sequence(self):
        with pytest.raises(InvalidArgumentError):
            causal_conv_time([], CausalKernel((1.0,)))

    def test_empty_kernel(self):
        with pytest.raises(InvalidArgumentError):
            CausalKernel(())


class TestTemporalSequence:
    def test_length_limits(self):
        patch = crop_patch(np.zeros((20, 20)), (10, 10), 8)
        with pytest.raises(InvalidArgumentError):
            TemporalSequence(frames=[patch] * 6, centers=[(10, 10)] * 6)
        with pytest.raises(InvalidArgumentError):
            TemporalSequence(frames=[], centers=[])

    def test_frames_share_size(self):
        a = crop_patch(np.zeros((20, 20)), (10, 10), 8)
        b = crop_patch(np.zeros((20, 20)), (10, 10), 6)
        with pytest.raises(InvalidArgumentError):
            TemporalSequence(frames=[a, b], centers=[(10, 10), (10, 10)])

    def test_with_base_keeps_history(self):
        image = np.arange(400, dtype=float).reshape(20, 20)
        frames = [crop_patch(image, (5, 5), 8), crop_patch(image, (10, 10), 8)]
        sequence = TemporalSequence(frames=frames, centers=[(5, 5), (10, 10)], anchor=(10, 10))
        shifted = sequence.with_base(crop_patch(image, (12, 10), 8), (12, 10))
        assert shifted.frames[0] is frames[0]
        assert shifted.base.origin == (8, 6)
        assert shifted.anchor == (10, 10)


class TestBuildSequence:
    def test_without_tree(self):
        image = np.zeros((200, 200))
        sequence = build_temporal_sequence(None, image, (50, 50), size=32)
        assert len(sequence.frames) == 1
        assert sequence.centers == [(50, 50)]

    def test_steps_back_along_the_tree(self):
        tree, tip = straight_tree(60)
        image = np.zeros((200, 200))
        sequence = build_temporal_sequence(tree, image, tree.position(tip), step=10, size=32)
        assert len(sequence.frames) == 5
        assert sequence.centers == [(30, 100), (40, 100), (50, 100), (60, 100), (70, 100)]
        assert sequence.history == [(60, 100), (50, 100), (40, 100), (30, 100)]

    def test_short_tree_gives_fewer_frames(self):
        tree, tip = straight_tree(25)
        sequence = build_temporal_sequence(tree, np.zeros((200, 200)), tree.position(tip), size=32)
        assert len(sequence.frames) == 3

    def test_walk_crosses_into_parent_edges(self):
        tree = VesselTree("t", (10, 10))
        fork = tree.add_node("bifurcation", (10, 25))
        tree.add_edge(tree.origin, fork, [(10, 10), (10, 25)])
        left = tree.add_node(ENDPOINT, (5, 30))
        right = tree.add_node(ENDPOINT, (15, 30))
        tree.add_edge(fork, left, [(10, 25), (5, 30)])
        tree.add_edge(fork, right, [(10, 25), (15, 30)])
        sequence = build_temporal_sequence(tree, np.zeros((64, 64)), (15, 30), step=10, size=16)
        # 5 diagonal pixels from the tip back to the fork, then up the trunk
        assert len(sequence.history) == 2
        assert sequence.history[1][0] == 10

    def test_short_parent_edge_continues_up_the_grandparent(self):
        tree = VesselTree("t", (50, 10))
        fork = tree.add_node("bifurcation", (50, 50))
        tree.add_edge(tree.origin, fork, [(50, 10), (50, 50)])
        tip = tree.add_node(ENDPOINT, (75, 50))
        sibling = tree.add_node(ENDPOINT, (25, 50))
        tree.add_edge(fork, tip, [(50, 50), (75, 50)])
        tree.add_edge(fork, sibling, [(50, 50), (25, 50)])
        sequence = build_temporal_sequence(tree, np.zeros((128, 128)), (75, 50), step=10, size=32)
        assert sequence.history == [(65, 50), (55, 50), (50, 45), (50, 35)]
        # 25 px along the parent edge, the rest back up the 40 px trunk
        back = [75 - x if y == 50 else 25 + (50 - y) for x, y in sequence.history]
        assert back == [10, 20, 30, 40]
        assert sequence.centers[-1] == (75, 50)

    def test_target_far_from_tree(self):
        tree, _ = straight_tree(20)
        with pytest.raises(InvalidTargetError):
            build_temporal_sequence(tree, np.zeros((300, 300)), (250, 250), size=32)

    def test_target_outside_image(self):
        with pytest.raises(InvalidArgumentError):
            build_temporal_sequence(None, np.zeros((50, 50)), (60, 10), size=16)

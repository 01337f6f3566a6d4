"""Tests for instance segmentation scores."""

import numpy as np
import pytest

from tracer.errors import InvalidArgumentError
from tracer.metrics import (
    EvalReport,
    InstanceSetPair,
    dice,
    evaluate_instances,
    instances_from_label_map,
)


def brute_force(prediction, truth, smooth=1.0):
    def naive_dice(a, b):
        overlap = sum(1 for x, y in zip(a.flat, b.flat) if x and y)
        return (2 * overlap + smooth) / (a.sum() + b.sum() + smooth)

    def side(left, right):
        if not left or not right:
            return 0.0
        best = []
        for a in left:
            scores = [naive_dice(a, b) for b in right]
            best.append(max(scores))
        return sum(best) / len(best)

    if not prediction and not truth:
        return 1.0, 1.0, 1.0
    specificity = side(prediction, truth)
    sensitivity = side(truth, prediction)
    return specificity, sensitivity, min(specificity, sensitivity)


def random_instances(rng, count, shape=(12, 12)):
    return [rng.random(shape) < rng.uniform(0.05, 0.5) for _ in range(count)]


def ten_pixel_pair():
    a = np.zeros((4, 10), dtype=bool)
    b = np.zeros((4, 10), dtype=bool)
    a[0] = True
    b[2] = True
    return a, b


class TestDice:
    def test_identical(self):
        a, _ = ten_pixel_pair()
        assert dice(a, a) == 1.0

    def test_disjoint(self):
        a, b = ten_pixel_pair()
        assert dice(a, b) == pytest.approx(1 / 21)

    def test_both_empty(self):
        empty = np.zeros((3, 3), dtype=bool)
        assert dice(empty, empty) == 1.0
        assert dice(empty, empty, smooth=0.0) == 1.0

    def test_extent_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            dice(np.zeros((2, 2)), np.zeros((3, 3)))


class TestEvaluateInstances:
    def test_perfect_prediction(self):
        a, b = ten_pixel_pair()
        report = evaluate_instances(InstanceSetPair(prediction=[b, a], truth=[a, b]))
        assert report == EvalReport(specificity=1.0, sensitivity=1.0, sbd=1.0, dic=0)

    def test_merged_prediction(self):
        a, b = ten_pixel_pair()
        report = evaluate_instances(InstanceSetPair(prediction=[a | b], truth=[a, b]))
        assert report.specificity == pytest.approx(21 / 31)
        assert report.sensitivity == pytest.approx(21 / 31)
        assert report.sbd == pytest.approx(21 / 31)
        assert report.dic == 1

    def test_swapping_sides_exchanges_scores(self, rng):
        prediction, truth = random_instances(rng, 3), random_instances(rng, 5)
        forward = evaluate_instances(InstanceSetPair(prediction, truth))
        backward = evaluate_instances(InstanceSetPair(truth, prediction))
        assert forward.specificity == backward.sensitivity
        assert forward.sensitivity == backward.specificity
        assert forward.sbd == backward.sbd

    def test_matches_brute_force(self, rng):
        for _ in range(200):
            prediction = random_instances(rng, int(rng.integers(0, 5)))
            truth = random_instances(rng, int(rng.integers(0, 5)))
            report = evaluate_instances(InstanceSetPair(prediction, truth))
            expected = brute_force(prediction, truth)
            assert (report.specificity, report.sensitivity, report.sbd) == pytest.approx(expected)
            assert report.dic == abs(len(prediction) - len(truth))
            assert 0.0 <= report.sbd <= min(report.specificity, report.sensitivity) <= 1.0

    def test_order_does_not_matter(self, rng):
        prediction, truth = random_instances(rng, 4), random_instances(rng, 3)
        report = evaluate_instances(InstanceSetPair(prediction, truth))
        shuffled = evaluate_instances(InstanceSetPair(prediction[::-1], truth[1:] + truth[:1]))
        assert report.sbd == pytest.approx(shuffled.sbd)
        assert report.specificity == pytest.approx(shuffled.specificity)

    def test_empty_sides(self):
        a, _ = ten_pixel_pair()
        missed = evaluate_instances(InstanceSetPair(prediction=[], truth=[a]))
        assert (missed.specificity, missed.sensitivity, missed.sbd, missed.dic) == (0.0, 0.0, 0.0, 1)
        nothing = evaluate_instances(InstanceSetPair(prediction=[], truth=[]))
        assert nothing.sbd == 1.0 and nothing.dic == 0

    def test_mixed_extents(self):
        with pytest.raises(InvalidArgumentError):
            evaluate_instances(InstanceSetPair([np.zeros((2, 2))], [np.zeros((3, 3))]))

    def test_report_dict(self):
        report = EvalReport(specificity=0.5, sensitivity=0.25, sbd=0.25, dic=2)
        assert report.to_dict() == {"specificity": 0.5, "sensitivity": 0.25, "sbd": 0.25, "dic": 2}


def test_instances_from_label_map():
    labels = np.array([[0, 3, 3], [1, 0, 3]])
    instances = instances_from_label_map(labels)
    assert len(instances) == 2
    assert instances[0].tolist() == [[False, False, False], [True, False, False]]
    assert instances[1].sum() == 3

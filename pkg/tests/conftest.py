"""Shared fixtures for the Vessel Tracer tests."""

import numpy as np
import pytest

from tracer.raster import rasterize_polyline
from tracer.synthetic import SceneSpec, TreeSpec, generate_scene


def draw_polyline(shape, points, radius=0):
    """Boolean mask of a polyline thickened by ``radius`` pixels (Chebyshev)."""
    mask = np.zeros(shape, dtype=bool)
    for x, y in rasterize_polyline(points):
        mask[max(y - radius, 0) : y + radius + 1, max(x - radius, 0) : x + radius + 1] = True
    return mask


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def vertical_vessel():
    """A 5 px wide vertical vessel crossing a 120x120 image top to bottom."""
    return draw_polyline((120, 120), [(60, 0), (60, 119)], radius=2)


@pytest.fixture
def y_vessel():
    """A Y-shaped vessel: trunk from the top edge, two arms to the bottom corners."""
    shape = (100, 100)
    trunk = draw_polyline(shape, [(50, 0), (50, 45)], radius=1)
    left = draw_polyline(shape, [(50, 45), (15, 99)], radius=1)
    right = draw_polyline(shape, [(50, 45), (85, 99)], radius=1)
    return trunk | left | right


@pytest.fixture
def straight_scene():
    spec = SceneSpec(
        width=160,
        height=160,
        trees=(TreeSpec(depth=0, length_range=(110.0, 130.0), width_range=(4.0, 5.0)),),
        noise_sigma=0.0,
        rng_seed=7,
    )
    return generate_scene(spec)


@pytest.fixture
def branching_scene():
    spec = SceneSpec(
        width=200,
        height=200,
        trees=(TreeSpec(depth=1, length_range=(50.0, 60.0), width_range=(4.0, 5.0)),),
        noise_sigma=0.0,
        rng_seed=3,
    )
    return generate_scene(spec)

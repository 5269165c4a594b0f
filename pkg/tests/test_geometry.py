import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import CM, cell_set, raster_fits
from rearrangekit.geometry import (
    Footprint,
    GeometryError,
    Rect,
    Region,
    find_placement,
    is_connected,
    max_inscribed_fit,
    rects_connected,
)


def test_rect_rejects_degenerate_and_nonfinite():
    with pytest.raises(ValueError):
        Rect(0, 0, 0, 1)
    with pytest.raises(ValueError):
        Rect(0, 0, 1, -1)
    with pytest.raises(ValueError):
        Rect(0, 0, math.inf, 1)
    with pytest.raises(ValueError):
        Footprint(0, 1)


def test_rect_basics():
    r = Rect(0, 0, 2, 1)
    assert r.area == 2
    assert r.center == (1, 0.5)
    assert r.intersection(Rect(1, 0, 3, 1)) == Rect(1, 0, 2, 1)
    assert r.intersection(Rect(2, 0, 3, 1)) is None
    assert r.contains(Rect(0.5, 0.2, 1.0, 0.8))


@pytest.mark.parametrize(
    "a, b, expected",
    [
        ((0, 0, 1, 1), (1, 0, 2, 1), True),
        ((0, 0, 1, 1), (1, 1, 2, 2), False),
        ((0, 0, 1, 1), (0.5, 0.5, 2, 2), True),
        ((0, 0, 1, 1), (1.5, 0, 2, 1), False),
    ],
)
def test_rects_connected(a, b, expected):
    assert rects_connected(Rect(*a), Rect(*b)) is expected
    assert rects_connected(Rect(*b), Rect(*a)) is expected


def test_is_connected_chain_and_gap():
    chain = [Rect(0, 0, 1, 1), Rect(1, 0, 2, 1), Rect(2, 0.5, 3, 2)]
    assert is_connected(chain)
    assert not is_connected([Rect(0, 0, 1, 1), Rect(1.1, 0, 2, 1)])


def test_fit_single_rect():
    region = Region.of([Rect(1.2, 1.2, 1.8, 2.0)])
    p = max_inscribed_fit(Footprint(0.5, 0.6), region, 0.01)
    assert p is not None
    assert region.bbox.contains(p.rect)
    assert p.rect.width == pytest.approx(0.52)
    assert p.rect.depth == pytest.approx(0.62)


def test_fit_too_wide():
    assert max_inscribed_fit(Footprint(0.61, 0.3), Region.of([Rect(1.2, 1.2, 1.8, 2.0)]), 0.01) is None


def test_fit_spans_two_rects():
    a, b = Rect(1.2, 1.2, 1.8, 2.0), Rect(1.8, 1.2, 2.2, 2.0)
    f = Footprint(0.9, 0.6)
    assert max_inscribed_fit(f, Region.of([a])) is None
    assert max_inscribed_fit(f, Region.of([b])) is None
    p = max_inscribed_fit(f, Region.of([a, b]), 0.01)
    assert p is not None
    assert p.rect.xmin < 1.8 < p.rect.xmax


def test_fit_lexicographic_lowest_y_then_x():
    # L-shaped union; lowest placement sits in the bottom strip at its left end
    region = Region.of([Rect(0, 0, 2, 0.5), Rect(1.5, 0.5, 2, 2)])
    p = max_inscribed_fit(Footprint(0.3, 0.3), region, 0.0)
    assert p.rect == Rect(0, 0, 0.3, 0.3)


def test_fit_l_shape_corner_not_usable():
    # a 0.6 x 0.6 block does not fit the L formed by two 0.5-wide arms
    region = Region.of([Rect(0, 0, 2, 0.5), Rect(0, 0.5, 0.5, 2)])
    assert max_inscribed_fit(Footprint(0.6, 0.6), region, 0.0) is None
    assert max_inscribed_fit(Footprint(0.5, 1.9), region, 0.0) is not None


def test_negative_margin_rejected():
    with pytest.raises(GeometryError):
        find_placement(Footprint(0.1, 0.1), Region.of([Rect(0, 0, 1, 1)]), margin=-0.1)


def test_must_overlap_constraint():
    left, right = Rect(0, 0, 1, 1), Rect(1, 0, 2, 1)
    p = find_placement(Footprint(0.2, 0.2), Region.of([left, right]), 0.01, must_overlap=[left, right])
    assert p is not None
    fp = p.rect.shrunk(0.01)
    assert fp.overlaps(left) and fp.overlaps(right)


# ---------------------------------------------------------------------------
# properties

cm = st.integers(min_value=0, max_value=300)
extent = st.integers(min_value=5, max_value=300)


@st.composite
def lattice_region(draw):
    n = draw(st.integers(1, 3))
    rects = []
    for _ in range(n):
        x, y, w, d = draw(cm), draw(cm), draw(extent), draw(extent)
        rects.append(Rect(x * CM, y * CM, (x + w) * CM, (y + d) * CM))
    return rects


@settings(max_examples=150, deadline=None)
@given(lattice_region(), st.integers(2, 200), st.integers(2, 200))
def test_fit_matches_raster_oracle(rects, w, d):
    cells = set().union(*(cell_set(r) for r in rects))
    p = max_inscribed_fit(Footprint(w * CM, d * CM), Region.of(rects), 0.01)
    assert (p is not None) == raster_fits(cells, w + 2, d + 2)
    if p is not None:
        assert cell_set(p.rect) <= cells


@settings(max_examples=100, deadline=None)
@given(lattice_region(), lattice_region(), st.integers(2, 150), st.integers(2, 150))
def test_fit_monotone_under_union(rects, extra, w, d):
    f = Footprint(w * CM, d * CM)
    if max_inscribed_fit(f, Region.of(rects)) is not None:
        assert max_inscribed_fit(f, Region.of(rects + extra)) is not None


@settings(max_examples=200, deadline=None)
@given(lattice_region())
def test_connected_is_symmetric(rects):
    a, b = rects[0], rects[-1]
    assert rects_connected(a, b) == rects_connected(b, a)


def test_fit_random_instances_against_oracle():
    rng = random.Random(20240601)
    for _ in range(300):
        rects = []
        for _ in range(rng.randint(1, 3)):
            x, y = rng.randint(0, 100), rng.randint(0, 100)
            rects.append(Rect(x * CM, y * CM, (x + rng.randint(5, 150)) * CM, (y + rng.randint(5, 150)) * CM))
        w, d = rng.randint(2, 120), rng.randint(2, 120)
        cells = set().union(*(cell_set(r) for r in rects))
        p = max_inscribed_fit(Footprint(w * CM, d * CM), Region.of(rects), 0.01)
        assert (p is not None) == raster_fits(cells, w + 2, d + 2)

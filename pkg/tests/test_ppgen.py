import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from oracles import linear_in_region, linear_nearest
from shapeline.errors import EmptyDomainError, InvalidArgumentError
from shapeline.ppgen import (Point, PointSet, Region, Window, nearest_point, pair_distance, plant_points,
                             points_in, read_points, replicate_seed, sample_poisson, stream, write_points)


def test_zero_intensity_gives_empty_set():
    ps = sample_poisson(Window(50, 20, "plane"), 0.0, 3)
    assert len(ps) == 0


def test_sampling_is_deterministic(tmp_path):
    w = Window(40, 30, "torus")
    a, b = sample_poisson(w, 1.0, 99), sample_poisson(w, 1.0, 99)
    assert a.same_as(b)
    write_points(tmp_path / "a.txt", a)
    write_points(tmp_path / "b.txt", b)
    assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()


def test_points_file_round_trip(tmp_path):
    ps = plant_points(sample_poisson(Window(12, 8, "plane"), 2.0, 5), [(6, 4)])
    write_points(tmp_path / "p.txt", ps)
    back = read_points(tmp_path / "p.txt")
    assert np.array_equal(back.xy, ps.xy)
    assert back.planted == ps.planted and back.window == ps.window


def test_unit_window_zero_count_frequency():
    w = Window(1, 1, "torus")
    seeds = 100_000
    zeros = sum(int(np.random.Generator(np.random.PCG64(np.random.SeedSequence(s, spawn_key=(0,)))).poisson(1.0) == 0)
                for s in range(seeds))
    assert abs(zeros / seeds - math.exp(-1)) < 0.005
    # the public sampler draws the count from that same stream
    assert len(sample_poisson(w, 1.0, 0)) == int(stream(0, 0).poisson(1.0))


def test_mean_count_z_test():
    w = Window(100, 100, "torus")
    counts = np.array([len(sample_poisson(w, 1.0, replicate_seed(2024, r))) for r in range(500)])
    assert abs(counts.mean() - 10_000) <= 3 * math.sqrt(10_000 / 500)


def test_disjoint_region_counts_independent():
    w = Window(4, 2, "plane")
    left, right = Region.rect((1, 1), 1, 1), Region.rect((3, 1), 1, 1)
    a, b = [], []
    for s in range(1500):
        ps = sample_poisson(w, 0.5, s)
        a.append(len(points_in(ps, left)))
        b.append(len(points_in(ps, right)))
    a, b = np.minimum(a, 3), np.minimum(b, 3)
    table = np.zeros((4, 4))
    np.add.at(table, (a, b), 1)
    table = table[table.sum(1) > 0][:, table.sum(0) > 0]
    assert stats.chi2_contingency(table)[1] > 0.01


def test_seed_validation():
    with pytest.raises(InvalidArgumentError):
        sample_poisson(Window(1, 1), 1.0, -1)
    with pytest.raises(InvalidArgumentError):
        sample_poisson(Window(1, 1), float("nan"), 1)
    with pytest.raises(InvalidArgumentError):
        Window(0, 1)


def test_plant_points():
    w = Window(200, 200, "torus")
    ps = sample_poisson(w, 0.01, 7)
    assert plant_points(ps, []) is ps
    empty = sample_poisson(w, 0.0, 1)
    one = plant_points(empty, [w.center])
    assert len(one) == 1 and one.planted == (0,)
    two = plant_points(ps, [w.center, (w.center.x + 50, w.center.y)])
    assert len(two) == len(ps) + 2
    assert np.array_equal(two.xy[:len(ps)], ps.xy)
    assert two.planted == (len(ps), len(ps) + 1)
    with pytest.raises(InvalidArgumentError):
        plant_points(ps, [(250, 1)])


def test_nearest_point_small_cases():
    w = Window(10, 10, "plane")
    assert nearest_point(PointSet(w, [(4, 4)]), (0, 0)) == 0
    assert nearest_point(PointSet(w, [(0, 0), (3, 0)]), (1, 0)) == 0
    assert nearest_point(PointSet(w, [(2, 0), (0, 0)]), (1, 0)) == 0  # tie -> smaller index
    with pytest.raises(EmptyDomainError):
        nearest_point(PointSet(w, np.empty((0, 2))), (1, 1))


@pytest.mark.parametrize("topology", ["plane", "torus"])
def test_nearest_and_range_match_linear_scan(topology):
    w = Window(40, 25, topology)
    ps = PointSet(w, stream(11, 0).random((1000, 2)) * [40, 25])
    rng = stream(12, 0)
    for _ in range(100):
        loc = (rng.random() * 40, rng.random() * 25)
        assert nearest_point(ps, loc) == linear_nearest(ps.xy, w, loc)
        disc = Region.disc(loc, rng.random() * 6 + 0.1)
        assert np.array_equal(points_in(ps, disc), linear_in_region(ps.xy, w, disc))
        box = Region.rect(loc, rng.random() * 5 + 0.1, rng.random() * 5 + 0.1)
        assert np.array_equal(points_in(ps, box), linear_in_region(ps.xy, w, box))


def test_points_in_edge_cases():
    w = Window(10, 10, "plane")
    assert len(points_in(PointSet(w, np.empty((0, 2))), Region.disc((5, 5), 1))) == 0
    ps = sample_poisson(w, 1.0, 3)
    assert np.array_equal(points_in(ps, Region.rect((5, 5), 5, 5)), np.arange(len(ps)))
    # closed region: a point exactly on the boundary is inside
    edge = PointSet(w, [(6, 5)])
    assert list(points_in(edge, Region.disc((5, 5), 1))) == [0]


def test_pair_distance_examples():
    assert pair_distance(Window(10, 10, "plane"), Point(3, 3), Point(3, 3)) == 0
    assert pair_distance(Window(10, 10, "plane"), Point(0, 0), Point(3, 4)) == 5
    assert pair_distance(Window(10, 10, "torus"), Point(1, 1), Point(9, 1)) == 2


coords = st.floats(0, 9.999, allow_nan=False)


@settings(max_examples=300, deadline=None)
@given(st.sampled_from(["plane", "torus"]), *[coords] * 6)
def test_pair_distance_is_a_metric(topology, ax, ay, bx, by, cx, cy):
    w = Window(10, 10, topology)
    a, b, c = Point(ax, ay), Point(bx, by), Point(cx, cy)
    ab, ba, bc, ac = (pair_distance(w, a, b), pair_distance(w, b, a), pair_distance(w, b, c),
                      pair_distance(w, a, c))
    assert ab == ba and ab >= 0
    assert ac <= ab + bc + 1e-12
    assert pair_distance(Window(10, 10, "torus"), a, b) <= pair_distance(Window(10, 10, "plane"), a, b)


def test_pair_distance_triangle_on_random_triples():
    for topo in ("plane", "torus"):
        w = Window(10, 7, topo)
        p = stream(4, 0).random((3, 10_000, 2)) * [10, 7]
        ab = w.distance(p[0, :, 0], p[0, :, 1], p[1, :, 0], p[1, :, 1])
        bc = w.distance(p[1, :, 0], p[1, :, 1], p[2, :, 0], p[2, :, 1])
        ac = w.distance(p[0, :, 0], p[0, :, 1], p[2, :, 0], p[2, :, 1])
        assert np.all(ac <= (ab + bc) * (1 + 1e-12))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32), coords, coords)
def test_nearest_point_is_in_its_disc(seed, x, y):
    w = Window(10, 10, "torus")
    ps = sample_poisson(w, 0.5, seed)
    if len(ps) == 0:
        return
    i = nearest_point(ps, (x, y))
    r = pair_distance(w, (x, y), ps[i])
    assert i in points_in(ps, Region.disc((x, y), r)) if r > 0 else True
    d = w.distance(x, y, ps.xy[:, 0], ps.xy[:, 1])
    assert not np.any(d < r)


def test_streams_are_distinct_per_purpose():
    a = stream(5, 0).random(4)
    b = stream(5, 1).random(4)
    assert not np.array_equal(a, b)
    assert replicate_seed(5, 0) != replicate_seed(5, 1)

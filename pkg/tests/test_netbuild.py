import math

import numpy as np
import pytest

from oracles import circumcircle_delaunay, emst_edges, naive_gabriel, naive_rng
from shapeline.errors import (DegenerateGeometryError, DisconnectedGraphError, EmptyDomainError,
                              InvalidArgumentError)
from shapeline.netbuild import (CostRule, add_counterexample_links, apply_cost_rule, build_delaunay,
                                build_gabriel, build_lattice_net, build_power_complete, build_rng,
                                poisson_lines, read_network, unit_lines, write_network)
from shapeline.ppgen import PointSet, Window, sample_poisson, stream
from shapeline.routes import RouteEngine

PLANE = Window(100, 100, "plane")


def pts(*xy, window=PLANE):
    return PointSet(window, np.array(xy, dtype=float))


def test_rng_small_cases():
    assert build_rng(pts((1, 1), (5, 5))).edge_set() == {(0, 1)}
    h = math.sqrt(3) / 2
    assert build_rng(pts((10, 10), (11, 10), (10.5, 10 + h))).edge_set() == {(0, 1), (0, 2), (1, 2)}
    assert build_rng(pts((0, 1), (1, 1), (2, 1))).edge_set() == {(0, 1), (1, 2)}
    with pytest.raises(EmptyDomainError):
        build_rng(pts((1, 1)))


def test_gabriel_small_cases():
    assert build_gabriel(pts((1, 1), (5, 5))).edge_set() == {(0, 1)}
    # (11, 11) sits on the circle with diameter (10,10)-(12,10): boundary does not count
    assert (0, 1) in build_gabriel(pts((10, 10), (12, 10), (11, 11))).edge_set()
    assert (0, 1) not in build_gabriel(pts((10, 10), (12, 10), (11, 10.9))).edge_set()


@pytest.mark.parametrize("topology", ["plane", "torus"])
def test_proximity_graphs_match_triple_loop(topology):
    w = Window(8, 8, topology)
    ps = sample_poisson(w, 50 / 64, 7)
    assert build_rng(ps).edge_set() == naive_rng(ps.xy, w)
    assert build_gabriel(ps).edge_set() == naive_gabriel(ps.xy, w)
    assert build_rng(ps).edge_set() <= build_gabriel(ps).edge_set()


def test_large_instance_matches_triple_loop():
    # above the exhaustive-candidate threshold, candidates come from Delaunay
    w = Window(12, 12, "torus")
    ps = sample_poisson(w, 1.0, 21)
    assert len(ps) > 100
    assert build_rng(ps).edge_set() == naive_rng(ps.xy, w)
    assert build_gabriel(ps).edge_set() == naive_gabriel(ps.xy, w)


def test_delaunay_small_cases():
    assert len(build_delaunay(pts((0, 0), (4, 0), (1, 3))).edges) == 3
    assert len(build_delaunay(pts((0, 0), (4, 0.5), (4.5, 4), (0.3, 3.6))).edges) == 5
    with pytest.raises(DegenerateGeometryError):
        build_delaunay(pts((0, 0), (1, 1), (2, 2), (3, 3)))


def test_delaunay_matches_circumcircle_oracle():
    ps = sample_poisson(Window(10, 10, "plane"), 0.4, 3)
    assert len(ps) >= 30
    assert build_delaunay(ps).edge_set() == circumcircle_delaunay(ps.xy)


def test_torus_delaunay_has_euler_edge_count():
    ps = sample_poisson(Window(30, 30, "torus"), 1.0, 8)
    # a triangulation of the torus has exactly 3n edges
    assert len(build_delaunay(ps).edges) == 3 * len(ps)


@pytest.mark.parametrize("topology", ["plane", "torus"])
def test_inclusion_chain_and_route_monotonicity(topology):
    w = Window(15, 15, topology)
    ps = sample_poisson(w, 1.0, 4)
    nets = [build_rng(ps), build_gabriel(ps), build_delaunay(ps)]
    emst = emst_edges(ps.xy, w)
    sets = [n.edge_set() for n in nets]
    assert emst <= sets[0] <= sets[1] <= sets[2]
    d = [RouteEngine(n).rows(np.arange(20)) for n in nets]
    assert np.all(d[1] <= d[0] * (1 + 1e-12)) and np.all(d[2] <= d[1] * (1 + 1e-12))


def test_geometric_lengths_are_pair_distances():
    ps = sample_poisson(Window(20, 20, "torus"), 1.0, 2)
    for net in (build_rng(ps), build_gabriel(ps), build_delaunay(ps)):
        assert np.array_equal(net.weights, net.geometric_lengths)


def test_robust_to_tiny_perturbation():
    w = Window(20, 20, "plane")
    ps = sample_poisson(w, 1.0, 9)
    base = build_rng(ps).edge_set()
    moved = ps.xy.copy()
    moved[5] += 1e-13
    assert build_rng(PointSet(w, moved)).edge_set() == base


def test_lattice_connector_and_manhattan_distance():
    w = Window(10, 10, "plane")
    ps = pts((0.1, 0.1), (7.6, 3.2), window=w)
    net = build_lattice_net(ps, unit_lines(10), unit_lines(10))
    eng = RouteEngine(net)
    node = lambda x, y: len(ps) + y * 10 + x  # noqa: E731
    k = list(map(tuple, net.edges.tolist())).index((0, node(0, 0)))
    assert net.weights[k] == pytest.approx(math.sqrt(0.02), rel=1e-15)
    assert eng.route_length(node(0, 0), node(3, 4)) == 7
    assert eng.route_length(node(2, 9), node(8, 1)) == 14
    with pytest.raises(InvalidArgumentError):
        build_lattice_net(ps, [], unit_lines(10))


def test_lattice_torus_wraps():
    w = Window(10, 10, "torus")
    net = build_lattice_net(pts((0.5, 0.2), window=w), unit_lines(10), unit_lines(10))
    eng = RouteEngine(net)
    assert eng.route_length(1, 1 + 9) == 1  # node (0,0) to (9,0) across the seam


def test_poisson_lines_are_sorted_inside():
    lines = poisson_lines(500, 1.0, stream(3, 2))
    assert np.all(np.diff(lines) > 0) and lines[0] >= 0 and lines[-1] < 500
    assert abs(len(lines) - 500) < 5 * math.sqrt(500)


def test_cost_rules():
    ps = pts((0, 0), (3, 0), (6, 0))
    net = build_rng(ps)
    assert apply_cost_rule(net, CostRule()) is net
    a = apply_cost_rule(net, CostRule("iid", "exponential", (1.0,), seed=4))
    b = apply_cost_rule(net, CostRule("iid", "exponential", (1.0,), seed=4))
    assert np.array_equal(a.weights, b.weights) and np.all(a.weights > 0)
    sq = apply_cost_rule(net, CostRule("power", alpha=2.0))
    assert list(sq.weights) == [9.0, 9.0]
    with pytest.raises(InvalidArgumentError):
        CostRule("iid", "uniform", (0.0, 1.0))
    with pytest.raises(InvalidArgumentError):
        CostRule("iid", "normal", (0.0, 1.0))
    with pytest.raises(InvalidArgumentError):
        CostRule("power", alpha=0.5)


def test_power_complete_small_cases():
    net = build_power_complete(pts((1, 1), (3, 1)), 2.0, 2.5)
    assert net.edge_set() == {(0, 1)} and list(net.weights) == [4.0]
    ps = sample_poisson(Window(20, 20, "plane"), 0.5, 3)
    one = RouteEngine(build_power_complete(ps, 1.0, 30.0))
    d = one.rows(np.arange(len(ps)))
    e = ps.window.distance(ps.xy[:, None, 0], ps.xy[:, None, 1], ps.xy[None, :, 0], ps.xy[None, :, 1])
    assert np.allclose(d, e, rtol=1e-12, atol=0)
    with pytest.raises(DisconnectedGraphError) as err:
        build_power_complete(pts((1, 1), (2, 1), (50, 50)), 2.0, 2.0)
    assert sorted(err.value.component_sizes) == [1, 2]


def test_power_cutoff_matches_complete_graph():
    w = Window(14, 14, "torus")
    ps = sample_poisson(w, 200 / 196, 5)
    cut = build_power_complete(ps, 1.5, 4.0)
    full = build_power_complete(ps, 1.5, 20.0, certificate_pairs=0)
    assert cut.meta["certificate"]["ok"]
    n = len(ps)
    assert np.allclose(RouteEngine(cut).rows(np.arange(n)), RouteEngine(full).rows(np.arange(n)), rtol=1e-12)


def test_counterexample_links():
    net = build_rng(pts((0, 0), (10, 0), (5, 0.2)))
    assert add_counterexample_links(net, []) is net
    aug = add_counterexample_links(net, [(10, 0.1)])
    assert (0, 1) in aug.edge_set()
    assert RouteEngine(aug).route_length(0, 1) == 10
    with pytest.raises(InvalidArgumentError):
        add_counterexample_links(net, [(10, 1), (10.5, 1)])


def test_band_pairs_route_at_euclidean_distance():
    w = Window(40, 40, "torus")
    ps = sample_poisson(w, 300 / 1600, 6)
    base = build_rng(ps)
    aug = add_counterexample_links(base, [(20, 0.5)])
    n = len(ps)
    e = w.distance(ps.xy[:, None, 0], ps.xy[:, None, 1], ps.xy[None, :, 0], ps.xy[None, :, 1])
    d = RouteEngine(aug).rows(np.arange(n))
    band = (e >= 20) & (e <= 20.5)
    assert band.any()
    assert np.array_equal(d[band], e[band])
    # adding edges never lengthens a route
    assert np.all(d <= RouteEngine(base).rows(np.arange(n)))


def test_network_file_round_trip(tmp_path):
    ps = sample_poisson(Window(6, 6, "torus"), 1.0, 1)
    net = build_lattice_net(ps, unit_lines(6), unit_lines(6))
    write_network(tmp_path / "n.txt", net)
    back = read_network(tmp_path / "n.txt")
    assert np.array_equal(back.edges, net.edges) and np.array_equal(back.weights, net.weights)
    assert np.array_equal(back.positions, net.positions) and back.window == net.window
    write_network(tmp_path / "m.txt", back)
    assert (tmp_path / "m.txt").read_bytes() == (tmp_path / "n.txt").read_bytes()


def test_constructors_are_deterministic():
    ps = sample_poisson(Window(20, 20, "torus"), 1.0, 12)
    assert np.array_equal(build_rng(ps).edges, build_rng(ps).edges)
    assert np.array_equal(build_delaunay(ps).edges, build_delaunay(ps).edges)

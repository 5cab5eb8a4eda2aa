"""Route-lengths: shortest-path distances in a spatial network, and metric checks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, dijkstra

from .errors import DisconnectedGraphError, InvalidArgumentError
from .ppgen import PAIRS, TRIPLES, PointSet, stream

REL_TOL = 1e-9

# cap on the number of distance entries held at once by batched traversals
_BATCH_ENTRIES = 20_000_000


class RouteEngine:
    """Exact shortest-path oracle over a :class:`~shapeline.netbuild.SpatialNetwork`.

    The adjacency is a symmetric CSR matrix built once; traversals are
    scipy's Dijkstra and allocate their own working memory, so one engine
    may be shared by several readers.
    """

    def __init__(self, network):
        self.network = network
        n = network.n_vertices
        e = network.edges
        w = network.weights
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        self.adjacency = csr_matrix((np.concatenate([w, w]), (rows, cols)), shape=(n, n))
        self._labels = None

    @property
    def n_vertices(self) -> int:
        return self.network.n_vertices

    @property
    def positions(self) -> np.ndarray:
        return self.network.positions

    @property
    def window(self):
        return self.network.window

    @property
    def pointset(self) -> PointSet:
        return self.network.pointset

    def _check_vertex(self, u):
        if not 0 <= int(u) < self.n_vertices:
            raise InvalidArgumentError(f"vertex {u} out of range 0..{self.n_vertices - 1}")

    def _component_of(self, v) -> int:
        if self._labels is None:
            _, self._labels = connected_components(self.adjacency, directed=False)
        return int(self._labels[v])

    def distances_from(self, u: int, limit: float = np.inf) -> np.ndarray:
        """Distances from ``u`` to every vertex (``inf`` beyond ``limit``)."""
        self._check_vertex(u)
        return dijkstra(self.adjacency, directed=False, indices=int(u), limit=limit)

    def rows(self, sources) -> np.ndarray:
        """Distance matrix rows for several sources in one call."""
        sources = np.asarray(sources, dtype=np.int64)
        return dijkstra(self.adjacency, directed=False, indices=sources)

    def route_lengths_from(self, u: int, targets) -> np.ndarray:
        targets = np.asarray(targets, dtype=np.int64).reshape(-1)
        for t in targets:
            self._check_vertex(t)
        d = self.distances_from(u)[targets]
        bad = ~np.isfinite(d)
        if np.any(bad):
            v = int(targets[np.argmax(bad)])
            comp = self._component_of(v)
            raise DisconnectedGraphError(f"vertex {v} (component {comp}) unreachable from {u}",
                                         component=comp)
        return d

    def route_length(self, u: int, v: int) -> float:
        return float(self.route_lengths_from(u, [v])[0])

    def ball(self, u: int, ell: float) -> np.ndarray:
        """Sorted vertices at route-length <= ell from u."""
        if not np.isfinite(ell) or ell < 0:
            raise InvalidArgumentError(f"ball radius must be finite and >= 0, got {ell!r}")
        d = self.distances_from(u, limit=ell * (1 + 1e-12) + 1e-300)
        return np.flatnonzero(d <= ell)


class EuclideanEngine:
    """Route-lengths equal to (window) Euclidean distance.

    This is the power-cost model with exponent 1 on the complete graph: the
    direct hop is never beaten, so no graph needs to be stored.
    """

    def __init__(self, pointset: PointSet):
        self._ps = pointset
        self.network = None

    @property
    def n_vertices(self) -> int:
        return len(self._ps)

    @property
    def positions(self) -> np.ndarray:
        return self._ps.xy

    @property
    def window(self):
        return self._ps.window

    @property
    def pointset(self) -> PointSet:
        return self._ps

    def distances_from(self, u: int, limit: float = np.inf) -> np.ndarray:
        xy = self._ps.xy
        d = self.window.distance(xy[u, 0], xy[u, 1], xy[:, 0], xy[:, 1])
        d[d > limit] = np.inf
        return d

    def rows(self, sources) -> np.ndarray:
        xy = self._ps.xy
        s = np.asarray(sources, dtype=np.int64)
        return self.window.distance(xy[s, 0][:, None], xy[s, 1][:, None], xy[None, :, 0], xy[None, :, 1])

    def route_lengths_from(self, u: int, targets) -> np.ndarray:
        t = np.asarray(targets, dtype=np.int64).reshape(-1)
        xy = self._ps.xy
        return self.window.distance(xy[u, 0], xy[u, 1], xy[t, 0], xy[t, 1])

    def route_length(self, u: int, v: int) -> float:
        return float(self.route_lengths_from(u, [v])[0])

    def ball(self, u: int, ell: float) -> np.ndarray:
        if not np.isfinite(ell) or ell < 0:
            raise InvalidArgumentError(f"ball radius must be finite and >= 0, got {ell!r}")
        return np.flatnonzero(self.distances_from(u) <= ell)


def route_length(eng, u: int, v: int) -> float:
    """Shortest-path distance between two vertices."""
    return eng.route_length(u, v)


def route_lengths_from(eng, u: int, targets) -> np.ndarray:
    """Distances from ``u`` to each of ``targets`` with a single traversal."""
    return eng.route_lengths_from(u, targets)


def ball(eng, u: int, ell: float) -> np.ndarray:
    """Vertices at route-length at most ``ell`` from ``u``."""
    return eng.ball(u, ell)


def pair_route_lengths(eng, us, vs) -> np.ndarray:
    """Route-lengths for many (u, v) pairs, grouping traversals by source.

    ``vs`` may also be a ``(k, m)`` array of ``k`` target lists sharing the
    sources ``us``; the result then has the same shape.
    """
    us = np.asarray(us, dtype=np.int64)
    vs = np.asarray(vs, dtype=np.int64)
    flat = vs.ndim == 1
    vs = np.atleast_2d(vs)
    out = np.empty(vs.shape)
    src = np.unique(us)
    chunk = max(1, _BATCH_ENTRIES // max(eng.n_vertices, 1))
    for k in range(0, len(src), chunk):
        block = src[k:k + chunk]
        rows = np.atleast_2d(eng.rows(block))
        sel = np.isin(us, block)
        r = np.searchsorted(block, us[sel])
        out[:, sel] = rows[r[None, :], vs[:, sel]]
    if not np.all(np.isfinite(out)):
        raise DisconnectedGraphError("some sampled pairs are in different components")
    return out[0] if flat else out


@dataclass
class MetricReport:
    """Outcome of a sampled metric check.

    ``violations`` holds ``(witness, relative_magnitude)``; magnitudes are
    relative to the larger side of the compared inequality.
    """

    samples_checked: int
    violations: list = field(default_factory=list)
    max_violation: float = 0.0

    @property
    def ok(self) -> bool:
        return not self.violations


def _relative_excess(lhs, rhs):
    scale = np.maximum(np.maximum(np.abs(lhs), np.abs(rhs)), np.finfo(float).tiny)
    return (lhs - rhs) / scale


def check_triangle(eng, n_triples: int, seed: int) -> MetricReport:
    """Sample vertex triples and report ``d(a,c) > d(a,b) + d(b,c)`` beyond relative 1e-9."""
    if n_triples <= 0 or eng.n_vertices == 0:
        return MetricReport(0)
    rng = stream(seed, TRIPLES)
    a, b, c = rng.integers(0, eng.n_vertices, (3, n_triples))
    dab, dac = pair_route_lengths(eng, a, np.stack([b, c]))
    dbc = pair_route_lengths(eng, b, c)
    rel = _relative_excess(dac, dab + dbc)
    bad = np.flatnonzero(rel > REL_TOL)
    viol = [((int(a[i]), int(b[i]), int(c[i])), float(rel[i])) for i in bad]
    return MetricReport(n_triples, viol, float(max(rel.max(), 0.0)))


def check_euclid_lb(eng, n_pairs: int, seed: int) -> MetricReport:
    """Sample vertex pairs and report route-lengths shorter than the straight-line distance."""
    if n_pairs <= 0 or eng.n_vertices < 2:
        return MetricReport(0)
    rng = stream(seed, PAIRS)
    u, v = rng.integers(0, eng.n_vertices, (2, n_pairs))
    d = pair_route_lengths(eng, u, v)
    p = eng.positions
    e = eng.window.distance(p[u, 0], p[u, 1], p[v, 0], p[v, 1])
    rel = _relative_excess(e, d)
    bad = np.flatnonzero(rel > REL_TOL)
    viol = [((int(u[i]), int(v[i])), float(rel[i])) for i in bad]
    return MetricReport(n_pairs, viol, float(max(rel.max(), 0.0)))

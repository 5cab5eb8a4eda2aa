"""Spatial network models over a point set.

Proximity graphs (relative neighbourhood, Gabriel), Delaunay triangulation,
lattice networks with straight connectors, cost-rule reweighting, the
power-cost near-complete graph and long-link "band" augmentation.

Emptiness regions are open: a third point kills an edge only if it lies
strictly inside the region, by more than ``BOUNDARY_TOL * L**2`` in the
squared-distance predicate (``L`` the edge length).  Points on the boundary
never count as witnesses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from numba import njit
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import Delaunay, QhullError, cKDTree

from .errors import (DegenerateGeometryError, DisconnectedGraphError,
                     EmptyDomainError, InvalidArgumentError)
from .ppgen import CERTIFICATE, COSTS, PointSet, Window, fmt, stream

BOUNDARY_TOL = 1e-12

# below this size candidate pairs are enumerated exhaustively
EXHAUSTIVE_CANDIDATES = 64

LUNE, GABRIEL = 0, 1


@dataclass(frozen=True, eq=False)
class SpatialNetwork:
    """Points plus symmetric weighted edges.

    Vertices ``0 .. len(pointset) - 1`` are the points of ``pointset`` (same
    indices); vertices after that are ``extra_vertices`` (lattice nodes).
    ``edges`` is an ``(E, 2)`` array with ``u < v``, lexicographically sorted,
    and ``weights[k]`` is the length (or cost) of edge ``k``.
    """

    pointset: PointSet
    edges: np.ndarray
    weights: np.ndarray
    model_tag: str
    extra_vertices: np.ndarray = field(default_factory=lambda: np.empty((0, 2)))
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        edges = np.array(self.edges, dtype=np.int64).reshape(-1, 2)
        w = np.array(self.weights, dtype=float).reshape(-1)
        extra = np.array(self.extra_vertices, dtype=float).reshape(-1, 2)
        if len(w) != len(edges):
            raise InvalidArgumentError("one weight per edge required")
        nv = len(self.pointset) + len(extra)
        if len(edges):
            if np.any(edges[:, 0] >= edges[:, 1]):
                raise InvalidArgumentError("edges must be stored with u < v (no self-loops)")
            if edges.min() < 0 or edges.max() >= nv:
                raise InvalidArgumentError("edge endpoint out of range")
            key = edges[:, 0] * nv + edges[:, 1]
            if np.any(np.diff(key) <= 0):
                raise InvalidArgumentError("edges must be sorted and unique")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise InvalidArgumentError("edge weights must be finite and > 0")
        for a in (edges, w, extra):
            a.setflags(write=False)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "extra_vertices", extra)

    @property
    def window(self) -> Window:
        return self.pointset.window

    @property
    def n_vertices(self) -> int:
        return len(self.pointset) + len(self.extra_vertices)

    @cached_property
    def positions(self) -> np.ndarray:
        pos = np.concatenate([self.pointset.xy, self.extra_vertices])
        pos.setflags(write=False)
        return pos

    @cached_property
    def vertex_kinds(self) -> list:
        kinds = ["poisson"] * len(self.pointset) + ["grid"] * len(self.extra_vertices)
        for i in self.pointset.planted:
            kinds[i] = "planted"
        return kinds

    @cached_property
    def geometric_lengths(self) -> np.ndarray:
        p = self.positions
        u, v = self.edges[:, 0], self.edges[:, 1]
        return self.window.distance(p[u, 0], p[u, 1], p[v, 0], p[v, 1])

    def edge_set(self) -> set:
        return set(map(tuple, self.edges.tolist()))

    def with_weights(self, weights, model_tag: str) -> "SpatialNetwork":
        return SpatialNetwork(self.pointset, self.edges, weights, model_tag, self.extra_vertices, dict(self.meta))


def _normalize(u, v, w, n_vertices: int, keep: str = "first"):
    """Orient u < v, drop self-loops, deduplicate, sort."""
    u = np.asarray(u, dtype=np.int64)
    v = np.asarray(v, dtype=np.int64)
    w = np.asarray(w, dtype=float)
    a, b = np.minimum(u, v), np.maximum(u, v)
    ok = a != b
    a, b, w = a[ok], b[ok], w[ok]
    key = a * n_vertices + b
    if keep == "min":
        order = np.lexsort((w, key))
    else:
        order = np.argsort(key, kind="stable")
    key, a, b, w = key[order], a[order], b[order], w[order]
    first = np.ones(len(key), dtype=bool)
    first[1:] = key[1:] != key[:-1]
    return np.stack([a[first], b[first]], axis=1), w[first]


def _check_connected(n_vertices: int, edges: np.ndarray, what: str, error_cls=DisconnectedGraphError):
    if n_vertices <= 1:
        return
    g = coo_matrix((np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(n_vertices, n_vertices))
    nc, labels = connected_components(g, directed=False)
    if nc > 1:
        sizes = sorted(np.bincount(labels).tolist(), reverse=True)
        raise error_cls(f"{what}: graph has {nc} components, sizes {sizes[:10]}", component_sizes=sizes)


def _tag(name: str, window: Window, **params) -> str:
    parts = [name, f"window={fmt(window.width)}x{fmt(window.height)}:{window.topology}"]
    parts += [f"{k}={v}" for k, v in params.items()]
    return ";".join(parts)


# --- Delaunay -----------------------------------------------------------

def _all_collinear(xy: np.ndarray) -> bool:
    if len(xy) < 3:
        return True
    d = xy[1:] - xy[0]
    j = int(np.argmax(np.hypot(d[:, 0], d[:, 1])))
    ref = d[j]
    cross = ref[0] * d[:, 1] - ref[1] * d[:, 0]
    return bool(np.all(cross == 0))


def _triangle_edges(simplices: np.ndarray) -> tuple:
    s = simplices
    u = np.concatenate([s[:, 0], s[:, 1], s[:, 2]])
    v = np.concatenate([s[:, 1], s[:, 2], s[:, 0]])
    return u, v


def _qhull(xy: np.ndarray) -> Delaunay:
    try:
        return Delaunay(xy)
    except QhullError as exc:
        raise DegenerateGeometryError(f"Delaunay triangulation failed: {str(exc).splitlines()[0]}") from exc


def _circumcircles(pts: np.ndarray, simplices: np.ndarray):
    a, b, c = pts[simplices[:, 0]], pts[simplices[:, 1]], pts[simplices[:, 2]]
    bx, by = b[:, 0] - a[:, 0], b[:, 1] - a[:, 1]
    cx, cy = c[:, 0] - a[:, 0], c[:, 1] - a[:, 1]
    d = 2.0 * (bx * cy - by * cx)
    with np.errstate(divide="ignore", invalid="ignore"):
        ux = (cy * (bx * bx + by * by) - by * (cx * cx + cy * cy)) / d
        uy = (bx * (cx * cx + cy * cy) - cx * (bx * bx + by * by)) / d
    return a[:, 0] + ux, a[:, 1] + uy, np.hypot(ux, uy)


def _torus_delaunay(ps: PointSet):
    """Delaunay edges on the torus by replicating a boundary band of images.

    The band starts a few mean spacings wide and doubles until every triangle
    touching an original point has its circumdisc inside the replicated area
    (at which point the local triangulation equals the periodic one), up to the
    full 3x3 replication.
    """
    w = ps.window
    W, H = w.width, w.height
    xy = ps.xy
    n = len(xy)
    margin = min(max(W, H), 6.0 * math.sqrt(w.area / n))
    while True:
        pts, ids = [xy], [np.arange(n)]
        for sx in (-1, 0, 1):
            for sy in (-1, 0, 1):
                if sx == 0 and sy == 0:
                    continue
                sel = np.ones(n, dtype=bool)
                if sx == 1:
                    sel &= xy[:, 0] < margin
                elif sx == -1:
                    sel &= xy[:, 0] > W - margin
                if sy == 1:
                    sel &= xy[:, 1] < margin
                elif sy == -1:
                    sel &= xy[:, 1] > H - margin
                idx = np.flatnonzero(sel)
                pts.append(xy[idx] + np.array([sx * W, sy * H]))
                ids.append(idx)
        pts = np.concatenate(pts)
        ids = np.concatenate(ids)
        tri = _qhull(pts)
        simp = tri.simplices[np.any(tri.simplices < n, axis=1)]
        ox, oy, r = _circumcircles(pts, simp)
        inside = ((ox - r >= -margin) & (ox + r <= W + margin) & (oy - r >= -margin) & (oy + r <= H + margin))
        if np.all(inside) or margin >= max(W, H):
            break
        margin = min(2.0 * margin, max(W, H))
    u, v = _triangle_edges(simp)
    return ids[u], ids[v]


def delaunay_pairs(ps: PointSet) -> np.ndarray:
    """Vertex pairs of the Delaunay triangulation, ``(E, 2)`` with ``u < v``."""
    n = len(ps)
    if n < 3:
        raise DegenerateGeometryError(f"Delaunay triangulation needs >= 3 points, got {n}")
    if _all_collinear(ps.xy):
        raise DegenerateGeometryError("all points are collinear")
    if ps.window.is_torus:
        u, v = _torus_delaunay(ps)
    else:
        u, v = _triangle_edges(_qhull(ps.xy).simplices)
    edges, _ = _normalize(u, v, np.zeros(len(u)), n)
    return edges


def build_delaunay(ps: PointSet) -> SpatialNetwork:
    """Delaunay triangulation with Euclidean (torus: minimum-image) edge lengths."""
    edges = delaunay_pairs(ps)
    net = _geometric_network(ps, edges, _tag("delaunay", ps.window))
    _check_connected(net.n_vertices, net.edges, "delaunay")
    return net


def _geometric_network(ps: PointSet, edges: np.ndarray, tag: str) -> SpatialNetwork:
    xy = ps.xy
    u, v = edges[:, 0], edges[:, 1]
    lengths = ps.window.distance(xy[u, 0], xy[u, 1], xy[v, 0], xy[v, 1])
    if np.any(lengths <= 0):
        raise DegenerateGeometryError("coincident points produce a zero-length edge")
    return SpatialNetwork(ps, edges, lengths, tag)


# --- proximity graphs ---------------------------------------------------

@njit(cache=True)
def _empty_region_mask(xy, order, start, nx, ny, cw, ch, W, H, torus, eu, ev, kind, tol):
    m = len(eu)
    keep = np.ones(m, dtype=np.bool_)
    reach = 0.8660254037844387 if kind == 0 else 0.5
    for k in range(m):
        p = eu[k]
        q = ev[k]
        px = xy[p, 0]
        py = xy[p, 1]
        dx = xy[q, 0] - px
        dy = xy[q, 1] - py
        if torus:
            dx -= W * np.round(dx / W)
            dy -= H * np.round(dy / H)
        qx = px + dx
        qy = py + dy
        L2 = dx * dx + dy * dy
        mx = px + 0.5 * dx
        my = py + 0.5 * dy
        R = math.sqrt(L2) * reach * (1.0 + 1e-9) + 1e-12
        ix0 = int(math.floor((mx - R) / cw))
        ix1 = int(math.floor((mx + R) / cw))
        iy0 = int(math.floor((my - R) / ch))
        iy1 = int(math.floor((my + R) / ch))
        if torus:
            if ix1 - ix0 + 1 > nx:
                ix1 = ix0 + nx - 1
            if iy1 - iy0 + 1 > ny:
                iy1 = iy0 + ny - 1
        else:
            ix0 = max(ix0, 0)
            iy0 = max(iy0, 0)
            ix1 = min(ix1, nx - 1)
            iy1 = min(iy1, ny - 1)
        found = False
        for iy in range(iy0, iy1 + 1):
            cy = iy % ny
            for ix in range(ix0, ix1 + 1):
                cx = ix % nx
                c = cy * nx + cx
                for s in range(start[c], start[c + 1]):
                    r = order[s]
                    if r == p or r == q:
                        continue
                    rx = xy[r, 0] - mx
                    ry = xy[r, 1] - my
                    if torus:
                        rx -= W * np.round(rx / W)
                        ry -= H * np.round(ry / H)
                    rx += mx
                    ry += my
                    if kind == 0:
                        d1 = (rx - px) * (rx - px) + (ry - py) * (ry - py)
                        d2 = (rx - qx) * (rx - qx) + (ry - qy) * (ry - qy)
                        inside = max(d1, d2) < L2 * (1.0 - tol)
                    else:
                        dot = (px - rx) * (qx - rx) + (py - ry) * (qy - ry)
                        inside = dot < -tol * L2
                    if inside:
                        found = True
                        break
                if found:
                    break
            if found:
                break
        keep[k] = not found
    return keep


def candidate_pairs(ps: PointSet) -> np.ndarray:
    """Pairs that may be proximity-graph edges: all pairs for small sets, Delaunay pairs otherwise."""
    n = len(ps)
    if n <= EXHAUSTIVE_CANDIDATES:
        iu = np.triu_indices(n, 1)
        return np.stack(iu, axis=1).astype(np.int64)
    try:
        return delaunay_pairs(ps)
    except DegenerateGeometryError:
        if n > 2000:
            raise
        iu = np.triu_indices(n, 1)
        return np.stack(iu, axis=1).astype(np.int64)


def _proximity(ps: PointSet, kind: int, name: str) -> SpatialNetwork:
    if len(ps) < 2:
        raise EmptyDomainError(f"{name} needs at least 2 points, got {len(ps)}")
    cand = candidate_pairs(ps)
    g = ps.grid
    w = ps.window
    keep = _empty_region_mask(ps.xy, g.order, g.start, g.nx, g.ny, g.cw, g.ch, w.width, w.height,
                              w.is_torus, cand[:, 0].copy(), cand[:, 1].copy(), kind, BOUNDARY_TOL)
    net = _geometric_network(ps, cand[keep], _tag(name, w))
    _check_connected(net.n_vertices, net.edges, name)
    return net


def build_rng(ps: PointSet) -> SpatialNetwork:
    """Relative neighbourhood graph: ``(p, q)`` is an edge iff the open lune of ``p, q`` is empty."""
    return _proximity(ps, LUNE, "rng")


def build_gabriel(ps: PointSet) -> SpatialNetwork:
    """Gabriel graph: ``(p, q)`` is an edge iff the open disc with diameter ``pq`` is empty."""
    return _proximity(ps, GABRIEL, "gabriel")


# --- lattice networks ---------------------------------------------------

def unit_lines(length: float, spacing: float = 1.0, offset: float = 0.0) -> np.ndarray:
    """Equally spaced line positions ``offset, offset + spacing, ...`` below ``length``."""
    if spacing <= 0:
        raise InvalidArgumentError("line spacing must be > 0")
    return np.arange(offset % spacing, length, spacing)


def poisson_lines(length: float, mean_spacing: float, rng: np.random.Generator) -> np.ndarray:
    """Line positions of a Poisson process (i.i.d. exponential gaps), at least one line."""
    if mean_spacing <= 0:
        raise InvalidArgumentError("mean line spacing must be > 0")
    while True:
        k = int(rng.poisson(length / mean_spacing))
        if k:
            return np.sort(rng.random(k) * length)


def _nearest_line(coord: np.ndarray, lines: np.ndarray, period: float, torus: bool):
    k = len(lines)
    j = np.searchsorted(lines, coord)
    if torus:
        lo, hi = (j - 1) % k, j % k
        dlo = np.abs(coord - lines[lo])
        dlo = np.minimum(dlo, period - dlo)
        dhi = np.abs(lines[hi] - coord)
        dhi = np.minimum(dhi, period - dhi)
    else:
        lo, hi = np.clip(j - 1, 0, k - 1), np.clip(j, 0, k - 1)
        dlo = np.abs(coord - lines[lo])
        dhi = np.abs(lines[hi] - coord)
    pick_hi = (dhi < dlo) | ((dhi == dlo) & (hi < lo))
    return np.where(pick_hi, hi, lo)


def build_lattice_net(ps: PointSet, x_lines, y_lines) -> SpatialNetwork:
    """Grid of vertical and horizontal lines; every point linked to its nearest intersection.

    Grid edges join adjacent intersections along each line with the axis
    distance as length (on a torus the last line wraps to the first); each
    point gets one straight connector to the nearest intersection.
    """
    w = ps.window
    xl = np.asarray(x_lines, dtype=float).reshape(-1)
    yl = np.asarray(y_lines, dtype=float).reshape(-1)
    for name, lines, side in (("x_lines", xl, w.width), ("y_lines", yl, w.height)):
        if len(lines) == 0:
            raise InvalidArgumentError(f"{name} must contain at least one line")
        if np.any(np.diff(lines) <= 0):
            raise InvalidArgumentError(f"{name} must be strictly increasing")
        upper_ok = lines[-1] < side if w.is_torus else lines[-1] <= side
        if lines[0] < 0 or not upper_ok:
            raise InvalidArgumentError(f"{name} must lie inside the window")
    n, nx, ny = len(ps), len(xl), len(yl)
    gx, gy = np.meshgrid(xl, yl)
    extra = np.stack([gx.ravel(), gy.ravel()], axis=1)
    node = n + np.arange(nx * ny).reshape(ny, nx)

    us, vs, ws = [], [], []
    if nx > 1:
        us.append(node[:, :-1].ravel())
        vs.append(node[:, 1:].ravel())
        ws.append(np.tile(np.diff(xl), ny))
        if w.is_torus:
            us.append(node[:, -1])
            vs.append(node[:, 0])
            ws.append(np.full(ny, w.width - xl[-1] + xl[0]))
    if ny > 1:
        us.append(node[:-1, :].ravel())
        vs.append(node[1:, :].ravel())
        ws.append(np.repeat(np.diff(yl), nx))
        if w.is_torus:
            us.append(node[-1, :])
            vs.append(node[0, :])
            ws.append(np.full(nx, w.height - yl[-1] + yl[0]))
    if n:
        jx = _nearest_line(ps.xy[:, 0], xl, w.width, w.is_torus)
        jy = _nearest_line(ps.xy[:, 1], yl, w.height, w.is_torus)
        target = node[jy, jx]
        clen = w.distance(ps.xy[:, 0], ps.xy[:, 1], xl[jx], yl[jy])
        if np.any(clen <= 0):
            raise DegenerateGeometryError("a point coincides with a grid intersection")
        us.append(np.arange(n))
        vs.append(target)
        ws.append(clen)
    nv = n + nx * ny
    if us:
        edges, weights = _normalize(np.concatenate(us), np.concatenate(vs), np.concatenate(ws), nv, keep="min")
    else:
        edges, weights = np.empty((0, 2), dtype=np.int64), np.empty(0)
    net = SpatialNetwork(ps, edges, weights, _tag("lattice", w, nx=nx, ny=ny), extra,
                         {"x_lines": xl, "y_lines": yl})
    _check_connected(net.n_vertices, net.edges, "lattice")
    return net


# --- costs --------------------------------------------------------------

@dataclass(frozen=True)
class CostRule:
    """How edge weights are derived.

    ``kind="euclidean"`` keeps geometric lengths; ``kind="iid"`` draws
    independent weights from ``distribution`` (``"exponential"`` with
    ``params=(mean,)``, ``"uniform"`` with ``params=(a, b)``, ``0 < a < b``,
    or ``"constant"`` with ``params=(c,)``) using ``seed``;
    ``kind="power"`` sets weight = geometric length ** ``alpha``.
    """

    kind: str = "euclidean"
    distribution: str | None = None
    params: tuple = ()
    seed: int = 0
    alpha: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        if self.kind == "euclidean":
            return
        if self.kind == "power":
            if not (math.isfinite(self.alpha) and self.alpha >= 1):
                raise InvalidArgumentError(f"power exponent must be >= 1, got {self.alpha!r}")
            return
        if self.kind != "iid":
            raise InvalidArgumentError(f"unknown cost rule kind {self.kind!r}")
        d, p = self.distribution, self.params
        if d == "exponential":
            ok = len(p) == 1 and math.isfinite(p[0]) and p[0] > 0
        elif d == "uniform":
            ok = len(p) == 2 and math.isfinite(p[1]) and 0 < p[0] < p[1]
        elif d == "constant":
            ok = len(p) == 1 and math.isfinite(p[0]) and p[0] > 0
        else:
            raise InvalidArgumentError(f"unknown cost distribution {d!r}")
        if not ok:
            raise InvalidArgumentError(f"{d} costs need positive finite parameters with finite mean, got {p}")

    def describe(self) -> str:
        if self.kind == "iid":
            return f"iid:{self.distribution}({','.join(fmt(p) for p in self.params)})@{self.seed}"
        if self.kind == "power":
            return f"power:{fmt(self.alpha)}"
        return "euclidean"


def draw_costs(rule: CostRule, size: int) -> np.ndarray:
    rng = stream(rule.seed, COSTS)
    if rule.distribution == "constant":
        return np.full(size, rule.params[0])
    if rule.distribution == "uniform":
        a, b = rule.params
        return rng.uniform(a, b, size)
    out = rng.exponential(rule.params[0], size)
    bad = out <= 0
    while np.any(bad):
        out[bad] = rng.exponential(rule.params[0], int(bad.sum()))
        bad = out <= 0
    return out


def apply_cost_rule(net: SpatialNetwork, rule: CostRule) -> SpatialNetwork:
    """Reweight the edges of ``net`` according to ``rule``."""
    if rule.kind == "euclidean":
        return net
    if rule.kind == "power":
        w = net.geometric_lengths ** rule.alpha
    else:
        w = draw_costs(rule, len(net.edges))
    return net.with_weights(w, f"{net.model_tag};cost={rule.describe()}")


def _tree(positions: np.ndarray, window: Window) -> cKDTree:
    if window.is_torus:
        pos = np.mod(positions, [window.width, window.height])
        return cKDTree(pos, boxsize=[window.width, window.height])
    return cKDTree(positions)


def pairs_within(positions: np.ndarray, window: Window, radius: float) -> np.ndarray:
    """All vertex pairs (u < v) at geometric distance <= radius, sorted."""
    if len(positions) < 2:
        return np.empty((0, 2), dtype=np.int64)
    pairs = _tree(positions, window).query_pairs(radius, output_type="ndarray").astype(np.int64)
    pairs.sort(axis=1)
    order = np.lexsort((pairs[:, 1], pairs[:, 0]))
    return pairs[order]


def build_power_complete(ps: PointSet, alpha: float, cutoff: float, certificate_pairs: int = 200,
                         seed: int = 0) -> SpatialNetwork:
    """Power-cost graph: every pair within ``cutoff`` joined with cost ``distance ** alpha``.

    Omitted (longer) pairs are certified a posteriori: for a random sample of
    them the routed cost must not exceed the direct cost.  The outcome is in
    ``net.meta["certificate"]`` (``ok``, ``checked``, ``failures``).
    """
    if not (math.isfinite(alpha) and alpha >= 1):
        raise InvalidArgumentError(f"power exponent must be >= 1, got {alpha!r}")
    if not (math.isfinite(cutoff) and cutoff > 0):
        raise InvalidArgumentError(f"cutoff must be > 0, got {cutoff!r}")
    n = len(ps)
    if n < 2:
        raise EmptyDomainError(f"power model needs at least 2 points, got {n}")
    edges = pairs_within(ps.xy, ps.window, cutoff)
    xy = ps.xy
    d = ps.window.distance(xy[edges[:, 0], 0], xy[edges[:, 0], 1], xy[edges[:, 1], 0], xy[edges[:, 1], 1])
    if np.any(d <= 0):
        raise DegenerateGeometryError("coincident points produce a zero-length edge")
    _check_connected(n, edges, f"power cutoff {cutoff}")
    net = SpatialNetwork(ps, edges, d ** alpha, _tag("power", ps.window, alpha=fmt(alpha), cutoff=fmt(cutoff)))
    net.meta["certificate"] = _power_certificate(net, alpha, cutoff, certificate_pairs, seed)
    return net


def _power_certificate(net: SpatialNetwork, alpha: float, cutoff: float, k: int, seed: int) -> dict:
    from .routes import RouteEngine

    n = len(net.pointset)
    rng = stream(seed, CERTIFICATE)
    xy = net.pointset.xy
    n_omitted = n * (n - 1) // 2 - len(net.edges)
    if k <= 0 or n_omitted <= 0:
        return {"ok": True, "checked": 0, "failures": []}
    us, vs = [], []
    tries = 0
    while len(us) < k and tries < 50 * k:
        tries += 1
        u, v = rng.integers(0, n, 2)
        if u == v:
            continue
        if net.window.distance(xy[u, 0], xy[u, 1], xy[v, 0], xy[v, 1]) > cutoff:
            us.append(int(min(u, v)))
            vs.append(int(max(u, v)))
    eng = RouteEngine(net)
    failures = []
    for u in sorted(set(us)):
        targets = [v for a, v in zip(us, vs) if a == u]
        routed = eng.route_lengths_from(u, targets)
        for v, r in zip(targets, routed):
            direct = float(net.window.distance(xy[u, 0], xy[u, 1], xy[v, 0], xy[v, 1])) ** alpha
            if r > direct * (1 + 1e-9):
                failures.append((u, v, float(r), direct))
    return {"ok": not failures, "checked": len(us), "failures": failures}


def _check_bands(bands) -> list:
    out = []
    for b in bands:
        if len(b) != 2:
            raise InvalidArgumentError(f"band must be (r, delta), got {b!r}")
        r, dlt = float(b[0]), float(b[1])
        if not (math.isfinite(r) and math.isfinite(dlt) and r > 0 and dlt > 0):
            raise InvalidArgumentError(f"band needs r > 0 and delta > 0, got {b!r}")
        out.append((r, dlt))
    for (r1, d1), (r2, _) in zip(out, out[1:]):
        if r2 <= r1:
            raise InvalidArgumentError("band radii must be strictly increasing")
        if r2 <= r1 + d1:
            raise InvalidArgumentError(f"bands [{r1}, {r1 + d1}] and [{r2}, ...] overlap")
    return out


def add_counterexample_links(net: SpatialNetwork, bands) -> SpatialNetwork:
    """Add a straight link between every vertex pair whose distance falls in a band.

    ``bands`` is a list of ``(r_k, delta_k)``; the union of ``[r_k, r_k + delta_k]``
    selects the pairs.  Existing edges keep their weight.
    """
    bands = _check_bands(bands)
    if not bands:
        return net
    pos = net.positions
    w = net.window
    us, vs, ls = [net.edges[:, 0]], [net.edges[:, 1]], [net.weights]
    for r, dlt in bands:
        pairs = pairs_within(pos, w, r + dlt)
        if len(pairs) == 0:
            continue
        d = w.distance(pos[pairs[:, 0], 0], pos[pairs[:, 0], 1], pos[pairs[:, 1], 0], pos[pairs[:, 1], 1])
        sel = (d >= r) & (d <= r + dlt)
        us.append(pairs[sel, 0])
        vs.append(pairs[sel, 1])
        ls.append(d[sel])
    edges, weights = _normalize(np.concatenate(us), np.concatenate(vs), np.concatenate(ls), net.n_vertices)
    tag = net.model_tag + ";bands=" + ",".join(f"{fmt(r)}+{fmt(d)}" for r, d in bands)
    meta = dict(net.meta)
    meta["bands"] = bands
    return SpatialNetwork(net.pointset, edges, weights, tag, net.extra_vertices, meta)


# --- text format --------------------------------------------------------

def write_network(path, net: SpatialNetwork) -> None:
    lines = [f"# shapeline net v1 {net.model_tag}"]
    pos = net.positions
    kinds = net.vertex_kinds
    lines += [f"v {i} {fmt(pos[i, 0])} {fmt(pos[i, 1])} {kinds[i]}" for i in range(net.n_vertices)]
    lines += [f"e {u} {v} {fmt(x)}" for (u, v), x in zip(net.edges.tolist(), net.weights)]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _window_from_tag(tag: str):
    for part in tag.split(";"):
        if part.startswith("window="):
            size, topo = part[len("window="):].split(":")
            wd, ht = size.split("x")
            return Window(float(wd), float(ht), topo)
    return None


def read_network(path) -> SpatialNetwork:
    """Parse a network file; the window comes from the model tag, else a bounding plane window."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    prefix = "# shapeline net v1 "
    if not lines or not lines[0].startswith(prefix):
        raise InvalidArgumentError(f"{path}: bad network header")
    tag = lines[0][len(prefix):].strip()
    verts, us, vs, ws = [], [], [], []
    for ln in lines[1:]:
        tok = ln.split()
        if not tok or tok[0].startswith("#"):
            continue
        if tok[0] == "v" and len(tok) == 5:
            verts.append((int(tok[1]), float(tok[2]), float(tok[3]), tok[4]))
        elif tok[0] == "e" and len(tok) == 4:
            us.append(int(tok[1]))
            vs.append(int(tok[2]))
            ws.append(float(tok[3]))
        else:
            raise InvalidArgumentError(f"{path}: cannot parse line {ln!r}")
    if [v[0] for v in verts] != list(range(len(verts))):
        raise InvalidArgumentError(f"{path}: vertex indices must be dense and in order")
    kinds = [v[3] for v in verts]
    if any(k not in ("poisson", "grid", "planted") for k in kinds):
        raise InvalidArgumentError(f"{path}: unknown vertex kind")
    n_pts = sum(k != "grid" for k in kinds)
    if any(k == "grid" for k in kinds[:n_pts]):
        raise InvalidArgumentError(f"{path}: grid vertices must follow point vertices")
    xy = np.array([(v[1], v[2]) for v in verts], dtype=float).reshape(-1, 2)
    window = _window_from_tag(tag)
    if window is None:
        if len(xy) and xy.min() < 0:
            raise InvalidArgumentError(f"{path}: negative coordinates need an explicit window in the tag")
        hi = xy.max(axis=0) if len(xy) else np.zeros(2)
        window = Window(float(hi[0]) + 1.0, float(hi[1]) + 1.0, "plane")
    planted = [i for i, k in enumerate(kinds) if k == "planted"]
    ps = PointSet(window, xy[:n_pts], planted)
    edges = np.stack([np.array(us, dtype=np.int64), np.array(vs, dtype=np.int64)], axis=1).reshape(-1, 2)
    w = np.array(ws, dtype=float)
    if len(edges):
        flip = edges[:, 0] > edges[:, 1]
        edges[flip] = edges[flip][:, ::-1]
        order = np.lexsort((edges[:, 1], edges[:, 0]))
        edges, w = edges[order], w[order]
    return SpatialNetwork(ps, edges, w, tag, xy[n_pts:])

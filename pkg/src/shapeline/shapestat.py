"""Empirical shape statistics: directional route-length constants and their diagnostics.

Conventions
-----------
* The *origin* of every estimation run is the window centre; the target at
  polar coordinates ``(r, theta)`` is ``centre + r * (cos theta, sin theta)``,
  wrapped on a torus.
* ``D(r, theta)`` is the route-length between the point nearest the origin
  and the point nearest the target (planted points excluded).
* Region templates passed to :func:`check_lsp` / :func:`check_moments` are
  centred relative to the origin, e.g. ``Region.square((0, 0), 1)``.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .errors import InvalidArgumentError
from .models import ModelSpec
from .ppgen import Point, Region, fmt, nearest_point, points_in
from .routes import EuclideanEngine, RouteEngine

DEFAULT_R_LADDER = (25.0, 50.0, 100.0, 200.0)
DEFAULT_N_THETA = 16


def theta_grid(n: int = DEFAULT_N_THETA) -> np.ndarray:
    """``n`` equally spaced angles in ``[0, 2 pi)``."""
    if n < 1:
        raise InvalidArgumentError("need at least one angle")
    return 2.0 * math.pi * np.arange(n) / n


def _as_engine(obj):
    if isinstance(obj, (RouteEngine, EuclideanEngine)):
        return obj
    return RouteEngine(obj)


def _map(fn, jobs, workers: int):
    """Ordered map; results are always reduced in job order."""
    if workers and workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, jobs))
    return [fn(j) for j in jobs]


def _target(window, r: float, theta: float) -> Point:
    c = window.center
    x, y = window.wrap(c.x + r * math.cos(theta), c.y + r * math.sin(theta))
    return Point(float(x), float(y))


def d_nearest(net, origin, target) -> float:
    """Route-length between the points nearest ``origin`` and ``target``."""
    eng = _as_engine(net)
    ps = eng.pointset
    u = nearest_point(ps, origin, sampled_only=True)
    v = nearest_point(ps, target, sampled_only=True)
    return eng.route_length(u, v)


def s_terms(net, A: Region, B: Region, c: float, include_planted: bool = False) -> np.ndarray:
    """The terms ``|d(xi, xi') - c|`` of the S-statistic, ordered by (xi, xi') index."""
    if not (math.isfinite(c) and c >= 0):
        raise InvalidArgumentError(f"c must be finite and >= 0, got {c!r}")
    eng = _as_engine(net)
    ps = eng.pointset
    ia = points_in(ps, A, sampled_only=not include_planted)
    ib = points_in(ps, B, sampled_only=not include_planted)
    if len(ia) == 0 or len(ib) == 0:
        return np.empty(0)
    return np.concatenate([np.abs(eng.route_lengths_from(int(u), ib) - c) for u in ia])


def s_statistic(net, A: Region, B: Region, c: float, include_planted: bool = False) -> float:
    """``S(A, B; c)``: sum over point pairs in ``A x B`` of ``|d - c|``.

    Pairs with the same point in both regions (when they overlap) contribute
    ``c``.  The sum is correctly rounded (``math.fsum``).
    """
    return math.fsum(s_terms(net, A, B, c, include_planted))


# --- estimation ---------------------------------------------------------

def _check_ladder(model: ModelSpec, r_ladder) -> np.ndarray:
    r = np.asarray(r_ladder, dtype=float).reshape(-1)
    if len(r) == 0 or np.any(~np.isfinite(r)) or np.any(r <= 0) or np.any(np.diff(r) <= 0):
        raise InvalidArgumentError("r ladder must be positive and strictly increasing")
    guard = model.window.min_side / 3.0
    if r[-1] > guard:
        raise InvalidArgumentError(f"largest radius {r[-1]} exceeds the wrap guard {guard} (window side / 3)")
    return r


def _check_thetas(thetas) -> np.ndarray:
    t = np.asarray(thetas if thetas is not None else theta_grid(), dtype=float).reshape(-1)
    if len(t) == 0 or np.any(~np.isfinite(t)):
        raise InvalidArgumentError("theta grid must be finite and non-empty")
    return t


def _rho_job(job):
    model, seed, rep, thetas, rs = job
    ps, eng = model.replicate(seed, rep)
    w = ps.window
    o = nearest_point(ps, w.center, sampled_only=True)
    targets = [nearest_point(ps, _target(w, r, t), sampled_only=True) for t in thetas for r in rs]
    return eng.route_lengths_from(o, targets).reshape(len(thetas), len(rs))


def _slopes(rs: np.ndarray, D: np.ndarray) -> np.ndarray:
    """Least-squares slope of D against r (free intercept) along the last axis."""
    rc = rs - rs.mean()
    return (D - D.mean(axis=-1, keepdims=True)) @ rc / (rc @ rc)


@dataclass
class ShapeEstimate:
    """Directional constants on an angle grid.

    ``samples[k, i, j]`` is ``D(r_j, theta_i)`` in replicate ``k``;
    ``replicate_rho[k, i]`` the per-replicate estimate, whose mean over
    replicates is ``rho_hat`` and whose standard error is ``stderr``.
    """

    theta_grid: np.ndarray
    rho_hat: np.ndarray
    stderr: np.ndarray
    r_ladder: np.ndarray
    per_r_means: np.ndarray
    per_r_stderr: np.ndarray
    replicates: int
    estimator: str
    samples: np.ndarray
    replicate_rho: np.ndarray
    model_tag: str = ""
    seed: int = 0

    @classmethod
    def from_values(cls, thetas, rho, stderr=None, estimator: str = "terminal") -> "ShapeEstimate":
        """A fixed ``rho`` table (a formula or a reference value) in estimate form."""
        t = np.asarray(thetas, dtype=float)
        r = np.broadcast_to(np.asarray(rho, dtype=float), t.shape).copy()
        se = np.zeros_like(r) if stderr is None else np.broadcast_to(np.asarray(stderr, dtype=float), t.shape).copy()
        empty = np.empty((0, len(t)))
        return cls(t, r, se, np.empty(0), np.empty((len(t), 0)), np.empty((len(t), 0)), 0, estimator,
                   np.empty((0, len(t), 0)), empty)

    @property
    def mean_rho(self) -> float:
        """Angle-averaged constant."""
        return float(self.replicate_rho.mean())

    @property
    def mean_stderr(self) -> float:
        """Standard error of :attr:`mean_rho` (angles share replicates, so averaged per replicate first)."""
        per_rep = self.replicate_rho.mean(axis=1)
        return float(per_rep.std(ddof=1) / math.sqrt(len(per_rep)))

    def rows(self):
        head = ["theta", "rho_hat", "stderr"] + [f"mean_D_over_r@{fmt(r)}" for r in self.r_ladder]
        body = [[fmt(t), fmt(rh), fmt(se)] + [fmt(m) for m in pm]
                for t, rh, se, pm in zip(self.theta_grid, self.rho_hat, self.stderr, self.per_r_means)]
        return head, body

    def to_dict(self) -> dict:
        return {"estimator": self.estimator, "replicates": self.replicates, "seed": self.seed,
                "model_tag": self.model_tag, "theta_grid": self.theta_grid.tolist(),
                "rho_hat": self.rho_hat.tolist(), "stderr": self.stderr.tolist(),
                "r_ladder": self.r_ladder.tolist(), "mean_rho": self.mean_rho, "mean_stderr": self.mean_stderr}


def estimate_from_samples(samples: np.ndarray, thetas, rs, estimator: str = "slope",
                          model_tag: str = "", seed: int = 0) -> ShapeEstimate:
    samples = np.asarray(samples, dtype=float)
    rs = np.asarray(rs, dtype=float)
    R = samples.shape[0]
    ratio = samples / rs
    if estimator == "slope":
        rep = _slopes(rs, samples)
    elif estimator == "terminal":
        rep = ratio[:, :, -1]
    else:
        raise InvalidArgumentError(f"estimator must be 'slope' or 'terminal', got {estimator!r}")
    sq = math.sqrt(R)
    return ShapeEstimate(np.asarray(thetas, dtype=float), rep.mean(axis=0), rep.std(axis=0, ddof=1) / sq,
                         rs, ratio.mean(axis=0), ratio.std(axis=0, ddof=1) / sq, R, estimator,
                         samples, rep, model_tag, seed)


def estimate_rho(model: ModelSpec, thetas=None, r_ladder=DEFAULT_R_LADDER, replicates: int = 24,
                 seed: int = 0, estimator: str = "slope", workers: int = 1) -> ShapeEstimate:
    """Estimate the directional constants ``rho(theta)`` by Monte Carlo.

    Parameters
    ----------
    model : ModelSpec
        Network model, window and intensity.
    thetas : array-like, optional
        Angle grid in radians (default: 16 equally spaced angles).
    r_ladder : array-like
        Increasing radii; the largest must not exceed a third of the window side.
    replicates : int
        Independent realisations (>= 2); replicate ``k`` uses
        ``replicate_seed(seed, k)``.
    estimator : {'slope', 'terminal'}
        ``slope`` regresses mean ``D`` on ``r`` with a free intercept;
        ``terminal`` is the mean of ``D / r`` at the largest radius.
    workers : int
        Process count; results do not depend on it.
    """
    rs = _check_ladder(model, r_ladder)
    thetas = _check_thetas(thetas)
    if replicates < 2:
        raise InvalidArgumentError("need at least 2 replicates")
    if estimator == "slope" and len(rs) < 2:
        raise InvalidArgumentError("the slope estimator needs at least two radii")
    jobs = [(model, seed, k, thetas, rs) for k in range(replicates)]
    samples = np.stack(_map(_rho_job, jobs, workers))
    return estimate_from_samples(samples, thetas, rs, estimator, model.name, seed)


# --- L1 / moment diagnostics --------------------------------------------

def _pair_job(job):
    model, seed, rep, A, B, thetas, rs, rho = job
    ps, eng = model.replicate(seed, rep)
    w = ps.window
    c = w.center
    ia = points_in(ps, A.translate(c.x, c.y), sampled_only=True)
    nt, nr = len(thetas), len(rs)
    s_abs = np.zeros((nt, nr))
    s1 = np.zeros((nt, nr))
    s2 = np.zeros((nt, nr))
    if len(ia) == 0:
        return s_abs, s1, s2
    targets = {}
    for i, t in enumerate(thetas):
        for j, r in enumerate(rs):
            z = _target(w, r, t)
            targets[i, j] = points_in(ps, B.translate(z.x, z.y), sampled_only=True)
    for u in ia:
        d_all = eng.distances_from(int(u))
        for (i, j), ib in targets.items():
            if len(ib) == 0:
                continue
            d = d_all[ib]
            s1[i, j] += d.sum()
            s2[i, j] += (d * d).sum()
            if rho is not None:
                s_abs[i, j] += np.abs(d - rs[j] * rho[i]).sum()
    return s_abs, s1, s2


def _pair_sums(model, A, B, thetas, rs, replicates, seed, rho, workers):
    jobs = [(model, seed, k, A, B, thetas, rs, rho) for k in range(replicates)]
    out = _map(_pair_job, jobs, workers)
    return (np.stack([o[0] for o in out]), np.stack([o[1] for o in out]), np.stack([o[2] for o in out]))


def _mean_se(x: np.ndarray):
    return x.mean(axis=0), x.std(axis=0, ddof=1) / math.sqrt(x.shape[0])


@dataclass
class ShapeDiagnostics:
    """Per-rung Monte Carlo diagnostics (each ratio averaged over the angle grid)."""

    r_ladder: np.ndarray
    s_ratio: np.ndarray | None = None
    s_stderr: np.ndarray | None = None
    l2_ratio: np.ndarray | None = None
    l2_stderr: np.ndarray | None = None
    lub_ratio: np.ndarray | None = None
    lub_stderr: np.ndarray | None = None
    kappa_hat: float | None = None
    verdicts: dict = field(default_factory=dict)
    replicates: int = 0
    seed: int = 0

    def rows(self):
        cols = [("s_ratio", self.s_ratio), ("s_stderr", self.s_stderr), ("l2_ratio", self.l2_ratio),
                ("l2_stderr", self.l2_stderr), ("lub_ratio", self.lub_ratio), ("lub_stderr", self.lub_stderr)]
        cols = [(n, v) for n, v in cols if v is not None]
        head = ["r"] + [n for n, _ in cols]
        body = [[fmt(r)] + [fmt(v[j]) for _, v in cols] for j, r in enumerate(self.r_ladder)]
        return head, body

    def to_dict(self) -> dict:
        d = {"r_ladder": self.r_ladder.tolist(), "verdicts": dict(self.verdicts),
             "replicates": self.replicates, "seed": self.seed}
        for k in ("s_ratio", "s_stderr", "l2_ratio", "l2_stderr", "lub_ratio", "lub_stderr"):
            v = getattr(self, k)
            if v is not None:
                d[k] = v.tolist()
        if self.kappa_hat is not None:
            d["kappa_hat"] = self.kappa_hat
        return d


def _paired_se(x: np.ndarray, i: int, j: int) -> float:
    diff = x[:, j] - x[:, i]
    return float(diff.std(ddof=1) / math.sqrt(len(diff)))


def lsp_verdict(per_rep: np.ndarray) -> bool:
    """Halving plus monotone decrease within one (paired) standard error.

    ``per_rep[k, j]`` is replicate ``k``'s value at rung ``j``.
    """
    m = per_rep.mean(axis=0)
    if not m[-1] <= 0.5 * m[0]:
        return False
    return all(m[j + 1] - m[j] <= _paired_se(per_rep, j, j + 1) for j in range(len(m) - 1))


def no_increase_verdict(per_rep: np.ndarray, k: float = 2.0) -> bool:
    """No later rung exceeds an earlier one by more than ``k`` paired standard errors."""
    m = per_rep.mean(axis=0)
    n = len(m)
    return all(m[j] - m[i] <= k * _paired_se(per_rep, i, j) for i in range(n) for j in range(i + 1, n))


def _rho_on_grid(rho: ShapeEstimate):
    return np.asarray(rho.theta_grid, dtype=float), np.asarray(rho.rho_hat, dtype=float)


def _diagnostics(model, A, B, thetas, rs, rho, replicates, seed, workers) -> ShapeDiagnostics:
    if replicates < 2:
        raise InvalidArgumentError("need at least 2 replicates")
    s_abs, s1, s2 = _pair_sums(model, A, B, thetas, rs, replicates, seed, rho, workers)
    out = ShapeDiagnostics(rs, replicates=replicates, seed=seed)
    if rho is not None:
        per_rep = (s_abs / rs).mean(axis=1)
        out.s_ratio, out.s_stderr = _mean_se(per_rep)
        out.verdicts["lsp"] = "PASS" if lsp_verdict(per_rep) else "FAIL"
    l2_rep = (s2 / np.maximum(1.0, rs ** 2)).mean(axis=1)
    lub_rep = (s1 / rs).mean(axis=1)
    out.l2_ratio, out.l2_stderr = _mean_se(l2_rep)
    out.lub_ratio, out.lub_stderr = _mean_se(lub_rep)
    out.kappa_hat = float(out.lub_ratio.max())
    ok = no_increase_verdict(l2_rep) and no_increase_verdict(lub_rep)
    out.verdicts["moments"] = "PASS" if ok else "FAIL"
    return out


def shape_diagnostics(model: ModelSpec, A: Region, B: Region, rho: ShapeEstimate, r_ladder=DEFAULT_R_LADDER,
                      replicates: int = 24, seed: int = 1, workers: int = 1) -> ShapeDiagnostics:
    """Both :func:`check_lsp` and :func:`check_moments` from one set of replicates."""
    rs = _check_ladder(model, r_ladder)
    thetas, rh = _rho_on_grid(rho)
    return _diagnostics(model, A, B, thetas, rs, rh, replicates, seed, workers)


def check_lsp(model: ModelSpec, A: Region, B: Region, rho: ShapeEstimate, r_ladder=DEFAULT_R_LADDER,
              replicates: int = 24, seed: int = 1, workers: int = 1) -> ShapeDiagnostics:
    """Monte Carlo ``r^-1 E S(A, z + B; r rho(theta_z))`` per rung, ``z = (r, theta)`` over ``rho``'s angles.

    Verdict ``lsp`` is PASS when the last rung is at most half the first and
    the sequence decreases up to one paired standard error per step.
    """
    d = shape_diagnostics(model, A, B, rho, r_ladder, replicates, seed, workers)
    return ShapeDiagnostics(d.r_ladder, s_ratio=d.s_ratio, s_stderr=d.s_stderr,
                            verdicts={"lsp": d.verdicts["lsp"]}, replicates=replicates, seed=seed)


def check_moments(model: ModelSpec, A: Region, B: Region, r_ladder=DEFAULT_R_LADDER, replicates: int = 24,
                  seed: int = 2, thetas=None, workers: int = 1) -> ShapeDiagnostics:
    """Per-rung ``E sum d^2 / max(1, r^2)`` and ``E sum d / r``; ``kappa_hat`` is the largest of the latter.

    Verdict ``moments`` is PASS when neither ratio increases along the
    ladder by more than two paired standard errors.
    """
    rs = _check_ladder(model, r_ladder)
    return _diagnostics(model, A, B, _check_thetas(thetas), rs, None, replicates, seed, workers)


# --- Lipschitz, limit shape ----------------------------------------------

def lipschitz_ratio(est) -> float:
    """Largest ``|rho(t2) - rho(t1)| / |t2 - t1|`` over circularly adjacent grid angles."""
    t = np.asarray(est.theta_grid, dtype=float)
    r = np.asarray(est.rho_hat, dtype=float)
    if len(t) < 2:
        raise InvalidArgumentError("Lipschitz ratio needs at least two angles")
    order = np.argsort(np.mod(t, 2 * math.pi))
    t, r = np.mod(t, 2 * math.pi)[order], r[order]
    dt = np.diff(np.append(t, t[0] + 2 * math.pi))
    dr = np.abs(np.diff(np.append(r, r[0])))
    if np.any(dt <= 0):
        raise InvalidArgumentError("theta grid has repeated angles")
    return float((dr / dt).max())


@dataclass
class LimitShape:
    """Star-shaped polygon with vertices at polar ``(1 / rho(theta), theta)``."""

    theta: np.ndarray
    radius: np.ndarray
    radius_stderr: np.ndarray
    convexity_defect: float

    @property
    def polygon(self) -> list:
        return [(float(r), float(t)) for r, t in zip(self.radius, self.theta)]

    @property
    def max_radius(self) -> float:
        return float(self.radius.max())

    def cartesian(self) -> np.ndarray:
        return np.stack([self.radius * np.cos(self.theta), self.radius * np.sin(self.theta)], axis=1)

    def contains(self, x, y, scale: float = 1.0) -> np.ndarray:
        """Membership of points (relative to the origin) in the closed polygon ``scale * B``."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if scale == 0:
            return (x == 0) & (y == 0)
        x, y = x / scale, y / scale
        t = self.theta
        if np.any(np.diff(np.append(t, t[0] + 2 * math.pi)) >= math.pi):
            raise InvalidArgumentError("polygon angles must not leave a gap of pi or more")
        v = self.cartesian()
        phi = np.mod(np.arctan2(y, x), 2 * math.pi)
        k = np.searchsorted(t, phi, side="right") - 1
        k = np.mod(k, len(t))
        k1 = np.mod(k + 1, len(t))
        ax, ay = v[k, 0], v[k, 1]
        bx, by = v[k1, 0], v[k1, 1]
        cross = (bx - ax) * (y - ay) - (by - ay) * (x - ax)
        scale_ref = np.hypot(bx - ax, by - ay) * self.max_radius
        return (cross >= -1e-12 * scale_ref) | ((x == 0) & (y == 0))

    def rows(self):
        return ["theta", "radius", "radius_stderr"], [
            [fmt(t), fmt(r), fmt(s)] for t, r, s in zip(self.theta, self.radius, self.radius_stderr)]


def _convexity_defect(pts: np.ndarray) -> float:
    worst = 0.0
    for i in range(len(pts)):
        others = np.delete(pts, i, axis=0)
        if len(others) < 3:
            continue
        try:
            hull = ConvexHull(others)
        except QhullError:
            continue
        # equations: n . x + b <= 0 inside, unit normals
        inside = -(hull.equations[:, :2] @ pts[i] + hull.equations[:, 2]).max()
        worst = max(worst, float(inside))
    return worst


def limit_shape(est) -> LimitShape:
    """Polygon ``{(r, theta): r <= 1 / rho(theta)}`` on the estimate's angle grid."""
    rho = np.asarray(est.rho_hat, dtype=float)
    if np.any(~np.isfinite(rho)) or np.any(rho <= 0):
        raise InvalidArgumentError("limit shape needs every rho_hat > 0")
    t = np.mod(np.asarray(est.theta_grid, dtype=float), 2 * math.pi)
    order = np.argsort(t)
    t, rho = t[order], rho[order]
    se = np.asarray(getattr(est, "stderr", np.zeros_like(rho)), dtype=float)[order]
    radius = 1.0 / rho
    pts = np.stack([radius * np.cos(t), radius * np.sin(t)], axis=1)
    return LimitShape(t, radius, se / rho ** 2, _convexity_defect(pts))


# --- almost-sure shape sandwich ---------------------------------------------

@dataclass
class SandwichResult:
    ell: float
    inner_ok: bool
    outer_ok: bool
    inner_witnesses: list = field(default_factory=list)
    outer_witnesses: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.inner_ok and self.outer_ok


def as_shape_check(net, B: LimitShape, ells, eps: float) -> list:
    """Test ``Xi ∩ (1-eps) l B  ⊆  {xi : d(xi, xi0) <= l}  ⊆  (1+eps) l B`` for each ``l``.

    ``xi0`` is the first planted point, which must sit at the window centre of
    a plane window.  Lattice nodes are not points of the process and are
    ignored.  Returns one :class:`SandwichResult` per ``l``.
    """
    eng = _as_engine(net)
    ps = eng.pointset
    w = ps.window
    if w.is_torus:
        raise InvalidArgumentError("the sandwich check runs on a plane window")
    if not ps.planted:
        raise InvalidArgumentError("a planted origin point is required")
    if not (0 <= eps < 1):
        raise InvalidArgumentError("eps must be in [0, 1)")
    o = ps.planted[0]
    c = w.center
    if ps[o] != c:
        raise InvalidArgumentError("the planted origin must sit at the window centre")
    ells = [float(e) for e in ells]
    for ell in ells:
        if not (math.isfinite(ell) and ell >= 0):
            raise InvalidArgumentError("ell values must be finite and >= 0")
        if ell * (1 + eps) * B.max_radius > w.min_side / 2:
            raise InvalidArgumentError(f"ell={ell}: (1+eps) ell B does not fit in the window")
    d = eng.distances_from(o)[:len(ps)]
    rel = ps.xy - np.array([c.x, c.y])
    out = []
    for ell in ells:
        in_inner = B.contains(rel[:, 0], rel[:, 1], (1 - eps) * ell)
        in_outer = B.contains(rel[:, 0], rel[:, 1], (1 + eps) * ell)
        reached = d <= ell
        bad_in = np.flatnonzero(in_inner & ~reached)
        bad_out = np.flatnonzero(reached & ~in_outer)
        out.append(SandwichResult(ell, len(bad_in) == 0, len(bad_out) == 0,
                                  [(int(i), float(d[i])) for i in bad_in[:20]],
                                  [(int(i), float(d[i])) for i in bad_out[:20]]))
    return out


def write_csv(path, head, body) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(head)
        wr.writerows(body)

"""Subadditive arrays with missing values and the K-penalised minimum-chain process.

An array on indices ``0..n`` has a good/bad flag per index and a value
``X[i, j] >= 0`` for every pair of good indices.  The penalised process
``Y[i, j]`` is the cheapest chain ``i = i0 < i1 < ... < im = j`` whose steps
are either ``X`` between two good indices, or a unit step ``(k, k+1)`` at
cost ``K`` whenever ``k`` and ``k+1`` are not both good.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import mpmath
import numpy as np

from .errors import InvalidArgumentError, PropertyViolationError
from .ppgen import CELL_CHOICE, LEMMA, SYNTHETIC, Region, points_in, stream
from .shapestat import _as_engine, no_increase_verdict

# synthetic step costs live on this grid so prefix sums are exact
QUANTUM = 2.0 ** -20


@dataclass(frozen=True, eq=False)
class MissingValueArray:
    """Array with good flags ``good[0..n]``.

    Values come either from ``values`` (dense ``(n+1, n+1)``, NaN where
    undefined) or from ``prefix`` (additive: ``X[i, j] = prefix[j] - prefix[i]``).
    """

    good: np.ndarray
    values: np.ndarray | None = None
    prefix: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        g = np.asarray(self.good, dtype=bool).reshape(-1)
        g.setflags(write=False)
        object.__setattr__(self, "good", g)
        if (self.values is None) == (self.prefix is None):
            raise InvalidArgumentError("give exactly one of values / prefix")
        m = len(g)
        if m < 1:
            raise InvalidArgumentError("array needs at least one index")
        if self.values is not None:
            v = np.array(self.values, dtype=float)
            if v.shape != (m, m):
                raise InvalidArgumentError(f"values must be {m}x{m}, got {v.shape}")
            both = g[:, None] & g[None, :]
            up = np.triu(both, 1)
            if np.any(~np.isfinite(v[up])) or np.any(v[up] < 0):
                raise InvalidArgumentError("X must be finite and >= 0 on good pairs")
            v[~both] = np.nan
            v.setflags(write=False)
            object.__setattr__(self, "values", v)
        else:
            p = np.array(self.prefix, dtype=float).reshape(-1)
            if len(p) != m or np.any(~np.isfinite(p)) or np.any(np.diff(p) < 0):
                raise InvalidArgumentError("prefix must be finite, non-decreasing and match good")
            p.setflags(write=False)
            object.__setattr__(self, "prefix", p)

    @property
    def n(self) -> int:
        return len(self.good) - 1

    @property
    def delta_hat(self) -> float:
        return float(self.good.mean())

    @property
    def additive(self) -> bool:
        return self.prefix is not None

    def x(self, i: int, j: int) -> float:
        """``X[i, j]`` for good ``i < j``."""
        if not (0 <= i < j <= self.n):
            raise InvalidArgumentError(f"need 0 <= i < j <= {self.n}, got ({i}, {j})")
        if not (self.good[i] and self.good[j]):
            raise InvalidArgumentError(f"X[{i}, {j}] is undefined (bad index)")
        if self.additive:
            return float(self.prefix[j] - self.prefix[i])
        return float(self.values[i, j])

    def head(self, n: int) -> "MissingValueArray":
        """Sub-array on indices ``0..n``."""
        if not 1 <= n <= self.n:
            raise InvalidArgumentError(f"n must be in 1..{self.n}")
        if self.additive:
            return MissingValueArray(self.good[:n + 1], prefix=self.prefix[:n + 1], meta=self.meta)
        return MissingValueArray(self.good[:n + 1], values=self.values[:n + 1, :n + 1], meta=self.meta)

    def dense(self) -> np.ndarray:
        if not self.additive:
            return self.values
        v = self.prefix[None, :] - self.prefix[:, None]
        v[~(self.good[:, None] & self.good[None, :])] = np.nan
        return v


def _ray_offsets(theta: float, r0: float, n: int) -> np.ndarray:
    k = np.arange(n + 1)
    return np.stack([k * r0 * math.cos(theta), k * r0 * math.sin(theta)], axis=1)


def _translates_disjoint(A: Region, theta: float, r0: float) -> bool:
    dx, dy = abs(r0 * math.cos(theta)), abs(r0 * math.sin(theta))
    if A.shape == "disc":
        return r0 > 2 * A.radius
    return dx > 2 * A.half_width or dy > 2 * A.half_height


def extract_array(net, A: Region, theta: float, r0: float, n: int, seed: int) -> MissingValueArray:
    """Array of route-lengths between cells ``z_i + A``, ``z_i = origin + i r0 (cos theta, sin theta)``.

    ``A`` is a template relative to the origin (the window centre).  Index
    ``i`` is good when its cell holds a process point; one such point is
    chosen uniformly (stream ``CELL_CHOICE`` of ``seed``).
    """
    if n < 1:
        raise InvalidArgumentError("n must be >= 1")
    if not (math.isfinite(r0) and r0 > 0):
        raise InvalidArgumentError("r0 must be finite and > 0")
    if not _translates_disjoint(A, theta, r0):
        raise InvalidArgumentError(f"translates of A at spacing r0={r0} overlap")
    eng = _as_engine(net)
    ps = eng.pointset
    w = ps.window
    if w.is_torus and n * r0 > w.min_side / 3:
        raise InvalidArgumentError(f"n*r0 = {n * r0} exceeds the wrap guard {w.min_side / 3}")
    c = w.center
    rng = stream(seed, CELL_CHOICE)
    chosen = np.full(n + 1, -1, dtype=np.int64)
    for i, (dx, dy) in enumerate(_ray_offsets(theta, r0, n)):
        x, y = w.wrap(c.x + dx, c.y + dy)
        inside = points_in(ps, A.translate(float(x), float(y)), sampled_only=True)
        if len(inside):
            chosen[i] = inside[rng.integers(len(inside))]
    good = chosen >= 0
    vals = np.full((n + 1, n + 1), np.nan)
    gi = np.flatnonzero(good)
    for i in gi:
        d = eng.route_lengths_from(int(chosen[i]), chosen[gi])
        vals[i, gi] = d
    return MissingValueArray(good, values=vals, meta={"points": chosen.tolist(), "theta": theta, "r0": r0})


def _draw_steps(n: int, law, rng) -> np.ndarray:
    kind, params = law[0], tuple(float(p) for p in law[1])
    if kind == "constant":
        if len(params) != 1 or not params[0] > 0:
            raise InvalidArgumentError("constant law needs one positive value")
        w = np.full(n, params[0])
    elif kind == "exponential":
        if len(params) != 1 or not params[0] > 0:
            raise InvalidArgumentError("exponential law needs a positive mean")
        w = rng.exponential(params[0], n)
    elif kind == "uniform":
        if len(params) != 2 or not 0 < params[0] < params[1]:
            raise InvalidArgumentError("uniform law needs 0 < a < b")
        w = rng.uniform(params[0], params[1], n)
    else:
        raise InvalidArgumentError(f"unknown step-cost law {kind!r}")
    if not np.all(np.isfinite(w)):
        raise InvalidArgumentError("step-cost law must have finite values")
    # round up onto the dyadic grid: stays positive, shifts the mean by < QUANTUM
    return np.maximum(np.ceil(w / QUANTUM), 1.0) * QUANTUM


def law_mean(law) -> float:
    kind, params = law[0], tuple(float(p) for p in law[1])
    return params[0] if kind in ("constant", "exponential") else 0.5 * (params[0] + params[1])


def synthetic_array(n: int, delta: float, law=("exponential", (1.0,)), seed: int = 0) -> MissingValueArray:
    """Additive array: good flags i.i.d. Bernoulli(delta), ``X[i, j] = w_i + ... + w_{j-1}``.

    ``law`` is ``(kind, params)`` with kind ``constant`` (value),
    ``exponential`` (mean) or ``uniform`` (a, b).  The true constant is the
    mean step cost.
    """
    if n < 1:
        raise InvalidArgumentError("n must be >= 1")
    if not (0 < delta <= 1):
        raise InvalidArgumentError(f"delta must be in (0, 1], got {delta!r}")
    rng = stream(seed, SYNTHETIC)
    good = rng.random(n + 1) < delta
    w = _draw_steps(n, law, rng)
    prefix = np.concatenate([[0.0], np.cumsum(w)])
    return MissingValueArray(good, prefix=prefix, meta={"seed": seed, "delta": delta, "law": [law[0], list(law[1])]})


@dataclass
class PenalizedTable:
    """``Y[j]`` = penalised minimum from ``start`` to ``j`` (NaN before ``start``).

    ``pred[j]`` is the previous index on the recorded optimal chain and
    ``penalties[j]`` its number of penalised unit steps.
    """

    K: float
    start: int
    Y: np.ndarray
    pred: np.ndarray
    penalties: np.ndarray

    def path(self, j: int) -> list:
        out = [j]
        while out[-1] != self.start:
            out.append(int(self.pred[out[-1]]))
        return out[::-1]

    def penalized_steps(self, good: np.ndarray, j: int) -> list:
        """Indices ``i`` with a penalised step ``(i, i+1)`` on the recorded chain to ``j``."""
        p = self.path(j)
        return [a for a, b in zip(p, p[1:]) if b == a + 1 and not (good[a] and good[b])]


def penalized_min(arr: MissingValueArray, K: float, start: int = 0) -> PenalizedTable:
    """Exact ``Y^(K)`` from ``start`` to every later index by dynamic programming.

    Ties go to the chain with fewer penalised steps, then to the earliest
    predecessor.
    """
    if not (math.isfinite(K) and K > 0):
        raise InvalidArgumentError(f"K must be finite and > 0, got {K!r}")
    n = arr.n
    if not 0 <= start <= n:
        raise InvalidArgumentError(f"start must be in 0..{n}")
    g = arr.good
    Y = np.full(n + 1, np.nan)
    pred = np.full(n + 1, -1, dtype=np.int64)
    pen = np.zeros(n + 1, dtype=np.int64)
    Y[start] = 0.0
    pred[start] = start
    if arr.additive:
        P = arr.prefix
        best_val, best_pen, best_i = math.inf, 0, -1
        for j in range(start + 1, n + 1):
            i = j - 1
            if g[i]:
                v = Y[i] - P[i]
                if (v, pen[i]) < (best_val, best_pen):
                    best_val, best_pen, best_i = v, pen[i], i
            cand = (math.inf, 0, -1)
            if g[j] and best_i >= 0:
                cand = (best_val + P[j], best_pen, best_i)
            if not (g[i] and g[j]):
                alt = (Y[i] + K, pen[i] + 1, i)
                if alt < cand:
                    cand = alt
            Y[j], pen[j], pred[j] = cand
        return PenalizedTable(float(K), start, Y, pred, pen)
    X = arr.values
    for j in range(start + 1, n + 1):
        cand = (math.inf, 0, -1)
        if g[j]:
            idx = np.flatnonzero(g[start:j]) + start
            if len(idx):
                vals = Y[idx] + X[idx, j]
                order = np.lexsort((idx, pen[idx], vals))
                k = order[0]
                cand = (vals[k], pen[idx[k]], idx[k])
        i = j - 1
        if not (g[i] and g[j]):
            alt = (Y[i] + K, pen[i] + 1, i)
            if alt < cand:
                cand = alt
        Y[j], pen[j], pred[j] = cand
    return PenalizedTable(float(K), start, Y, pred, pen)


def penalized_matrix(arr: MissingValueArray, K: float) -> np.ndarray:
    """``Y[i, j]`` for all ``i <= j`` (NaN below the diagonal)."""
    return np.stack([penalized_min(arr, K, s).Y for s in range(arr.n + 1)])


@dataclass
class SubaddReport:
    K_ladder: list
    n_ladder: list
    c_hat_per_K: list
    c_hat: float
    c_hat_stderr: float
    y_over_n_trace: dict
    bad_step_count: list
    l2_trace: list
    l2_stderr: list
    checks: dict
    arrays: int
    good_endpoint_runs: int

    def rows(self):
        head = ["K", "n", "mean_Y_over_n"]
        body = [[fmt_num(K), str(n), fmt_num(v)] for K in self.K_ladder for n, v in
                zip(self.n_ladder, self.y_over_n_trace[K])]
        return head, body

    def to_dict(self) -> dict:
        return {"K_ladder": self.K_ladder, "n_ladder": self.n_ladder, "c_hat_per_K": self.c_hat_per_K,
                "c_hat": self.c_hat, "c_hat_stderr": self.c_hat_stderr,
                "y_over_n_trace": {fmt_num(k): v for k, v in self.y_over_n_trace.items()},
                "bad_step_count": self.bad_step_count, "l2_trace": self.l2_trace, "l2_stderr": self.l2_stderr,
                "checks": self.checks, "arrays": self.arrays, "good_endpoint_runs": self.good_endpoint_runs}


def fmt_num(v) -> str:
    return format(float(v), ".17g")


def _ratio_estimate(y: np.ndarray, ind: np.ndarray):
    """``sum(y I) / sum(I)`` with a delta-method standard error."""
    m = ind.sum()
    if m == 0:
        return math.nan, math.nan
    est = (y * ind).sum() / m
    if m < 2:
        return float(est), math.nan
    resid = (y - est) * ind
    k = len(y)
    se = math.sqrt((resid ** 2).sum() * k / (k - 1)) / m
    return float(est), float(se)


def verify_prop_sub(arrays, K_ladder, n_ladder) -> SubaddReport:
    """Run the penalised process on independent arrays and check its exact properties.

    Per ``(K, n)`` the trace holds the mean of ``Y[0, n] / n``; ``c_hat_per_K``
    is the good-endpoint ratio estimate ``sum(Y I) / (n sum(I))`` at the
    largest ``n``; ``c_hat`` is the value at the largest ``K``.  Raises
    :class:`PropertyViolationError` if ``Y <= X`` on good endpoints,
    ``Y >= K * (penalised steps)`` or monotonicity in ``K`` fails anywhere.
    """
    Ks = sorted(float(k) for k in K_ladder)
    ns = sorted(int(n) for n in n_ladder)
    if not Ks or not ns or Ks[0] <= 0 or ns[0] < 1:
        raise InvalidArgumentError("K and n ladders must be non-empty and positive")
    nmax = ns[-1]
    ys = {K: [] for K in Ks}
    ind = []
    l2 = []
    bad_steps = []
    checks = {"Y_le_X": True, "Y_ge_K_penalties": True, "K_monotone": True}
    count = 0
    for a, arr in enumerate(arrays):
        if arr.n < nmax:
            raise InvalidArgumentError(f"array {a} has n={arr.n} < {nmax}")
        count += 1
        g = arr.good
        ind.append([bool(g[0] and g[n]) for n in ns])
        l2.append([arr.x(0, n) ** 2 / n ** 2 if g[0] and g[n] else 0.0 for n in ns])
        prev = None
        for K in Ks:
            t = penalized_min(arr, K)
            Y = t.Y
            ys[K].append([Y[n] / n for n in ns])
            for n in ns:
                if g[0] and g[n] and not Y[n] <= arr.x(0, n):
                    checks["Y_le_X"] = False
                    raise PropertyViolationError(f"Y > X on array {a}, K={K}, n={n}",
                                                 witness={"array": a, "K": K, "n": n, "meta": arr.meta})
                if not Y[n] >= K * t.penalties[n]:
                    checks["Y_ge_K_penalties"] = False
                    raise PropertyViolationError(f"Y < K|I| on array {a}, K={K}, n={n}",
                                                 witness={"array": a, "K": K, "n": n, "meta": arr.meta})
            if prev is not None and np.any(prev > Y[1:]):
                checks["K_monotone"] = False
                j = int(np.argmax(prev > Y[1:])) + 1
                raise PropertyViolationError(f"Y not monotone in K on array {a} at j={j}",
                                             witness={"array": a, "K": K, "j": j, "meta": arr.meta})
            prev = Y[1:]
            if K == Ks[-1]:
                bad_steps.append(int(t.penalties[nmax]))
    if count < 1:
        raise InvalidArgumentError("no arrays given")
    I = np.asarray(ind, dtype=float)
    trace = {K: np.asarray(ys[K]).mean(axis=0).tolist() for K in Ks}
    c_per_K, se_per_K = [], []
    for K in Ks:
        est, se = _ratio_estimate(np.asarray(ys[K])[:, -1], I[:, -1])
        c_per_K.append(est)
        se_per_K.append(se)
    L2 = np.asarray(l2)
    l2_mean = L2.mean(axis=0)
    l2_se = L2.std(axis=0, ddof=1) / math.sqrt(count) if count > 1 else np.full(len(ns), math.nan)
    if count > 1 and len(ns) > 1:
        checks["L2_no_increase"] = bool(no_increase_verdict(L2))
    return SubaddReport(Ks, ns, c_per_K, c_per_K[-1], se_per_K[-1], trace, bad_steps,
                        l2_mean.tolist(), l2_se.tolist(), checks, count, int(I[:, -1].sum()))


# --- the elementary double-sum inequality ------------------------------------

def tail_sum(eta: float, J: int) -> float:
    """``sum_{j > J} j eta^((j-1)/2)`` in closed form."""
    x = math.sqrt(eta)
    return ((J + 1) * x ** J * (1 - x) + x ** (J + 1)) / (1 - x) ** 2


def _sides(p: np.ndarray, eta: float, n: int, J: int):
    """Left and right sides for ``p[i, j]`` (entries with ``j - i < 2`` ignored)."""
    i, j = np.triu_indices(n + 1, 2)
    gap = (j - i).astype(float)
    q = p[i, j]
    lhs = math.fsum(gap * np.sqrt(q)) / n
    rhs = tail_sum(eta, J) + J / math.sqrt(n) * math.sqrt(math.fsum(gap * q))
    return lhs, rhs


def _extremal_exact(eta: float, n: int, J: int, dps: int = 60):
    with mpmath.workdps(dps):
        e = mpmath.mpf(eta)
        x = mpmath.sqrt(e)
        lhs = mpmath.mpf(0)
        inner = mpmath.mpf(0)
        for i in range(n - 1):
            for j in range(i + 2, n + 1):
                g = j - i
                lhs += g * x ** (g - 1)
                inner += g * e ** (g - 1)
        lhs /= n
        tail = ((J + 1) * x ** J * (1 - x) + x ** (J + 1)) / (1 - x) ** 2
        rhs = tail + J / mpmath.sqrt(n) * mpmath.sqrt(inner)
        return lhs, rhs


@dataclass
class LemmaReport:
    trials: int
    violations: list
    max_slack_ratio: float
    min_slack: float
    extremal_lhs: float
    extremal_rhs: float
    extremal_ok: bool

    @property
    def ok(self) -> bool:
        return not self.violations and self.extremal_ok

    def to_dict(self) -> dict:
        return {"trials": self.trials, "violations": self.violations, "max_slack_ratio": self.max_slack_ratio,
                "min_slack": self.min_slack, "extremal_lhs": self.extremal_lhs,
                "extremal_rhs": self.extremal_rhs, "extremal_ok": self.extremal_ok, "ok": self.ok}


def lemma_l2_check(eta: float, n: int, J: int, trials: int, seed: int) -> LemmaReport:
    """Sample ``p[i, j] ~ Uniform(0, eta^(j-i-1))`` and test the bound; also the extremal ``p``.

    ``min_slack`` is the smallest ``rhs - lhs`` seen over random trials and
    ``max_slack_ratio`` the largest ``lhs / rhs``.  The extremal case is
    evaluated with 60-digit arithmetic.
    """
    if not (0 < eta < 1):
        raise InvalidArgumentError("eta must be in (0, 1)")
    if n < 2 or J < 2 or trials < 0:
        raise InvalidArgumentError("need n >= 2, J >= 2, trials >= 0")
    rng = stream(seed, LEMMA)
    gap = np.subtract.outer(np.arange(n + 1), np.arange(n + 1)).T
    cap = np.where(gap >= 2, eta ** np.maximum(gap - 1, 0).astype(float), 0.0)
    viol = []
    worst_ratio, min_slack = 0.0, math.inf
    for t in range(trials):
        p = rng.random(cap.shape) * cap
        lhs, rhs = _sides(p, eta, n, J)
        if lhs > rhs:
            viol.append({"trial": t, "lhs": lhs, "rhs": rhs})
        worst_ratio = max(worst_ratio, lhs / rhs)
        min_slack = min(min_slack, rhs - lhs)
    lhs, rhs = _extremal_exact(eta, n, J)
    return LemmaReport(trials, viol, worst_ratio, min_slack, float(lhs), float(rhs), bool(lhs <= rhs))

"""Seeded Poisson point processes on rectangular windows, plane or torus.

Random streams
--------------
Every random draw in shapeline comes from a numpy ``PCG64`` generator seeded
through ``numpy.random.SeedSequence``:

* a run seed ``s`` and replicate id ``r`` give the replicate seed
  ``SeedSequence(s, spawn_key=(r,)).generate_state(1, uint64)[0]``
  (see :func:`replicate_seed`);
* a (replicate) seed ``t`` and a purpose code ``p`` give the generator
  ``Generator(PCG64(SeedSequence(t, spawn_key=(p,))))`` (see :func:`stream`).

Purpose codes are fixed integers (``POINTS``, ``COSTS``, ...), so a given
(seed, replicate, purpose) triple produces the same numbers on every machine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np

from .errors import EmptyDomainError, InvalidArgumentError

# purpose codes for stream(); never renumber
POINTS = 0
COSTS = 1
LINES = 2
CELL_CHOICE = 3
TRIPLES = 4
CERTIFICATE = 5
SYNTHETIC = 6
LEMMA = 7
PAIRS = 8
ORIGIN_CHOICE = 9

_U64 = 1 << 64


def _check_seed(seed) -> int:
    if isinstance(seed, (bool, np.bool_)) or not isinstance(seed, (int, np.integer)):
        raise InvalidArgumentError(f"seed must be an integer, got {seed!r}")
    seed = int(seed)
    if not 0 <= seed < _U64:
        raise InvalidArgumentError(f"seed must fit in an unsigned 64-bit integer, got {seed}")
    return seed


def replicate_seed(seed: int, replicate: int) -> int:
    """Derive the 64-bit seed of replicate ``replicate`` from a run seed."""
    seed = _check_seed(seed)
    ss = np.random.SeedSequence(seed, spawn_key=(int(replicate),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def stream(seed: int, purpose: int) -> np.random.Generator:
    """Independent generator for one purpose under ``seed``."""
    seed = _check_seed(seed)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(int(purpose),))))


class Point(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True)
class Window:
    """The rectangle ``[0, width) x [0, height)``, optionally with periodic wrap."""

    width: float
    height: float
    topology: str = "torus"

    def __post_init__(self):
        for name in ("width", "height"):
            v = getattr(self, name)
            if not isinstance(v, (int, float, np.floating, np.integer)) or not math.isfinite(v) or v <= 0:
                raise InvalidArgumentError(f"window {name} must be finite and > 0, got {v!r}")
            object.__setattr__(self, name, float(v))
        if self.topology not in ("plane", "torus"):
            raise InvalidArgumentError(f"window topology must be 'plane' or 'torus', got {self.topology!r}")

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def is_torus(self) -> bool:
        return self.topology == "torus"

    @property
    def center(self) -> Point:
        return Point(self.width / 2.0, self.height / 2.0)

    @property
    def min_side(self) -> float:
        return min(self.width, self.height)

    def contains(self, x, y) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return (x >= 0) & (x <= self.width) & (y >= 0) & (y <= self.height) & np.isfinite(x) & np.isfinite(y)

    def wrap(self, x, y):
        """Map coordinates into the window (torus) or return them unchanged (plane)."""
        if not self.is_torus:
            return np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        return np.mod(x, self.width), np.mod(y, self.height)

    def delta(self, dx, dy):
        """Minimum-image displacement (absolute values on the torus)."""
        dx = np.abs(np.asarray(dx, dtype=float))
        dy = np.abs(np.asarray(dy, dtype=float))
        if self.is_torus:
            dx = np.minimum(dx, self.width - dx)
            dy = np.minimum(dy, self.height - dy)
        return dx, dy

    def signed_delta(self, dx, dy):
        """Minimum-image displacement keeping the sign (torus wraps into [-w/2, w/2])."""
        dx = np.asarray(dx, dtype=float)
        dy = np.asarray(dy, dtype=float)
        if self.is_torus:
            dx = dx - self.width * np.round(dx / self.width)
            dy = dy - self.height * np.round(dy / self.height)
        return dx, dy

    def distance(self, ax, ay, bx, by):
        """Vectorised :func:`pair_distance`."""
        dx, dy = self.delta(np.subtract(ax, bx), np.subtract(ay, by))
        return np.hypot(dx, dy)


def pair_distance(window: Window, a, b) -> float:
    """Euclidean distance on the plane; minimum over wrap images on the torus.

    >>> pair_distance(Window(10, 10, "torus"), Point(1, 1), Point(9, 1))
    2.0
    """
    return float(window.distance(a[0], a[1], b[0], b[1]))


@dataclass(frozen=True)
class Region:
    """A closed disc or axis-aligned rectangle.

    Positions are absolute window coordinates; membership on a torus uses the
    minimum-image displacement from ``center``.
    """

    shape: str
    center: Point
    half_width: float = 0.0
    half_height: float = 0.0
    radius: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "center", Point(float(self.center[0]), float(self.center[1])))
        if self.shape == "disc":
            if not (math.isfinite(self.radius) and self.radius > 0):
                raise InvalidArgumentError(f"disc radius must be > 0, got {self.radius!r}")
        elif self.shape == "rect":
            if not (self.half_width > 0 and self.half_height > 0
                    and math.isfinite(self.half_width) and math.isfinite(self.half_height)):
                raise InvalidArgumentError("rectangle half-widths must be finite and > 0")
        else:
            raise InvalidArgumentError(f"region shape must be 'disc' or 'rect', got {self.shape!r}")

    @classmethod
    def disc(cls, center, radius: float) -> "Region":
        return cls("disc", Point(*center), radius=float(radius))

    @classmethod
    def rect(cls, center, half_width: float, half_height: float) -> "Region":
        return cls("rect", Point(*center), half_width=float(half_width), half_height=float(half_height))

    @classmethod
    def square(cls, center, side: float) -> "Region":
        return cls.rect(center, side / 2.0, side / 2.0)

    def translate(self, dx: float, dy: float) -> "Region":
        return Region(self.shape, Point(self.center.x + dx, self.center.y + dy),
                      self.half_width, self.half_height, self.radius)

    @property
    def area(self) -> float:
        if self.shape == "disc":
            return math.pi * self.radius ** 2
        return 4.0 * self.half_width * self.half_height

    @property
    def extent(self):
        """Half-extent of the bounding box."""
        if self.shape == "disc":
            return self.radius, self.radius
        return self.half_width, self.half_height

    @property
    def diameter(self) -> float:
        if self.shape == "disc":
            return 2.0 * self.radius
        return 2.0 * math.hypot(self.half_width, self.half_height)

    def contains(self, window: Window, x, y) -> np.ndarray:
        if self.shape == "disc":
            return window.distance(self.center.x, self.center.y, x, y) <= self.radius
        dx, dy = window.delta(np.subtract(x, self.center.x), np.subtract(y, self.center.y))
        return (dx <= self.half_width) & (dy <= self.half_height)


class BucketGrid:
    """Uniform bucket grid over a window, points sorted by cell (CSR layout).

    ``order[start[c]:start[c + 1]]`` are the indices of the points in cell
    ``c = iy * nx + ix``.
    """

    MAX_CELLS_PER_AXIS = 4096

    def __init__(self, xy: np.ndarray, window: Window, cell_side: float | None = None):
        self.window = window
        n = len(xy)
        if cell_side is None:
            cell_side = math.sqrt(window.area / max(n, 1))
        self.nx = int(min(max(1, window.width // cell_side), self.MAX_CELLS_PER_AXIS))
        self.ny = int(min(max(1, window.height // cell_side), self.MAX_CELLS_PER_AXIS))
        self.cw = window.width / self.nx
        self.ch = window.height / self.ny
        self.xy = xy
        cell = self.cell_of(xy[:, 0], xy[:, 1])
        self.order = np.argsort(cell, kind="stable").astype(np.int64)
        counts = np.bincount(cell, minlength=self.nx * self.ny)
        self.start = np.zeros(self.nx * self.ny + 1, dtype=np.int64)
        np.cumsum(counts, out=self.start[1:])

    def cell_xy(self, x, y):
        ix = np.clip(np.floor(np.asarray(x) / self.cw).astype(np.int64), 0, self.nx - 1)
        iy = np.clip(np.floor(np.asarray(y) / self.ch).astype(np.int64), 0, self.ny - 1)
        return ix, iy

    def cell_of(self, x, y):
        ix, iy = self.cell_xy(x, y)
        return iy * self.nx + ix

    def _axis_range(self, lo: int, hi: int, n: int) -> np.ndarray:
        if self.window.is_torus:
            if hi - lo + 1 >= n:
                return np.arange(n)
            return np.mod(np.arange(lo, hi + 1), n)
        return np.arange(max(lo, 0), min(hi, n - 1) + 1)

    def _gather(self, cells: np.ndarray) -> np.ndarray:
        if len(cells) == 0:
            return np.empty(0, dtype=np.int64)
        cells = np.unique(cells)
        parts = [self.order[self.start[c]:self.start[c + 1]] for c in cells]
        return np.concatenate(parts) if parts else np.empty(0, dtype=np.int64)

    def in_box(self, xmin: float, xmax: float, ymin: float, ymax: float) -> np.ndarray:
        """Indices of points in the cells overlapping a box (a superset of the box)."""
        xs = self._axis_range(int(math.floor(xmin / self.cw)), int(math.floor(xmax / self.cw)), self.nx)
        ys = self._axis_range(int(math.floor(ymin / self.ch)), int(math.floor(ymax / self.ch)), self.ny)
        cells = (ys[:, None] * self.nx + xs[None, :]).ravel()
        return self._gather(cells)

    def _ring(self, cx: int, cy: int, k: int) -> np.ndarray:
        if k == 0:
            return np.array([cy * self.nx + cx])
        xs = np.arange(cx - k, cx + k + 1)
        ys = np.arange(cy - k, cy + k + 1)
        top = np.stack([xs, np.full_like(xs, cy + k)], axis=1)
        bottom = np.stack([xs, np.full_like(xs, cy - k)], axis=1)
        left = np.stack([np.full_like(ys, cx - k), ys], axis=1)
        right = np.stack([np.full_like(ys, cx + k), ys], axis=1)
        ring = np.concatenate([top, bottom, left, right])
        if self.window.is_torus:
            ring[:, 0] %= self.nx
            ring[:, 1] %= self.ny
        else:
            ok = (ring[:, 0] >= 0) & (ring[:, 0] < self.nx) & (ring[:, 1] >= 0) & (ring[:, 1] < self.ny)
            ring = ring[ok]
        return ring[:, 1] * self.nx + ring[:, 0]

    def nearest(self, x: float, y: float) -> int:
        """Index of the nearest point, ties to the smallest index; -1 if empty."""
        if len(self.xy) == 0:
            return -1
        ix, iy = self.cell_xy(x, y)
        cx, cy = int(ix), int(iy)
        best_d, best_i = math.inf, -1
        k = 0
        torus = self.window.is_torus
        while True:
            idx = self._gather(self._ring(cx, cy, k))
            if len(idx):
                d = self.window.distance(x, y, self.xy[idx, 0], self.xy[idx, 1])
                m = d.min()
                i = int(idx[d == m].min())
                if m < best_d or (m == best_d and i < best_i):
                    best_d, best_i = float(m), i
            if torus:
                done = 2 * k + 1 >= self.nx and 2 * k + 1 >= self.ny
                bound = min(x - (cx - k) * self.cw, (cx + k + 1) * self.cw - x,
                            y - (cy - k) * self.ch, (cy + k + 1) * self.ch - y)
            else:
                sides = []
                if cx - k > 0:
                    sides.append(x - (cx - k) * self.cw)
                if cx + k < self.nx - 1:
                    sides.append((cx + k + 1) * self.cw - x)
                if cy - k > 0:
                    sides.append(y - (cy - k) * self.ch)
                if cy + k < self.ny - 1:
                    sides.append((cy + k + 1) * self.ch - y)
                done = not sides
                bound = min(sides) if sides else math.inf
            if done or best_d < bound:
                return best_i
            k += 1


@dataclass(frozen=True, eq=False)
class PointSet:
    """A realisation of the point process, plus any planted points.

    ``xy`` is an ``(n, 2)`` read-only float array; ``planted`` lists the
    indices of points that were placed deterministically rather than sampled.
    """

    window: Window
    xy: np.ndarray
    planted: tuple = ()
    seed: int | None = None

    def __post_init__(self):
        xy = np.array(self.xy, dtype=float).reshape(-1, 2)
        if not np.all(np.isfinite(xy)):
            raise InvalidArgumentError("point coordinates must be finite")
        if len(xy) and not np.all(self.window.contains(xy[:, 0], xy[:, 1])):
            raise InvalidArgumentError("points must lie inside the window")
        xy.setflags(write=False)
        object.__setattr__(self, "xy", xy)
        planted = tuple(int(i) for i in self.planted)
        if len(set(planted)) != len(planted) or any(not 0 <= i < len(xy) for i in planted):
            raise InvalidArgumentError("planted indices must be unique and valid")
        object.__setattr__(self, "planted", planted)

    def __len__(self) -> int:
        return len(self.xy)

    def __getitem__(self, i) -> Point:
        return Point(float(self.xy[i, 0]), float(self.xy[i, 1]))

    @cached_property
    def grid(self) -> BucketGrid:
        return BucketGrid(self.xy, self.window)

    @cached_property
    def sampled_mask(self) -> np.ndarray:
        """True for points of the Poisson sample, False for planted ones."""
        m = np.ones(len(self), dtype=bool)
        m[list(self.planted)] = False
        m.setflags(write=False)
        return m

    def same_as(self, other: "PointSet") -> bool:
        return (self.window == other.window and self.planted == other.planted
                and self.xy.shape == other.xy.shape and bool(np.array_equal(self.xy, other.xy)))


def sample_poisson(window: Window, intensity: float, seed: int) -> PointSet:
    """Homogeneous Poisson sample: ``N ~ Poisson(intensity * area)``, then ``N`` uniform points.

    Parameters
    ----------
    window : Window
        Simulation region.
    intensity : float
        Expected number of points per unit area (>= 0).
    seed : int
        Unsigned 64-bit seed; the same arguments always give the same points.
    """
    if not isinstance(intensity, (int, float, np.integer, np.floating)) or not math.isfinite(intensity):
        raise InvalidArgumentError(f"intensity must be finite, got {intensity!r}")
    if intensity < 0:
        raise InvalidArgumentError(f"intensity must be >= 0, got {intensity!r}")
    seed = _check_seed(seed)
    rng = stream(seed, POINTS)
    n = int(rng.poisson(float(intensity) * window.area))
    xy = rng.random((n, 2)) * np.array([window.width, window.height])
    return PointSet(window, xy, (), seed)


def plant_points(ps: PointSet, locations: Sequence) -> PointSet:
    """Append ``locations`` to the point set and record them as planted."""
    locs = np.array(list(locations), dtype=float).reshape(-1, 2)
    if len(locs) == 0:
        return ps
    if not np.all(np.isfinite(locs)) or not np.all(ps.window.contains(locs[:, 0], locs[:, 1])):
        raise InvalidArgumentError("planted locations must lie inside the window")
    n = len(ps)
    xy = np.concatenate([ps.xy, locs])
    return PointSet(ps.window, xy, ps.planted + tuple(range(n, n + len(locs))), ps.seed)


def nearest_point(ps: PointSet, loc, sampled_only: bool = False) -> int:
    """Index of the point closest to ``loc`` (topology-aware), ties to the smallest index.

    With ``sampled_only`` planted points are ignored.
    """
    if len(ps) == 0:
        raise EmptyDomainError("nearest_point on an empty point set")
    if sampled_only and ps.planted:
        keep = np.flatnonzero(ps.sampled_mask)
        if len(keep) == 0:
            raise EmptyDomainError("no sampled points")
        d = ps.window.distance(loc[0], loc[1], ps.xy[keep, 0], ps.xy[keep, 1])
        return int(keep[np.argmin(d)])
    return ps.grid.nearest(float(loc[0]), float(loc[1]))


def points_in(ps: PointSet, region: Region, sampled_only: bool = False) -> np.ndarray:
    """Sorted indices of the points in the closed ``region``."""
    if len(ps) == 0:
        return np.empty(0, dtype=np.int64)
    ex, ey = region.extent
    c = region.center
    w = ps.window
    if w.is_torus and (ex >= w.width / 2 or ey >= w.height / 2):
        cand = np.arange(len(ps))
    else:
        cand = ps.grid.in_box(c.x - ex, c.x + ex, c.y - ey, c.y + ey)
    cand = cand[region.contains(w, ps.xy[cand, 0], ps.xy[cand, 1])]
    if sampled_only and ps.planted:
        cand = cand[ps.sampled_mask[cand]]
    return np.sort(cand)


# --- text format -----------------------------------------------------------

def fmt(v: float) -> str:
    """17-significant-digit decimal; parses back to the identical double."""
    return format(float(v), ".17g")


def write_points(path, ps: PointSet) -> None:
    w = ps.window
    lines = [f"# shapeline points v1 {fmt(w.width)} {fmt(w.height)} {w.topology}"]
    lines += [f"{fmt(x)} {fmt(y)}" for x, y in ps.xy]
    lines.append("# planted:" + "".join(f" {i}" for i in ps.planted))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_points(path) -> PointSet:
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines:
        raise InvalidArgumentError(f"{path}: empty points file")
    head = lines[0].split()
    if head[:4] != ["#", "shapeline", "points", "v1"] or len(head) != 7:
        raise InvalidArgumentError(f"{path}: bad points header {lines[0]!r}")
    window = Window(float(head[4]), float(head[5]), head[6])
    xy, planted = [], ()
    for ln in lines[1:]:
        if ln.startswith("# planted:"):
            planted = tuple(int(t) for t in ln[len("# planted:"):].split())
        elif ln.startswith("#") or not ln.strip():
            continue
        else:
            x, y = ln.split()
            xy.append((float(x), float(y)))
    return PointSet(window, np.array(xy, dtype=float).reshape(-1, 2), planted, None)

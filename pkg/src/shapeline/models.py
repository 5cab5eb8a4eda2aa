"""Named network models: how to turn a point set into a route-length oracle."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from . import netbuild
from .errors import InvalidArgumentError
from .ppgen import LINES, PointSet, Window, plant_points, replicate_seed, sample_poisson, stream
from .routes import EuclideanEngine, RouteEngine

# model name -> allowed parameters and their defaults
MODEL_PARAMS = {
    "rng": {"bands": []},
    "gabriel": {"bands": []},
    "delaunay": {"bands": []},
    "iid-delaunay": {"distribution": "exponential", "params": [1.0], "bands": []},
    "lattice": {"spacing": 1.0, "offset": 0.0, "bands": []},
    "lattice-random": {"mean_spacing": 1.0, "bands": []},
    "power": {"alpha": 1.5, "cutoff": None, "degenerate": False, "bands": []},
    "euclid": {},
}

# route-lengths of these models are never shorter than straight-line distance
GEOMETRIC = {"rng", "gabriel", "delaunay", "lattice", "lattice-random", "euclid"}


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """A network model with its parameters, window and point intensity.

    ``params`` overrides the defaults in :data:`MODEL_PARAMS`; unknown keys
    are rejected.  ``power`` needs ``alpha > 1`` unless ``degenerate`` is set,
    in which case ``alpha = 1`` is allowed.
    """

    name: str
    window: Window = field(default_factory=lambda: Window(600.0, 600.0, "torus"))
    intensity: float = 1.0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in MODEL_PARAMS:
            raise InvalidArgumentError(f"unknown model {self.name!r}; choose from {sorted(MODEL_PARAMS)}")
        extra = set(self.params) - set(MODEL_PARAMS[self.name])
        if extra:
            raise InvalidArgumentError(f"model {self.name}: unknown parameters {sorted(extra)}")
        if not (math.isfinite(self.intensity) and self.intensity > 0):
            raise InvalidArgumentError(f"intensity must be finite and > 0, got {self.intensity!r}")
        merged = dict(MODEL_PARAMS[self.name])
        merged.update(self.params)
        object.__setattr__(self, "params", merged)
        if self.name == "power":
            a = float(merged["alpha"])
            if not math.isfinite(a) or a < 1 or (a == 1 and not merged["degenerate"]):
                raise InvalidArgumentError(
                    f"power model needs alpha > 1 (alpha = 1 only with degenerate=true), got {a}")
            if merged["cutoff"] is not None and not float(merged["cutoff"]) > 0:
                raise InvalidArgumentError("power cutoff must be > 0")
        if self.name == "iid-delaunay":
            self.cost_rule(0)
        if merged.get("bands"):
            netbuild._check_bands(merged["bands"])

    def __eq__(self, other):
        return (isinstance(other, ModelSpec) and self.name == other.name and self.window == other.window
                and self.intensity == other.intensity and self.params == other.params)

    @property
    def geometric(self) -> bool:
        return self.name in GEOMETRIC

    @property
    def needs_graph(self) -> bool:
        return self.name != "euclid"

    def cost_rule(self, seed: int) -> netbuild.CostRule:
        p = self.params
        return netbuild.CostRule("iid", p["distribution"], tuple(p["params"]), seed)

    def to_dict(self) -> dict:
        return {"name": self.name, **{k: v for k, v in self.params.items() if v != MODEL_PARAMS[self.name][k]}}

    def sample(self, seed: int) -> PointSet:
        return sample_poisson(self.window, self.intensity, seed)

    def build_network(self, ps: PointSet, seed: int):
        """The model's network on ``ps``; ``None`` for the complete-Euclidean model."""
        p = self.params
        name = self.name
        if name == "euclid":
            return None
        if name == "rng":
            net = netbuild.build_rng(ps)
        elif name == "gabriel":
            net = netbuild.build_gabriel(ps)
        elif name == "delaunay":
            net = netbuild.build_delaunay(ps)
        elif name == "iid-delaunay":
            net = netbuild.apply_cost_rule(netbuild.build_delaunay(ps), self.cost_rule(seed))
        elif name == "lattice":
            w = ps.window
            s, off = float(p["spacing"]), float(p["offset"])
            net = netbuild.build_lattice_net(ps, netbuild.unit_lines(w.width, s, off),
                                             netbuild.unit_lines(w.height, s, off))
        elif name == "lattice-random":
            rng = stream(seed, LINES)
            w = ps.window
            m = float(p["mean_spacing"])
            net = netbuild.build_lattice_net(ps, netbuild.poisson_lines(w.width, m, rng),
                                             netbuild.poisson_lines(w.height, m, rng))
        else:
            cutoff = p["cutoff"] if p["cutoff"] is not None else 4.0 / math.sqrt(self.intensity)
            net = netbuild.build_power_complete(ps, float(p["alpha"]), float(cutoff), seed=seed)
        if p.get("bands"):
            net = netbuild.add_counterexample_links(net, p["bands"])
        return net

    def engine(self, ps: PointSet, seed: int):
        net = self.build_network(ps, seed)
        return EuclideanEngine(ps) if net is None else RouteEngine(net)

    def replicate(self, seed: int, replicate: int, planted=()):
        """Point set and route engine of one replicate (planted points appended)."""
        rs = replicate_seed(seed, replicate)
        ps = self.sample(rs)
        if len(planted):
            ps = plant_points(ps, planted)
        return ps, self.engine(ps, rs)

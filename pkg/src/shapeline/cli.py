"""Declarative experiment runner: ``shapeline <task> [--spec FILE] [--seed U64] [--workers N] [--out DIR]``.

A run reads an experiment description (JSON file and/or flags; the file
wins), validates every field up front, executes one task and writes its
artifacts plus ``summary.json`` to the output directory.  Exit status is 0
iff every verdict is PASS, 1 if some verdict failed, 2 for an invalid
description and 3 when a task aborted part-way (``summary.json`` then has
``"status": "partial"``).

Data artifacts depend only on the description: wall-clock time goes to
``timing.txt``, never into ``summary.json``.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import netbuild, shapestat, subadd
from .errors import InvalidArgumentError, ShapelineError
from .models import MODEL_PARAMS, ModelSpec
from .ppgen import Region, Window, fmt, nearest_point, plant_points, replicate_seed, sample_poisson, write_points
from .routes import RouteEngine, check_triangle

TASKS = ("sample", "build", "route", "rho", "lsp", "moments", "shape", "as-shape", "subadd", "lemma-l2", "validate")

DEFAULTS = {
    "model": {"name": "rng"},
    "window": {"width": 600.0, "height": 600.0, "topology": "torus"},
    "intensity": 1.0,
    "seed": 0,
    "thetas": 16,
    "r_ladder": [25.0, 50.0, 100.0, 200.0],
    "replicates": 24,
    "estimator": "slope",
    "region_a": {"shape": "square", "side": 1.0},
    "region_b": {"shape": "square", "side": 1.0},
    "source": "synthetic",
    "arrays": 64,
    "delta": 0.5,
    "law": ["exponential", [1.0]],
    "K_ladder": [1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0],
    "n_ladder": [100, 1000, 10000],
    "r0": 10.0,
    "theta": 0.0,
    "eta": [0.3, 0.7],
    "lemma_n": [10, 50],
    "J": [2, 5],
    "trials": 125,
    "eps": 0.15,
    "ells": [100.0],
    "min_pass_rate": 0.9,
    "shape_csv": None,
    "rho_window": {"width": 600.0, "height": 600.0, "topology": "torus"},
    "input": None,
    "pairs": [],
    "n_triples": 10000,
    "expect": {},
}

EXPECT_KEYS = {"mean_rho", "lattice_tol", "isotropy", "c"}

# keys that never change data artifacts
RUNTIME_KEYS = ("workers", "out")


class SpecError(InvalidArgumentError):
    """Invalid experiment description."""


@dataclass
class ExperimentSpec:
    task: str
    settings: dict = field(default_factory=dict)
    workers: int = 1
    out: str = "."

    def __getattr__(self, name):
        try:
            return self.__dict__["settings"][name]
        except KeyError:
            raise AttributeError(name) from None

    def __eq__(self, other):
        return isinstance(other, ExperimentSpec) and self.task == other.task and self.settings == other.settings

    @property
    def model_spec(self) -> ModelSpec:
        m = dict(self.settings["model"])
        name = m.pop("name")
        return ModelSpec(name, _window(self.settings["window"]), float(self.settings["intensity"]), m)


def _window(d) -> Window:
    return Window(float(d["width"]), float(d["height"]), d.get("topology", "torus"))


def _region(d) -> Region:
    shape = d.get("shape")
    extra = set(d) - {"shape", "side", "radius", "half_width", "half_height"}
    if extra:
        raise SpecError(f"region: unknown keys {sorted(extra)}")
    need = {"square": ("side",), "disc": ("radius",), "rect": ("half_width", "half_height")}
    if shape in need:
        _need(all(_is_num(d.get(k)) for k in need[shape]), f"{shape} region needs {', '.join(need[shape])}")
    if shape == "square":
        return Region.square((0.0, 0.0), float(d["side"]))
    if shape == "disc":
        return Region.disc((0.0, 0.0), float(d["radius"]))
    if shape == "rect":
        return Region.rect((0.0, 0.0), float(d["half_width"]), float(d["half_height"]))
    raise SpecError(f"region shape must be square, disc or rect, got {shape!r}")


def _need(cond, msg):
    if not cond:
        raise SpecError(msg)


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def parse_spec(doc: dict, task: str | None = None, workers: int = 1, out: str = ".") -> ExperimentSpec:
    """Validate a description and fill in defaults.

    ``doc`` is a JSON object; ``task`` (if given) must agree with
    ``doc["task"]``.  Raises :class:`SpecError` naming the first problem.
    """
    if not isinstance(doc, dict):
        raise SpecError("experiment description must be a JSON object")
    doc = copy.deepcopy(doc)
    t = doc.pop("task", None)
    if task is not None and t is not None and t != task:
        raise SpecError(f"task {task!r} on the command line but {t!r} in the description")
    t = t if t is not None else task
    _need(t in TASKS, f"unknown task {t!r}; choose from {', '.join(TASKS)}")
    for k in RUNTIME_KEYS:
        doc.pop(k, None)
    unknown = set(doc) - set(DEFAULTS)
    _need(not unknown, f"unknown keys {sorted(unknown)}")
    s = copy.deepcopy(DEFAULTS)
    s.update(doc)

    seed = s["seed"]
    _need(isinstance(seed, int) and not isinstance(seed, bool) and 0 <= seed < 2 ** 64,
          f"seed must be an integer in [0, 2^64), got {seed!r}")
    _need(isinstance(s["window"], dict) and not set(s["window"]) - {"width", "height", "topology"},
          "window needs width, height and optional topology")
    s["window"] = {"width": float(s["window"].get("width", 0)), "height": float(s["window"].get("height", 0)),
                   "topology": s["window"].get("topology", "torus")}
    s["rho_window"] = {"width": float(s["rho_window"]["width"]), "height": float(s["rho_window"]["height"]),
                       "topology": s["rho_window"].get("topology", "torus")}
    _window(s["window"])
    _window(s["rho_window"])
    _need(_is_num(s["intensity"]) and s["intensity"] >= 0, "intensity must be a finite number >= 0")
    s["intensity"] = float(s["intensity"])
    m = s["model"]
    _need(isinstance(m, dict) and m.get("name") in MODEL_PARAMS,
          f"model.name must be one of {sorted(MODEL_PARAMS)}")
    uses_model = t not in ("sample", "lemma-l2", "validate") and not (t == "subadd" and s["source"] == "synthetic")
    if uses_model:
        _need(s["intensity"] > 0, "intensity must be > 0 for this task")
    # model parameters are validated for every task, even ones that ignore them
    probe = dict(s, intensity=s["intensity"] or 1.0)
    try:
        ExperimentSpec(t, probe).model_spec
    except InvalidArgumentError as exc:
        raise SpecError(f"model: {exc}") from None
    if isinstance(s["thetas"], int) and not isinstance(s["thetas"], bool):
        _need(s["thetas"] >= 1, "thetas must be >= 1")
        s["thetas"] = [float(x) for x in shapestat.theta_grid(s["thetas"])]
    _need(isinstance(s["thetas"], list) and all(_is_num(x) for x in s["thetas"]) and s["thetas"],
          "thetas must be a count or a list of angles")
    s["thetas"] = [float(x) for x in s["thetas"]]
    _need(all(b > a for a, b in zip(s["thetas"], s["thetas"][1:])), "thetas must be strictly increasing")
    for key in ("r_ladder", "K_ladder", "ells"):
        v = s[key]
        _need(isinstance(v, list) and v and all(_is_num(x) and x >= 0 for x in v), f"{key} must be a list of numbers >= 0")
        s[key] = [float(x) for x in v]
    for key in ("n_ladder", "lemma_n", "J", "pairs"):
        _need(isinstance(s[key], list), f"{key} must be a list")
    _need(all(isinstance(x, int) and x >= 1 for x in s["n_ladder"]), "n_ladder must hold integers >= 1")
    _need(isinstance(s["replicates"], int) and s["replicates"] >= 2, "replicates must be an integer >= 2")
    _need(s["estimator"] in ("slope", "terminal"), "estimator must be slope or terminal")
    _region(s["region_a"])
    _region(s["region_b"])
    _need(s["source"] in ("synthetic", "model"), "source must be synthetic or model")
    _need(isinstance(s["arrays"], int) and s["arrays"] >= 1, "arrays must be an integer >= 1")
    _need(_is_num(s["delta"]) and 0 < s["delta"] <= 1, "delta must be in (0, 1]")
    _need(isinstance(s["law"], list) and len(s["law"]) == 2 and isinstance(s["law"][1], list),
          "law must be [kind, [params]]")
    subadd._draw_steps(1, s["law"], np.random.default_rng(0))
    _need(_is_num(s["r0"]) and s["r0"] > 0, "r0 must be > 0")
    _need(_is_num(s["theta"]), "theta must be a number")
    _need(all(_is_num(e) and 0 < e < 1 for e in s["eta"]), "eta values must be in (0, 1)")
    _need(all(isinstance(x, int) and x >= 2 for x in s["lemma_n"]), "lemma_n values must be integers >= 2")
    _need(all(isinstance(x, int) and x >= 2 for x in s["J"]), "J values must be integers >= 2")
    _need(isinstance(s["trials"], int) and s["trials"] >= 0, "trials must be an integer >= 0")
    _need(_is_num(s["eps"]) and 0 <= s["eps"] < 1, "eps must be in [0, 1)")
    _need(_is_num(s["min_pass_rate"]) and 0 <= s["min_pass_rate"] <= 1, "min_pass_rate must be in [0, 1]")
    _need(isinstance(s["n_triples"], int) and s["n_triples"] >= 0, "n_triples must be an integer >= 0")
    _need(all(isinstance(p, list) and len(p) == 2 and all(isinstance(q, int) for q in p) for p in s["pairs"]),
          "pairs must be a list of [u, v] vertex pairs")
    _need(isinstance(s["expect"], dict) and not set(s["expect"]) - EXPECT_KEYS,
          f"expect may only hold {sorted(EXPECT_KEYS)}")
    if t == "validate":
        _need(s["input"] is not None, "validate needs an input network file")
    if t in ("rho", "lsp", "moments", "shape"):
        shapestat._check_ladder(ExperimentSpec(t, s).model_spec, s["r_ladder"])
    _need(isinstance(workers, int) and workers >= 1, "workers must be >= 1")
    return ExperimentSpec(t, s, workers, out)


def emit(spec: ExperimentSpec) -> dict:
    """JSON-ready description; ``parse_spec(emit(s)) == s``."""
    return {"task": spec.task, **copy.deepcopy(spec.settings)}


# --- deterministic JSON ------------------------------------------------------

def _json(obj, indent: int = 0) -> str:
    pad = "  " * (indent + 1)
    end = "  " * indent
    if obj is None or (isinstance(obj, float) and not math.isfinite(obj)):
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        return _json(obj.tolist(), indent)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_json(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(_json(v) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + _json(v, indent + 1) for v in obj) + "\n" + end + "]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def content_hash(data: bytes) -> str:
    """Git blob hash of ``data``."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


# --- tasks ---------------------------------------------------------------------

class Run:
    def __init__(self, spec: ExperimentSpec, out: Path):
        self.spec = spec
        self.out = out
        self.artifacts = []
        self.verdicts = {}
        self.results = {}

    def path(self, name: str) -> Path:
        self.artifacts.append(name)
        return self.out / name

    def csv(self, name: str, head, body):
        shapestat.write_csv(self.path(name), head, body)

    def verdict(self, name: str, ok: bool):
        self.verdicts[name] = "PASS" if ok else "FAIL"


def _models_rho(run: Run) -> shapestat.ShapeEstimate:
    s = run.spec
    est = shapestat.estimate_rho(s.model_spec, s.thetas, s.r_ladder, s.replicates, s.seed, s.estimator, s.workers)
    run.csv("rho.csv", *est.rows())
    run.results["rho"] = est.to_dict()
    return est


def task_sample(run: Run):
    s = run.spec
    ps = sample_poisson(_window(s.window), s.intensity, s.seed)
    write_points(run.path("points.txt"), ps)
    run.results["points"] = len(ps)
    run.verdict("sample", True)


def task_build(run: Run):
    s = run.spec
    m = s.model_spec
    _need(m.needs_graph, "the euclid model has no stored network to build")
    ps = m.sample(s.seed)
    write_points(run.path("points.txt"), ps)
    net = m.build_network(ps, s.seed)
    netbuild.write_network(run.path("net.txt"), net)
    run.results["vertices"] = net.n_vertices
    run.results["edges"] = len(net.edges)
    run.results["model_tag"] = net.model_tag
    run.verdict("connected", True)


def task_route(run: Run):
    s = run.spec
    m = s.model_spec
    ps, eng = m.replicate(s.seed, 0)
    pairs = s.pairs
    if not pairs:
        w = ps.window
        o = nearest_point(ps, w.center)
        pairs = [[o, nearest_point(ps, shapestat._target(w, r, t))] for t in s.thetas for r in s.r_ladder]
    lengths = [eng.route_length(u, v) for u, v in pairs]
    run.results["routes"] = [{"u": int(u), "v": int(v), "length": d} for (u, v), d in zip(pairs, lengths)]
    run.verdict("route", all(math.isfinite(d) for d in lengths))


def _rho_expectations(run: Run, est: shapestat.ShapeEstimate):
    e = run.spec.expect
    if "mean_rho" in e:
        lo, hi = e["mean_rho"]
        run.verdict("mean_rho_range", lo <= est.mean_rho <= hi)
    if "lattice_tol" in e:
        f = np.abs(np.cos(est.theta_grid)) + np.abs(np.sin(est.theta_grid))
        run.verdict("lattice_formula", bool(np.all(np.abs(est.rho_hat - f) <= e["lattice_tol"] * f)))
    if e.get("isotropy"):
        dev = np.abs(est.rho_hat - est.rho_hat.mean())
        run.verdict("isotropy", bool(np.all(dev <= 3 * est.stderr)))


def task_rho(run: Run):
    est = _models_rho(run)
    ls = shapestat.limit_shape(est)
    run.csv("shape.csv", *ls.rows())
    run.verdict("estimate", bool(np.all(np.isfinite(est.rho_hat)) and np.all(est.rho_hat >= 0)))
    _rho_expectations(run, est)


def _diag(run: Run, rho):
    s = run.spec
    A, B = _region(s.region_a), _region(s.region_b)
    m = s.model_spec
    if rho is None:
        d = shapestat.check_moments(m, A, B, s.r_ladder, s.replicates, replicate_seed(s.seed, 1 << 20),
                                    s.thetas, s.workers)
    else:
        d = shapestat.shape_diagnostics(m, A, B, rho, s.r_ladder, s.replicates,
                                        replicate_seed(s.seed, 1 << 20), s.workers)
    run.csv("diag.csv", *d.rows())
    run.results["diagnostics"] = d.to_dict()
    return d


def task_lsp(run: Run):
    d = _diag(run, _models_rho(run))
    run.verdicts["lsp"] = d.verdicts["lsp"]


def task_moments(run: Run):
    d = _diag(run, None)
    run.verdicts["moments"] = d.verdicts["moments"]


def task_shape(run: Run):
    est = _models_rho(run)
    ls = shapestat.limit_shape(est)
    run.csv("shape.csv", *ls.rows())
    lip = shapestat.lipschitz_ratio(est)
    bound = 3 * float(ls.radius_stderr.max())
    run.results["shape"] = {"convexity_defect": ls.convexity_defect, "defect_bound": bound,
                            "lipschitz_ratio": lip, "max_radius": ls.max_radius}
    run.verdict("convexity", ls.convexity_defect <= bound)
    _rho_expectations(run, est)


def _read_shape(path) -> shapestat.LimitShape:
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return shapestat.LimitShape(rows[:, 0], rows[:, 1], rows[:, 2],
                                shapestat._convexity_defect(np.stack([rows[:, 1] * np.cos(rows[:, 0]),
                                                                      rows[:, 1] * np.sin(rows[:, 0])], 1)))


def task_as_shape(run: Run):
    s = run.spec
    m = s.model_spec
    _need(not m.window.is_torus, "as-shape needs a plane window")
    if s.shape_csv:
        shape = _read_shape(s.shape_csv)
    else:
        rm = ModelSpec(m.name, _window(s.rho_window), m.intensity, {k: v for k, v in s.model.items() if k != "name"})
        est = shapestat.estimate_rho(rm, s.thetas, s.r_ladder, s.replicates, s.seed, s.estimator, s.workers)
        run.csv("rho.csv", *est.rows())
        shape = shapestat.limit_shape(est)
    run.csv("shape.csv", *shape.rows())
    c = m.window.center
    rows = []
    passes = 0
    for k in range(s.replicates):
        ps, eng = m.replicate(replicate_seed(s.seed, 1 << 21), k, planted=[(c.x, c.y)])
        res = shapestat.as_shape_check(eng, shape, s.ells, s.eps)
        ok = all(r.ok for r in res)
        passes += ok
        rows.append({"replicate": k, "ok": ok, "inner": [r.inner_ok for r in res], "outer": [r.outer_ok for r in res]})
    rate = passes / s.replicates
    run.results["as_shape"] = {"pass_rate": rate, "replicates": rows}
    run.verdict("as_shape", rate >= s.min_pass_rate)


def _model_arrays(spec: ExperimentSpec):
    m = spec.model_spec
    A = _region(spec.region_a)
    n = max(spec.n_ladder)
    for k in range(spec.arrays):
        ps, eng = m.replicate(spec.seed, k)
        yield subadd.extract_array(eng, A, spec.theta, spec.r0, n, replicate_seed(spec.seed, k))


def task_subadd(run: Run):
    s = run.spec
    if s.source == "synthetic":
        n = max(s.n_ladder)
        arrays = (subadd.synthetic_array(n, s.delta, s.law, replicate_seed(s.seed, k)) for k in range(s.arrays))
    else:
        arrays = _model_arrays(s)
    rep = subadd.verify_prop_sub(arrays, s.K_ladder, s.n_ladder)
    run.csv("subadd.csv", *rep.rows())
    run.results["subadd"] = rep.to_dict()
    for k, v in rep.checks.items():
        run.verdict(k, v)
    if "c" in s.expect:
        target, tol = s.expect["c"]
        run.verdict("c_recovery", abs(rep.c_hat - target) <= tol * abs(target))


def task_lemma(run: Run):
    s = run.spec
    out = []
    ok = True
    k = 0
    for eta in s.eta:
        for n in s.lemma_n:
            for J in s.J:
                r = subadd.lemma_l2_check(eta, n, J, s.trials, replicate_seed(s.seed, k))
                k += 1
                ok &= r.ok
                out.append({"eta": eta, "n": n, "J": J, **r.to_dict()})
    run.results["lemma_l2"] = out
    run.verdict("lemma_l2", ok)


def task_validate(run: Run):
    s = run.spec
    net = netbuild.read_network(s.input)
    rep = check_triangle(RouteEngine(net), s.n_triples, s.seed)
    run.results["triangle"] = {"samples_checked": rep.samples_checked, "violations": len(rep.violations),
                               "max_violation": rep.max_violation,
                               "witnesses": [list(w) for w, _ in rep.violations[:20]]}
    run.verdict("triangle", rep.ok)


TASK_FUNCS = {"sample": task_sample, "build": task_build, "route": task_route, "rho": task_rho, "lsp": task_lsp,
              "moments": task_moments, "shape": task_shape, "as-shape": task_as_shape, "subadd": task_subadd,
              "lemma-l2": task_lemma, "validate": task_validate}


def run(spec: ExperimentSpec) -> dict:
    """Execute ``spec`` and write its artifacts; returns the summary (also written to ``summary.json``)."""
    out = Path(spec.out)
    out.mkdir(parents=True, exist_ok=True)
    echo = emit(spec)
    r = Run(spec, out)
    t0 = time.perf_counter()
    status, error = "complete", None
    try:
        TASK_FUNCS[spec.task](r)
    except (ShapelineError, ValueError, RuntimeError, OSError) as exc:
        status, error = "partial", f"{type(exc).__name__}: {exc}"
        r.verdicts["run"] = "FAIL"
    wall = time.perf_counter() - t0
    summary = {
        "spec": echo,
        "input_hash": content_hash(_json(echo).encode()),
        "status": status,
        "error": error,
        "verdicts": r.verdicts,
        "results": r.results,
        "artifacts": sorted(set(r.artifacts)) + ["summary.json"],
    }
    (out / "summary.json").write_text(_json(summary) + "\n", encoding="utf-8")
    (out / "timing.txt").write_text(f"wall_clock_seconds {wall:.3f}\n", encoding="utf-8")
    summary["wall_clock"] = wall
    return summary


def exit_status(summary: dict) -> int:
    if summary["status"] != "complete":
        return 3
    return 0 if all(v == "PASS" for v in summary["verdicts"].values()) else 1


def _flag_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="shapeline", description="Route-length shape experiments")
    p.add_argument("task", choices=TASKS)
    p.add_argument("--spec", help="JSON experiment description (overrides flags)")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default=os.environ.get("SHAPELINE_OUT", "."))
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="flat override, VALUE parsed as JSON when possible")
    args = p.parse_args(argv)
    doc = {}
    try:
        for item in args.set:
            _need("=" in item, f"--set expects KEY=VALUE, got {item!r}")
            k, v = item.split("=", 1)
            doc[k] = _flag_value(v)
        if args.seed is not None:
            doc["seed"] = args.seed
        if args.spec:
            with open(args.spec, encoding="utf-8") as fh:
                doc.update(json.load(fh))
        spec = parse_spec(doc, args.task, args.workers, args.out)
    except (InvalidArgumentError, OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        print(f"error: invalid-spec: {exc}", file=sys.stderr)
        return 2
    summary = run(spec)
    code = exit_status(summary)
    for k, v in summary["verdicts"].items():
        print(f"{k}: {v}")
    if summary["error"]:
        print(f"error: {summary['error']}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())

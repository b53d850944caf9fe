"""Command-line front end.

Usage::

    rigidlab <command> [--config PATH] [--out DIR] [--seed N] [--threads N]
                       [--dim {2,3}] [--label NAME] [--set KEY=JSON ...]

Commands: check-algebra, energy, minimize, piola, converge, geodesic.
Artifacts are written as ``<command>_<label>.<ext>`` plus a
``<command>_<label>_manifest.json``.  Exit codes: 0 success, 1 a checked
property failed, 2 configuration error, 3 numerical-domain error.
"""
from __future__ import annotations

import argparse
import copy
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import checks, experiments, kernels, parallel, reports
from .errors import ConfigError, DimensionError, DomainError
from .functionals import elastic_energy, jacobian_functional, metric_defect_energy
from .geometry import ChartGrid, builtin_metric
from .maps import DiscreteMap
from .optimizer import OptimizerConfig, minimize
from . import piola as pc

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_DOMAIN = 0, 1, 2, 3

DEFAULTS = {
    "check-algebra": {"cases": 10_000, "fd_cases": 1_000, "rtol": 1e-9},
    "energy": {
        "grid": {"nodes": 33, "lower": 0.0, "upper": 1.0},
        "source": {"tag": "euclidean"},
        "target": {"tag": "euclidean"},
        "map": {"kind": "identity"},
        "p": 2.0, "quad_order": 2, "clamp": False,
    },
    "minimize": {
        "grid": {"nodes": 17, "lower": 0.0, "upper": 1.0},
        "source": {"tag": "euclidean"},
        "target": {"tag": "euclidean", "lower": -1.0, "upper": 2.0},
        "map": {"kind": "identity"},
        "perturb": 0.05, "free_boundary": False, "p": 2.0,
        "optimizer": {"max_iters": 2000},
    },
    "piola": {"case": "affine_flat", "levels": [16, 32, 64], "nodes": 33, "tol": 1e-12},
    "converge": {"family": "striped", "ns": [5, 10, 20, 40], "eps": 0.1,
                 "sigma": "default", "p": 2.0, "q": 2.0, "nodes": 9, "quad_order": 3},
    "geodesic": {"metric": {"tag": "striped", "n": 10, "eps": 0.1, "sigma": 0.0},
                 "grid": {"lower": 0.0, "upper": 1.0},
                 "a": [0.0, 0.0], "b": [1.0, 1.0], "resolutions": [64, 128, 256]},
}


@dataclass
class RunConfig:
    """Parameters of one command after merging file, defaults and flags."""

    command: str
    label: str
    params: dict
    out: Path
    seed: int = 42
    threads: Optional[int] = None
    dim: int = 2
    extra: dict = field(default_factory=dict)

    def resolved(self) -> dict:
        return {"command": self.command, "label": self.label, "seed": self.seed,
                "dim": self.dim, "params": self.params}


# ---------------------------------------------------------------------------
# config handling


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("map",):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _set_path(d, key, value):
    parts = key.split(".")
    for p in parts[:-1]:
        d = d.setdefault(p, {})
        if not isinstance(d, dict):
            raise ConfigError(f"cannot set {key!r}: {p!r} is not a section")
    d[parts[-1]] = value


def load_config(command, path=None, overrides=()) -> dict:
    """Defaults for ``command`` updated by a JSON file and ``KEY=JSON`` overrides.

    A config file may hold the parameters directly or a section named after
    the command.
    """
    params = copy.deepcopy(DEFAULTS[command])
    if path:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        if isinstance(data.get(command), dict):
            data = data[command]
        params = _merge(params, data)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not KEY=VALUE")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        _set_path(params, key.strip(), value)
    unknown = set(params) - set(DEFAULTS[command]) - {"label", "seed"}
    if unknown:
        raise ConfigError(f"unknown {command} options: {sorted(unknown)}")
    return params


def _as_box(spec, dim, default_nodes=2):
    spec = dict(spec or {})
    lower = spec.get("lower", 0.0)
    upper = spec.get("upper", 1.0)
    nodes = spec.get("nodes", default_nodes)
    try:
        return ChartGrid.box(nodes, lower, upper, dim)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad grid descriptor {spec}: {exc}") from None


def make_metric(spec, grid: ChartGrid):
    """Builtin metric from ``{"tag": ..., params..., "lower"/"upper"/"nodes": chart}``."""
    if not isinstance(spec, dict) or "tag" not in spec:
        raise ConfigError("metric spec needs a 'tag'")
    params = {k: v for k, v in spec.items() if k not in ("tag", "lower", "upper", "nodes")}
    if "sigma" in params and params["sigma"] == "default":
        params["sigma"] = None
    if any(k in spec for k in ("lower", "upper", "nodes")):
        chart = _as_box({"lower": spec.get("lower", grid.lower), "upper": spec.get("upper", grid.upper),
                         "nodes": spec.get("nodes", grid.nodes)}, grid.dim)
    else:
        chart = grid
    return builtin_metric(spec["tag"], chart, **params)


def make_map(spec, grid: ChartGrid) -> DiscreteMap:
    """Initial map from ``{"kind": identity|scale|affine|reflection|smooth|file, ...}``."""
    spec = dict(spec or {"kind": "identity"})
    kind = spec.get("kind", "identity")
    d = grid.dim
    lo, hi = np.array(grid.lower), np.array(grid.upper)
    if kind == "identity":
        return DiscreteMap.identity(grid)
    if kind == "scale":
        s = float(spec.get("s", 2.0))
        return DiscreteMap.from_function(grid, lambda x: s * x)
    if kind == "affine":
        A = np.asarray(spec.get("A", np.eye(d)), dtype=float)
        b = np.asarray(spec.get("b", np.zeros(d)), dtype=float)
        if A.shape != (d, d) or b.shape != (d,):
            raise ConfigError("affine map needs A (d x d) and b (d)")
        return DiscreteMap.from_function(grid, lambda x: x @ A.T + b)
    if kind == "reflection":
        def refl(x):
            y = np.array(x)
            y[:, 0] = lo[0] + hi[0] - y[:, 0]
            return y
        return DiscreteMap.from_function(grid, refl)
    if kind == "smooth":
        amp = float(spec.get("amplitude", 0.1))

        def smooth(x):
            u = np.pi * (x - lo) / (hi - lo)
            y = np.array(x)
            y[:, 0] += amp * np.prod(np.sin(u), axis=-1)
            return y
        return DiscreteMap.from_function(grid, smooth)
    if kind == "file":
        try:
            f = DiscreteMap.from_json(Path(spec["path"]).read_text(encoding="utf-8"))
        except (KeyError, FileNotFoundError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot load map file: {exc}") from None
        if f.source.nodes != grid.nodes:
            raise ConfigError("map file grid does not match the configured grid")
        return f
    raise ConfigError(f"unknown map kind {kind!r}")


# ---------------------------------------------------------------------------
# commands


class Outputs:
    """Collects artifact paths for one run."""

    def __init__(self, rc: RunConfig):
        self.rc = rc
        self.paths = []
        rc.out.mkdir(parents=True, exist_ok=True)

    def path(self, ext, suffix=""):
        p = self.rc.out / f"{self.rc.command}_{self.rc.label}{suffix}.{ext}"
        self.paths.append(p)
        return p

    def json(self, obj, suffix=""):
        doc = dict(obj)
        doc["timestamp"] = reports.timestamp()
        return reports.write_json(self.path("json", suffix), doc)

    def csv(self, header, rows, suffix=""):
        return reports.write_csv(self.path("csv", suffix), header, rows)

    def svg(self, text, suffix=""):
        return reports.write_text(self.path("svg", suffix), text)


def cmd_check_algebra(rc: RunConfig, out: Outputs):
    prm = rc.params
    results = checks.run_all(rc.seed, rc.dim, int(prm["cases"]), int(prm["fd_cases"]),
                             float(prm["rtol"]))
    ok = all(r.passed for r in results)
    out.json({"dim": rc.dim, "seed": rc.seed, "passed": ok,
              "suites": [r.to_dict() for r in results]})
    failed = [r.name for r in results if not r.passed]
    msg = "all passed" if ok else "FAILED: " + ", ".join(failed)
    print(f"check-algebra d={rc.dim}: {len(results)} suites, {prm['cases']} cases each, {msg}")
    return (EXIT_OK if ok else EXIT_FAILED), {"dim": rc.dim}


def _energy_setup(rc: RunConfig):
    prm = rc.params
    grid = _as_box(prm["grid"], rc.dim, 33)
    g = make_metric(prm["source"], grid)
    h = make_metric(prm["target"], grid)
    f = make_map(prm["map"], grid)
    return grid, g, h, f


def cmd_energy(rc: RunConfig, out: Outputs):
    prm = rc.params
    grid, g, h, f = _energy_setup(rc)
    p, order, clamp = float(prm["p"]), int(prm["quad_order"]), bool(prm["clamp"])
    rep = elastic_energy(f, g, h, p, quad_order=order, clamp=clamp)
    defect = metric_defect_energy(f, g, h, p, quad_order=order, clamp=clamp)
    jac = jacobian_functional(f, g, h, quad_order=order, clamp=clamp)
    out.json({"elastic": rep.to_dict(), "metric_defect": defect.to_dict(),
              "jacobian_functional": jac})
    centers = grid.cell_centers().reshape(-1, grid.dim)
    rows = [(k, *centers[k], rep.per_cell[k]) for k in range(grid.n_cells)]
    out.csv(["cell"] + [f"x{i}" for i in range(grid.dim)] + ["density"], rows)
    if grid.dim == 2:
        out.svg(reports.svg_heatmap(rep.per_cell.reshape(grid.cells), f"distortion density ({rc.label})"))
    print(f"energy {rc.label}: E = {rep.energy:.12g} (p={p:g}, defect {defect.energy:.6g}, "
          f"jacobian {jac:.12g})")
    return EXIT_OK, {"grid": list(grid.nodes), "quad_points": rep.meta["quad_points"]}


def cmd_minimize(rc: RunConfig, out: Outputs):
    prm = rc.params
    grid, g, h, f = _energy_setup(rc)
    if prm["free_boundary"]:
        f = DiscreteMap(grid, f.values, np.zeros(grid.nodes, dtype=bool))
    amp = float(prm["perturb"])
    if amp:
        rng = np.random.default_rng(rc.seed)
        vals = np.array(f.values)
        free = f.free_mask()
        vals[free] += amp * rng.uniform(-1.0, 1.0, size=vals[free].shape)
        f = f.with_values(vals)
    ocfg = OptimizerConfig.from_dict(dict(prm["optimizer"], seed=rc.seed))
    fmin, trace = minimize(f, g, h, float(prm["p"]), ocfg)
    out.csv(["iter", "energy", "gradnorm", "step", "clamped"],
            [(k, e, gn, s, c) for k, (e, gn, s, c) in
             enumerate(zip(trace.energy, trace.grad_norm, trace.step, trace.clamped))])
    out.json({"best_found_energy": trace.final_energy, "initial_energy": trace.energy[0],
              "iterations": trace.iterations, "reason": trace.reason,
              "optimizer": ocfg.to_dict(), "map": fmin.to_dict(),
              "note": "best found; no global-minimality claim"})
    print(f"minimize {rc.label}: best found E = {trace.final_energy:.6g} after "
          f"{trace.iterations} iterations ({trace.reason})")
    return EXIT_OK, {"grid": list(grid.nodes)}


def cmd_piola(rc: RunConfig, out: Outputs):
    prm = rc.params
    case = prm["case"]
    if rc.dim != 2:
        raise ConfigError("piola cases are two-dimensional")
    if case not in pc.STANDARD_CASES:
        raise ConfigError(f"unknown piola case {case!r}; known: {pc.STANDARD_CASES}")
    if case == "affine_flat":
        cells = int(prm["nodes"]) - 1
        res = pc.standard_case(case, cells, rc.seed)
        tol = float(prm["tol"])
        ok = abs(res) <= tol
        out.csv(["level", "h", "residual", "order"], [(0, 1.0 / cells, res, float("nan"))])
        out.json({"case": case, "residual": res, "tolerance": tol, "passed": ok})
        print(f"piola {rc.label}: affine flat residual {res:.3e} (< {tol:g}: {ok})")
        return (EXIT_OK if ok else EXIT_FAILED), {"grid": [cells + 1, cells + 1]}
    study = pc.run_refinement(case, list(prm["levels"]), lambda n: pc.standard_case(case, n, rc.seed))
    order = study.order
    out.csv(["level", "h", "residual", "order"], study.rows())
    out.json({"case": case, "cells": study.cells, "h": study.h, "residual": study.residual,
              "fitted_order": order})
    print(f"piola {rc.label}: {case} residual {study.residual[-1]:.3e} at "
          f"{study.cells[-1]} cells, fitted order {order:.3f}")
    return EXIT_OK, {"grid": [[n + 1, n + 1] for n in study.cells]}


def cmd_converge(rc: RunConfig, out: Outputs):
    prm = rc.params
    if prm["family"] != "striped":
        raise ConfigError("only the 'striped' family is built in")
    if rc.dim != 2:
        raise ConfigError("the striped family is two-dimensional")
    metrics, fwd, inv = experiments.striped_sequence(prm["ns"], float(prm["eps"]), prm["sigma"],
                                                     int(prm["nodes"]))
    rep = experiments.pq_convergence_report(metrics, fwd, inv, float(prm["p"]), float(prm["q"]),
                                            quad_order=int(prm["quad_order"]))
    out.csv(list(rep.COLUMNS), rep.rows)
    out.json(rep.to_dict())
    ns = rep.column("n")
    out.svg(reports.svg_loglog({c: (ns, rep.column(c)) for c in rep.COLUMNS[1:]},
                               f"norm decay ({rc.label})", "n", "norm"))
    print(f"converge {rc.label}: forward slope {rep.slopes['forward']:.4f}, "
          f"forward norm {rep.rows[-1][1]:.6g} at n={rep.rows[-1][0]}")
    return EXIT_OK, {"grid": [int(prm["nodes"])] * 2, "ns": list(prm["ns"])}


def cmd_geodesic(rc: RunConfig, out: Outputs):
    prm = rc.params
    if rc.dim != 2:
        raise ConfigError("graph geodesics are two-dimensional")
    chart = _as_box(prm["grid"], 2)
    field_ = make_metric(prm["metric"], chart)
    rows = []
    for res in prm["resolutions"]:
        rows.append((int(res), experiments.graph_geodesic(field_, prm["a"], prm["b"], int(res))))
    out.csv(["resolution", "distance"], rows)
    out.json({"metric": field_.label, "a": prm["a"], "b": prm["b"],
              "rows": [{"resolution": r, "distance": dist} for r, dist in rows]})
    out.svg(reports.svg_loglog({"distance": ([r for r, _ in rows], [x for _, x in rows])},
                               f"geodesic vs resolution ({rc.label})", "resolution", "distance"))
    print(f"geodesic {rc.label}: distance {rows[-1][1]:.6g} at resolution {rows[-1][0]}")
    return EXIT_OK, {"resolutions": [r for r, _ in rows]}


COMMANDS = {
    "check-algebra": cmd_check_algebra,
    "energy": cmd_energy,
    "minimize": cmd_minimize,
    "piola": cmd_piola,
    "converge": cmd_converge,
    "geodesic": cmd_geodesic,
}


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--out", default="rigidlab_out", help="output directory")
    common.add_argument("--seed", type=int, default=None, help="random seed (default 42)")
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: RIGIDLAB_THREADS or CPU count)")
    common.add_argument("--dim", type=int, choices=(2, 3), default=2)
    common.add_argument("--label", default=None, help="artifact label (default from config)")
    common.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=JSON", help="override a config entry (dotted keys)")
    parser = argparse.ArgumentParser(prog="rigidlab", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        params = load_config(args.command, args.config, args.overrides)
        seed = args.seed if args.seed is not None else int(params.pop("seed", 42))
        params.pop("seed", None)
        label = args.label or str(params.pop("label", "d3" if args.dim == 3 else "default"))
        params.pop("label", None)
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        rc = RunConfig(args.command, label, params, Path(args.out), seed, args.threads, args.dim)
        parallel.set_threads(args.threads)
        out = Outputs(rc)
        code, resolutions = COMMANDS[args.command](rc, out)
        man = reports.manifest(rc.command, rc.label, rc.resolved(), resolutions, out.paths,
                               parallel.get_threads(), kernels.BACKEND)
        reports.write_json(rc.out / f"{rc.command}_{rc.label}_manifest.json", man)
        return code
    except (ConfigError, DimensionError) as exc:
        print(f"rigidlab: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DomainError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"rigidlab: numerical domain error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except OSError as exc:
        print(f"rigidlab: cannot write output: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    finally:
        parallel.set_threads(None)


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()

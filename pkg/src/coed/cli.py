"""Command line front end.

``coed run CONFIG``
    Build the candidate space, run the preflight and the configured
    algorithm, and write ``design.csv``, ``sensitivity.csv``,
    ``trace.jsonl``, ``certificate.json`` and ``manifest.json``.
``coed preflight CONFIG``
    Only check the regularity conditions on the configured ``X0``.
``coed export-space CONFIG PATH``
    Write the candidate space as a candidate-table file.

Configurations are JSON files validated against :data:`CONFIG_SCHEMA`.
Exit codes: 0 certified, 1 configuration or input error, 2 iteration limit,
3 preflight failure, 4 solver or model error.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import os
import platform
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from importlib import metadata
from pathlib import Path
from typing import Any, Sequence

import jsonschema
import numpy as np

from .adaptive import (
    AlgoSettings,
    RunTrace,
    SearchSettings,
    kinetics_initial_subset,
    preflight,
    run_general,
    run_special,
    sensitivity_kernel,
)
from .criteria import Constraint, Criterion, Problem, constraint_values
from .errors import CoedError, GridEmpty, MaxIterations, ParseError, PreflightFailed, SchemaError
from .model import (
    CandidateSpace,
    GridAxis,
    ModelConfig,
    build_space,
    exponential_config,
    export_space,
    kinetics_config,
)
from .ode import IntegratorSettings
from .solver import SolverTolerances

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_MAX_ITER = 2
EXIT_PREFLIGHT = 3
EXIT_SOLVER = 4

_axis = {
    "type": "object",
    "additionalProperties": False,
    "required": ["min", "max", "step"],
    "properties": {
        "min": {"type": "number"},
        "max": {"type": "number"},
        "step": {"type": "number", "exclusiveMinimum": 0},
    },
}
_criterion = {"enum": ["D", "A"]}
_positive = {"type": "number", "exclusiveMinimum": 0}

CONFIG_SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version", "model", "x0"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "description": {"type": "string"},
        "model": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["exponential", "kinetics", "tabulated"]},
                "theta_bar": {"type": "array", "items": {"type": "number"}, "minItems": 1},
                "grid": {"type": "object", "additionalProperties": _axis},
                "path": {"type": "string"},
                "ode": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "rtol": _positive,
                        "atol": _positive,
                        "max_step": _positive,
                        "min_step": _positive,
                        "first_step": _positive,
                    },
                },
            },
        },
        "criterion": _criterion,
        "constraints": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["name", "kind"],
                "properties": {
                    "name": {"type": "string", "minLength": 1},
                    "kind": {"enum": ["moment", "integral"]},
                    "relation": {"enum": ["le", "eq"]},
                    "criterion": _criterion,
                    "channel": {"type": "string"},
                    "scale": {"type": "number"},
                    "offset": {"type": "number"},
                    "continuity": {"enum": ["continuous", "lsc"]},
                },
            },
        },
        "algorithm": {"enum": ["special", "general"]},
        "settings": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "epsilon": {"type": "number", "minimum": 0},
                "delta": _positive,
                "max_iterations": {"type": "integer", "minimum": 0},
                "seed": {"type": "integer", "minimum": 0},
                "search": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "mode": {"enum": ["none", "neighbor", "enumerate"]},
                        "radius": {"type": "integer", "minimum": 1},
                        "starts": {"type": "integer", "minimum": 0},
                    },
                },
                "tolerances": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "kkt": _positive,
                        "feas": _positive,
                        "comp": _positive,
                        "weight_floor": {"type": "number", "minimum": 0},
                        "max_iter": {"type": "integer", "minimum": 1},
                    },
                },
            },
        },
        "x0": {
            "oneOf": [
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["points"],
                    "properties": {
                        "points": {
                            "type": "array",
                            "minItems": 1,
                            "items": {"type": "array", "minItems": 1, "items": {"type": "number"}},
                        }
                    },
                },
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["helper"],
                    "properties": {
                        "helper": {"const": "kinetics_constr"},
                        "size": {"type": "integer", "minimum": 1},
                        "time_max": {"type": "number"},
                        "roi_min": {"type": "number"},
                    },
                },
            ]
        },
        "output_dir": {"type": "string"},
    },
}


@dataclass
class RunConfig:
    """A validated configuration with every default filled in."""

    model: ModelConfig
    criterion: Criterion
    constraints: tuple[Constraint, ...]
    algorithm: str
    settings: AlgoSettings
    x0: dict
    output_dir: Path
    raw: dict = field(default_factory=dict)
    source: Path | None = None

    def problem(self, space: CandidateSpace) -> Problem:
        return Problem(space, self.criterion, self.constraints)


def _json_path(parts) -> str:
    return "/" + "/".join(str(p) for p in parts)


def _materialize(doc: dict) -> dict:
    """Return ``doc`` with all defaults made explicit."""
    out = json.loads(json.dumps(doc))
    model = out["model"]
    kind = model["kind"]
    if kind == "exponential":
        base = exponential_config()
    elif kind == "kinetics":
        base = kinetics_config()
    else:
        base = None
    if base is not None:
        model.setdefault("theta_bar", list(base.theta_bar))
        grid = {k: asdict(v) for k, v in base.grid.items()}
        grid.update(model.get("grid", {}))
        model["grid"] = grid
    if kind == "kinetics":
        ode = asdict(IntegratorSettings())
        ode.pop("dense_output")
        ode.update(model.get("ode", {}))
        model["ode"] = ode
    out.setdefault("criterion", "D")
    cons = []
    for c in out.get("constraints", []):
        c = dict(c)
        c.setdefault("relation", "le")
        c.setdefault("scale", 1.0)
        c.setdefault("offset", 0.0)
        c.setdefault("continuity", "continuous")
        cons.append(c)
    out["constraints"] = cons
    out.setdefault("algorithm", "general")
    settings = out.setdefault("settings", {})
    special = out["algorithm"] == "special"
    settings.setdefault("epsilon", 0.0 if special else 1e-3)
    settings.setdefault("delta", 1e-4)
    settings.setdefault("max_iterations", 200)
    settings.setdefault("seed", 0)
    search = settings.setdefault("search", {})
    search.setdefault("mode", "none" if special else "neighbor")
    search.setdefault("radius", 1)
    search.setdefault("starts", 64)
    tol = asdict(SolverTolerances())
    tol.update(settings.get("tolerances", {}))
    settings["tolerances"] = tol
    if "helper" in out["x0"]:
        out["x0"] = {"helper": "kinetics_constr", "size": 20, "time_max": 5.0, "roi_min": 4.0, **out["x0"]}
    out.setdefault("output_dir", "coed_output")
    return out


def parse_config_dict(doc: Any, source: Path | None = None) -> RunConfig:
    """Validate a decoded configuration document.

    Raises
    ------
    SchemaError
        With the JSON path of the offending key.
    """
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise SchemaError(_json_path(err.absolute_path), err.message)
    doc = _materialize(doc)
    st = doc["settings"]
    if doc["algorithm"] == "general" and st["epsilon"] == 0:
        raise SchemaError("/settings/epsilon", "the general algorithm needs epsilon > 0 to terminate")
    if doc["algorithm"] == "special":
        if st["epsilon"] != 0:
            raise SchemaError("/settings/epsilon", "the special algorithm runs with epsilon = 0")
        if st["search"]["mode"] != "none":
            raise SchemaError("/settings/search/mode", "the special algorithm has no violator search")
    elif st["delta"] >= st["epsilon"]:
        raise SchemaError("/settings/delta", "delta must be smaller than epsilon")

    m = doc["model"]
    if m["kind"] == "tabulated" and "path" not in m:
        raise SchemaError("/model/path", "a tabulated model needs a path")
    path = m.get("path")
    if path is not None and source is not None and not Path(path).is_absolute():
        path = str(source.parent / path)
    try:
        ode = IntegratorSettings(**m["ode"]) if "ode" in m else IntegratorSettings()
    except ValueError as exc:
        raise SchemaError("/model/ode", str(exc)) from None
    grid = {k: GridAxis(**v) for k, v in m.get("grid", {}).items()}
    try:
        model = ModelConfig(m["kind"], tuple(m.get("theta_bar", ())), grid, "default", ode, path)
    except ValueError as exc:
        raise SchemaError("/model/theta_bar", str(exc)) from None
    if m["kind"] == "kinetics" and set(grid) != {"t_m", "a0", "b0", "c0", "T"}:
        raise SchemaError("/model/grid", "kinetics grid axes are t_m, a0, b0, c0, T")
    if m["kind"] == "exponential" and set(grid) != {"x"}:
        raise SchemaError("/model/grid", "the exponential grid has the single axis x")

    constraints = []
    for i, c in enumerate(doc["constraints"]):
        try:
            constraints.append(
                Constraint(
                    name=c["name"],
                    kind=c["kind"],
                    relation=c["relation"],
                    criterion=Criterion(c["criterion"]) if "criterion" in c else None,
                    channel=c.get("channel"),
                    scale=float(c["scale"]),
                    offset=float(c["offset"]),
                    continuity=c["continuity"],
                )
            )
        except ValueError as exc:
            raise SchemaError(f"/constraints/{i}", str(exc)) from None
    names = [c.name for c in constraints]
    if len(set(names)) != len(names):
        raise SchemaError("/constraints", "constraint names must be unique")

    try:
        tol = SolverTolerances(**st["tolerances"])
        settings = AlgoSettings(
            epsilon=float(st["epsilon"]),
            delta=float(st["delta"]),
            max_iterations=int(st["max_iterations"]),
            search=SearchSettings(**st["search"]),
            seed=int(st["seed"]),
            tol=tol,
        )
    except ValueError as exc:
        raise SchemaError("/settings", str(exc)) from None
    return RunConfig(
        model=model,
        criterion=Criterion(doc["criterion"]),
        constraints=tuple(constraints),
        algorithm=doc["algorithm"],
        settings=settings,
        x0=doc["x0"],
        output_dir=Path(doc["output_dir"]),
        raw=doc,
        source=source,
    )


def parse_config(path) -> RunConfig:
    """Read and validate a JSON configuration file.

    Raises
    ------
    SchemaError
        Invalid document (``path`` is the JSON path of the offending key).
    OSError
        Unreadable file.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError("/", f"invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return parse_config_dict(doc, path)


def resolve_x0(cfg: RunConfig, space: CandidateSpace) -> np.ndarray:
    """Candidate indices of the configured initial subspace."""
    x0 = cfg.x0
    if "points" in x0:
        out = []
        for i, p in enumerate(x0["points"]):
            if len(p) != space.dim_x:
                raise SchemaError(f"/x0/points/{i}", f"expected {space.dim_x} coordinates")
            try:
                out.append(space.index_of(np.asarray(p, dtype=float)))
            except KeyError:
                raise SchemaError(f"/x0/points/{i}", f"{p} is not a candidate point") from None
        return np.asarray(out, dtype=np.int64)
    if space.kind != "kinetics":
        raise SchemaError("/x0/helper", "the kinetics_constr helper needs a kinetics model")
    return kinetics_initial_subset(space, size=x0["size"], time_max=x0["time_max"], roi_min=x0["roi_min"])


def default_threads() -> int:
    env = os.environ.get("COED_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            n = 0
        if n >= 1:
            return n
        log.warning("ignoring invalid COED_THREADS=%r", env)
    return os.cpu_count() or 1


# ---------------------------------------------------------------------------
# output writers


def _g(v: float) -> str:
    return f"{float(v):.17g}"


def write_design(path: Path, space: CandidateSpace, design) -> None:
    # a channel that repeats a coordinate column is written once
    names = [n for n in space.scalars if n not in space.coord_names]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*space.coord_names, "weight", *names])
        for j, wj in zip(design.indices, design.weights):
            w.writerow([*(_g(c) for c in space.coords[j]), _g(wj), *(_g(space.scalars[n][j]) for n in names)])


def write_sensitivity(path: Path, space: CandidateSpace, kernel, chunk: int = 1 << 16) -> float:
    """Write ``psi_L`` over the whole space; returns its minimum."""
    lowest = np.inf
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join([*space.coord_names, "psi_L"]) + "\n")
        for lo in range(0, len(space), chunk):
            hi = min(lo + chunk, len(space))
            vals = kernel.evaluate(lo, hi)
            lowest = min(lowest, float(vals.min()))
            table = np.column_stack([space.coords[lo:hi], vals])
            np.savetxt(fh, table, fmt="%.17g", delimiter=",")
    return lowest


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


# ---------------------------------------------------------------------------
# commands


def _build(cfg: RunConfig, threads: int):
    t = time.perf_counter()
    space = build_space(cfg.model, threads=threads)
    log.info("candidate space: %d points (%.2f s)", len(space), time.perf_counter() - t)
    problem = cfg.problem(space)
    return space, problem


def cmd_run(cfg: RunConfig, threads: int, output: Path | None) -> int:
    out = output or cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    started = _dt.datetime.now(_dt.timezone.utc)
    t0 = time.perf_counter()
    space, problem = _build(cfg, threads)
    X0 = resolve_x0(cfg, space)
    settings = replace(cfg.settings, threads=threads)
    runner = run_special if cfg.algorithm == "special" else run_general
    with open(out / "trace.jsonl", "w", encoding="utf-8") as sink:
        result = runner(space, problem, X0, settings, RunTrace(sink))
    design, lam, cert = result.design, result.lam, result.certificate

    write_design(out / "design.csv", space, design)
    kernel = sensitivity_kernel(problem, design, lam)
    write_sensitivity(out / "sensitivity.csv", space, kernel)
    vals = constraint_values(problem, design)
    _dump_json(
        out / "certificate.json",
        {
            "status": result.status,
            "iterations": result.iterations,
            "criterion": cert.criterion,
            "epsilon": settings.epsilon,
            "epsilon_star": cert.epsilon_star,
            "argmin_index": cert.argmin_index,
            "argmin_point": [float(c) for c in space.coords[cert.argmin_index]],
            "constraint_values": {c.name: float(v) for c, v in zip(problem.constraints, vals)},
            "multipliers": {c.name: float(v) for c, v in zip(problem.constraints, lam)},
            "support_bound": cert.support_bound,
            "support_actual": cert.support_actual,
            "subspace_size": cert.subspace_size,
            "weight_sum": float(design.weights.sum()),
            "warnings": list(result.trace.warnings),
        },
    )
    _dump_json(
        out / "manifest.json",
        {
            "config": cfg.raw,
            "config_path": None if cfg.source is None else str(cfg.source),
            "package_version": _version(),
            "python": platform.python_version(),
            "numpy": np.__version__,
            "platform": platform.platform(),
            "threads": threads,
            "candidates": len(space),
            "x0_indices": [int(i) for i in X0],
            "started": started.isoformat(),
            "elapsed_seconds": time.perf_counter() - t0,
        },
    )
    print(
        f"{result.status}: criterion {cert.criterion:.6f}, epsilon* {cert.epsilon_star:.3e}, "
        f"{cert.support_actual} support points, {result.iterations} iterations -> {out}"
    )
    return EXIT_OK if result.certified else EXIT_MAX_ITER


def cmd_preflight(cfg: RunConfig, threads: int) -> int:
    space, problem = _build(cfg, threads)
    X0 = resolve_x0(cfg, space)
    report = preflight(space, problem, X0, cfg.settings.tol)
    print(
        json.dumps(
            {
                "status": "passed",
                "x0_size": int(len(X0)),
                "eta0_support": [[float(c) for c in space.coords[j]] for j in report.eta0.indices],
                "eta0_weights": [float(w) for w in report.eta0.weights],
                "reach": report.reach,
                "support_bound": report.support_bound,
            },
            indent=2,
        )
    )
    return EXIT_OK


def cmd_export(cfg: RunConfig, path: Path, threads: int) -> int:
    space = build_space(cfg.model, threads=threads)
    export_space(space, path)
    print(f"wrote {len(space)} candidates to {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coed", description="Constrained optimal experimental design by adaptive discretization.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="increase log verbosity")
    sub = parser.add_subparsers(dest="command", required=True)

    def threads_arg(p):
        p.add_argument("--threads", type=int, default=None, help="worker threads (default: $COED_THREADS or CPU count)")

    p = sub.add_parser("run", help="run the configured algorithm")
    p.add_argument("config", type=Path)
    p.add_argument("--output", type=Path, default=None, help="output directory (overrides output_dir)")
    threads_arg(p)
    p = sub.add_parser("preflight", help="check the regularity conditions on X0")
    p.add_argument("config", type=Path)
    threads_arg(p)
    p = sub.add_parser("export-space", help="write the candidate space as a table")
    p.add_argument("config", type=Path)
    p.add_argument("path", type=Path)
    threads_arg(p)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = [logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    threads = args.threads if args.threads is not None else default_threads()
    if threads < 1:
        print("error: --threads must be positive", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = parse_config(args.config)
        if args.command == "run":
            return cmd_run(cfg, threads, args.output)
        if args.command == "preflight":
            return cmd_preflight(cfg, threads)
        return cmd_export(cfg, args.path, threads)
    except (SchemaError, ParseError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PreflightFailed as exc:
        print(f"preflight failed: {exc}", file=sys.stderr)
        return EXIT_PREFLIGHT
    except MaxIterations as exc:
        print(f"iteration limit: {exc}", file=sys.stderr)
        return EXIT_MAX_ITER
    except GridEmpty as exc:
        print(f"empty candidate grid: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except CoedError as exc:
        print(f"solver error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

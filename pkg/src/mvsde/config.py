"""Strict JSON experiment configuration and run manifests.

Schema (every section except ``model`` and ``grid`` is optional)::

    {
      "model":      {"name": "meanfield-ou", "dim": 1, "params": {"a": 1.0}},
      "grid":       {"h": 0.01, "r": 0.25, "T": 1.0},
      "solver":     {"particles": 10000, "seed": 42, "mode": "interacting",
                     "sweeps": 3, "mollification": [4, 16, 64], "theta": 2.0,
                     "law_support": "endpoint", "threads": 1,
                     "quadrature_nodes": 8, "distance_atoms": 512},
      "initial":    {"kind": "point", "value": [0.0], "slope": [0.0], "std": 0.0},
      "experiment": {...}
    }

``experiment`` keys are listed in :data:`EXPERIMENT_KEYS`. Unknown keys at
any level are errors, and validation reports every problem it finds.
"""

from __future__ import annotations

import copy
import datetime as _dt
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from . import __version__
from .coeffs import CoefficientSet, pair_in_K
from .errors import ConfigError, MVSDEError
from .functionals import SegmentFunctional, SpaceTimeFunction
from .girsanov import Shift
from .segment import TimeGrid
from .solver import InitialLaw, SolverConfig
from .zoo import MODEL_NAMES, model_params, model_zoo

SUBCOMMANDS = (
    "simulate",
    "picard",
    "harnack-log",
    "harnack-shift",
    "harnack-power",
    "gradient",
    "krylov-check",
    "khasminskii-check",
    "wasserstein",
)

SECTION_KEYS = {
    "model": {"name", "dim", "params"},
    "grid": {"h", "r", "T"},
    "solver": {
        "particles",
        "seed",
        "mode",
        "sweeps",
        "mollification",
        "theta",
        "law_support",
        "threads",
        "quadrature_nodes",
        "distance_atoms",
    },
    "initial": {"kind", "value", "slope", "std"},
}

EXPERIMENT_KEYS = {
    "t",
    "f",
    "other_initial",
    "constant",
    "p",
    "p_floor",
    "ball_samples",
    "shift",
    "flow_particles",
    "integrand",
    "pq",
    "pairs",
    "lambdas",
    "laws",
    "method",
    "theta",
    "trajectories",
}

DEFAULTS = {"particles": 10_000, "seed": 42, "theta": 2.0}
MANIFEST_NAME = "manifest.json"


@dataclass(frozen=True, eq=False)
class ParsedConfig:
    """A fully validated configuration."""

    raw: dict
    coeffs: CoefficientSet
    solver: SolverConfig
    initial: InitialLaw
    experiment: dict
    subcommand: str | None = None
    base_dir: Path = field(default_factory=Path.cwd)

    def functional(self, default: dict) -> SegmentFunctional:
        return SegmentFunctional.from_dict(self.experiment.get("f", default))

    def other_initial(self) -> InitialLaw:
        spec = self.experiment.get("other_initial")
        return _initial(spec, self.coeffs.dim) if spec is not None else self.initial

    def shift(self) -> Shift:
        spec = self.experiment.get("shift", {"offset": [0.0] * self.coeffs.dim})
        if "table" in spec:
            return Shift.table(self.solver.grid.r, spec["table"])
        return Shift.affine(spec.get("offset", [0.0] * self.coeffs.dim), spec.get("slope", [0.0] * self.coeffs.dim))

    @property
    def t(self) -> float:
        return float(self.experiment.get("t", self.solver.grid.T))


def _initial(spec: dict | None, dim: int) -> InitialLaw:
    spec = dict(spec or {})
    kind = spec.get("kind", "point")
    value = spec.get("value", [0.0] * dim)
    if kind == "gaussian":
        return InitialLaw.gaussian(value, float(spec.get("std", 0.0)))
    return InitialLaw("point", value, spec.get("slope", [0.0] * dim), float(spec.get("std", 0.0)))


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _check_keys(section: str, data: Any, allowed: set, problems: list[str]) -> dict:
    if data is None:
        return {}
    if not isinstance(data, dict):
        problems.append(f"{section}: expected an object")
        return {}
    for key in sorted(set(data) - allowed):
        problems.append(f"{section}: unknown key {key!r}")
    return data


def _grid_problems(g: dict, problems: list[str]) -> None:
    for key in ("h", "r", "T"):
        if key not in g:
            problems.append(f"grid: missing {key!r}")
        elif not _is_number(g[key]):
            problems.append(f"grid: {key} must be a finite number")
    if not all(_is_number(g.get(k)) for k in ("h", "r", "T")):
        return
    h, r, T = float(g["h"]), float(g["r"]), float(g["T"])
    if h <= 0:
        problems.append(f"grid: h must be positive, got {h!r}")
        return
    if r < 0 or T <= 0:
        problems.append(f"grid: need r >= 0 and T > 0, got r={r!r}, T={T!r}")
    for name, val in (("r", r), ("T", T)):
        ratio = val / h
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, abs(ratio)):
            problems.append(f"grid: {name}={val!r} is not an integer multiple of h={h!r}")


def load_json(path: str | Path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError([f"{path}: file not found"]) from None
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{path}: invalid JSON ({exc})"]) from None


def parse_config(path: str | Path, subcommand: str | None = None, seed: int | None = None, threads: int | None = None) -> ParsedConfig:
    """Read, validate and assemble a configuration file (or a run manifest)."""
    data = load_json(path)
    if isinstance(data, dict) and "manifest_hash" in data and "config" in data:
        subcommand = subcommand or data.get("subcommand")
        data = data["config"]
    return build_config(data, subcommand, seed, threads, Path(path).resolve().parent)


def build_config(
    data: Any,
    subcommand: str | None = None,
    seed: int | None = None,
    threads: int | None = None,
    base_dir: Path | None = None,
) -> ParsedConfig:
    problems: list[str] = []
    if not isinstance(data, dict):
        raise ConfigError(["top level: expected an object"])
    data = copy.deepcopy(data)
    for key in sorted(set(data) - (set(SECTION_KEYS) | {"experiment"})):
        problems.append(f"top level: unknown key {key!r}")
    if subcommand is not None and subcommand not in SUBCOMMANDS:
        problems.append(f"unknown subcommand {subcommand!r}")

    model = _check_keys("model", data.get("model"), SECTION_KEYS["model"], problems)
    grid = _check_keys("grid", data.get("grid"), SECTION_KEYS["grid"], problems)
    solver = _check_keys("solver", data.get("solver"), SECTION_KEYS["solver"], problems)
    initial = _check_keys("initial", data.get("initial"), SECTION_KEYS["initial"], problems)
    experiment = _check_keys("experiment", data.get("experiment"), EXPERIMENT_KEYS, problems)

    name = model.get("name")
    dim = model.get("dim", 1)
    if "model" not in data:
        problems.append("model: section is required")
    elif name not in MODEL_NAMES:
        problems.append(f"model: name must be one of {', '.join(MODEL_NAMES)}, got {name!r}")
    if not (isinstance(dim, int) and not isinstance(dim, bool) and dim >= 1):
        problems.append(f"model: dim must be a positive integer, got {dim!r}")
        dim = 1
    if name in MODEL_NAMES:
        for key in sorted(set(model.get("params", {}) or {}) - set(model_params(name))):
            problems.append(f"model.params: {name} has no parameter {key!r}")

    if "grid" not in data:
        problems.append("grid: section is required")
    else:
        _grid_problems(grid, problems)

    if seed is not None:
        solver["seed"] = int(seed)
    solver.setdefault("particles", DEFAULTS["particles"])
    solver.setdefault("seed", DEFAULTS["seed"])
    solver.setdefault("theta", DEFAULTS["theta"])
    for key in ("particles", "sweeps", "quadrature_nodes", "distance_atoms"):
        if key in solver and not (isinstance(solver[key], int) and not isinstance(solver[key], bool) and solver[key] >= 1):
            problems.append(f"solver: {key} must be a positive integer, got {solver[key]!r}")
    if not (isinstance(solver["seed"], int) and 0 <= solver["seed"] < 2**64):
        problems.append(f"solver: seed must be a 64-bit unsigned integer, got {solver['seed']!r}")
    if not (_is_number(solver["theta"]) and solver["theta"] >= 1):
        problems.append(f"solver: theta must be >= 1, got {solver['theta']!r}")
    if threads is not None:
        solver["threads"] = int(threads)

    if experiment.get("t") is not None and grid and all(_is_number(grid.get(k)) for k in ("h", "r", "T")):
        t = experiment["t"]
        if not _is_number(t) or t <= grid["r"] or t > grid["T"] + 1e-12:
            problems.append(f"experiment: t={t!r} must lie in (r, T] = ({grid['r']!r}, {grid['T']!r}]")

    if subcommand == "krylov-check":
        pq = experiment.get("pq", [4.0, 4.0])
        if not (isinstance(pq, list) and len(pq) == 2 and all(_is_number(v) and v > 1 for v in pq)):
            problems.append(f"experiment: pq must be two numbers > 1, got {pq!r}")
        elif not pair_in_K(pq[0], pq[1], dim)[0]:
            problems.append(
                f"experiment: (p, q) = ({pq[0]}, {pq[1]}) fails d/p + 2/q < 2 in dimension {dim} "
                f"({dim}/{pq[0]} + 2/{pq[1]} = {dim / pq[0] + 2 / pq[1]:.6g})"
            )
    if subcommand == "wasserstein":
        laws = experiment.get("laws")
        if not (isinstance(laws, list) and len(laws) == 2 and all(isinstance(v, str) for v in laws)):
            problems.append("experiment: wasserstein needs 'laws': [path_a, path_b]")

    parsed = None
    if not problems:
        try:
            g = TimeGrid(float(grid["h"]), float(grid["r"]), float(grid["T"]))
            coeffs = model_zoo(name, dim, model.get("params"))
            sc = {k: v for k, v in solver.items()}
            if "mollification" in sc and sc["mollification"] is not None:
                sc["mollification"] = tuple(sc["mollification"])
            cfg = SolverConfig(grid=g, **sc)
            init = _initial(initial, dim)
            for key in ("f",):
                if key in experiment:
                    SegmentFunctional.from_dict(experiment[key])
            if "integrand" in experiment:
                SpaceTimeFunction.from_dict(experiment["integrand"])
            if "other_initial" in experiment:
                _initial(experiment["other_initial"], dim)
            canonical = {
                "model": {"name": name, "dim": dim, "params": dict(model.get("params") or {})},
                "grid": {"h": g.h, "r": g.r, "T": g.T},
                "solver": {k: v for k, v in solver.items()},
                "initial": dict(initial),
                "experiment": dict(experiment),
            }
            parsed = ParsedConfig(canonical, coeffs, cfg, init, dict(experiment), subcommand, base_dir or Path.cwd())
            if "shift" in experiment:
                parsed.shift()
        except (MVSDEError, TypeError, ValueError) as exc:
            problems.append(str(exc))
    if problems:
        raise ConfigError(problems)
    return parsed


# ---------------------------------------------------------------------------
# manifests


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _hashable(config: dict) -> dict:
    out = copy.deepcopy(config)
    out.get("solver", {}).pop("threads", None)
    return out


def config_hash(subcommand: str, config: dict, version: str = __version__) -> str:
    """sha256 over the canonical config (thread count excluded), subcommand and version."""
    payload = {"subcommand": subcommand, "config": _hashable(config), "version": version}
    return hashlib.sha256(canonical_json(payload).encode()).hexdigest()


@dataclass(frozen=True)
class RunManifest:
    subcommand: str
    config: dict
    seed: int
    version: str
    manifest_hash: str
    created: str
    out_dir: str

    @classmethod
    def create(cls, subcommand: str, parsed: ParsedConfig, out_dir: str | Path) -> "RunManifest":
        cfg = _hashable(parsed.raw)
        return cls(
            subcommand,
            cfg,
            int(parsed.solver.seed),
            __version__,
            config_hash(subcommand, cfg),
            _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
            str(out_dir),
        )

    def to_dict(self) -> dict:
        return {
            "subcommand": self.subcommand,
            "config": self.config,
            "seed": self.seed,
            "version": self.version,
            "manifest_hash": self.manifest_hash,
            "created": self.created,
            "out_dir": self.out_dir,
        }

    def write(self, directory: str | Path) -> Path:
        path = Path(directory) / MANIFEST_NAME
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path


def validate_manifest(path: str | Path) -> bool:
    """Whether a manifest's stored hash matches its own content."""
    data = load_json(path)
    try:
        return config_hash(data["subcommand"], data["config"], data["version"]) == data["manifest_hash"]
    except (KeyError, TypeError):
        return False

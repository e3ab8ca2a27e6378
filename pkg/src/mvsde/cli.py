"""Command-line entry point: ``mvsde <subcommand> --config PATH``.

Exit codes: 0 when a simulation succeeds or every verdict holds (possibly
within CI), 2 when some verdict is ``violated``, 1 on any error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path
from typing import Iterable

import numpy as np

from .config import SUBCOMMANDS, ParsedConfig, RunManifest, parse_config
from .errors import ConfigError, MVSDEError
from .functionals import SpaceTimeFunction
from .measure import read_law_csv, wasserstein_theta, write_law_csv
from .segment import write_trajectory_csv
from .solver import run_interacting, run_picard
from .stats import estimate_mean
from .verify import (
    VIOLATED,
    khasminskii_check,
    krylov_check,
    verify_gradient_estimate,
    verify_log_harnack,
    verify_power_harnack,
    verify_shift_harnack,
)

RESULT_COLUMNS = ("inequality", "lhs", "lhs_ci", "rhs", "rhs_ci", "margin", "implied_constant", "verdict", "manifest_hash")

_DEFAULT_F = {
    "harnack-log": {"shape": "tanh2", "offset": 1.0},
    "gradient": {"shape": "tanh"},
    "harnack-power": {"shape": "tanh2", "offset": 1.0},
    "harnack-shift": {"shape": "tanh2", "offset": 1.0},
}


def fmt(value) -> str:
    """Twelve significant digits; empty for missing values."""
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    v = float(value)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.12g}"


def append_results(path: Path, rows: Iterable[dict], manifest_hash: str) -> None:
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(RESULT_COLUMNS)
        for row in rows:
            row = dict(row, manifest_hash=manifest_hash)
            w.writerow([fmt(row.get(c)) for c in RESULT_COLUMNS])


def _json_default(obj):
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _finite(obj):
    # JSON has no inf/nan; emit them as strings
    if isinstance(obj, float) and not math.isfinite(obj):
        return fmt(obj)
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def write_json(path: Path, payload) -> None:
    text = json.dumps(json.loads(json.dumps(payload, default=_json_default)), sort_keys=True)
    data = _finite(json.loads(text))
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# subcommands


def _simulate(p: ParsedConfig, out: Path) -> tuple[list[dict], dict]:
    if p.solver.mode == "picard":
        return _picard(p, out)
    ens, flow = run_interacting(p.coeffs, p.solver.with_(mode="interacting", record="full"), p.initial)
    count = min(int(p.experiment.get("trajectories", 10)), ens.size)
    tdir = out / "trajectories"
    tdir.mkdir(exist_ok=True)
    for i in range(count):
        write_trajectory_csv(tdir / f"particle_{i:06d}.csv", ens.trajectory(i))
    write_law_csv(out / "terminal_law.csv", flow[len(flow) - 1])
    means = flow.means()
    end = ens.endpoints
    est = [estimate_mean(end[:, j]) for j in range(ens.dim)]
    var = [estimate_mean((end[:, j] - end[:, j].mean()) ** 2) for j in range(ens.dim)]
    summary = {
        "particles": ens.size,
        "terminal_mean": [e.value for e in est],
        "terminal_mean_ci": [e.ci for e in est],
        "terminal_variance": [v.value for v in var],
        "terminal_variance_ci": [v.ci for v in var],
        "mean_path": means.tolist(),
    }
    write_json(out / "summary.json", summary)
    rows = [
        {"inequality": f"terminal-mean-{j + 1}", "lhs": e.value, "lhs_ci": e.ci, "verdict": "ok"} for j, e in enumerate(est)
    ]
    return rows, summary


def _picard(p: ParsedConfig, out: Path) -> tuple[list[dict], dict]:
    res = run_picard(p.coeffs, p.solver, p.initial)
    with open(out / "sweep_distances.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["from_sweep", "to_sweep", "to_level", "sup_distance"])
        for k, d in enumerate(res.sup_distances):
            w.writerow([k, k + 1, res.levels[k + 1], fmt(d)])
    end = res.ensemble.endpoints
    est = estimate_mean(end[:, 0])
    summary = {
        "levels": list(res.levels),
        "sup_distances": res.sup_distances.tolist(),
        "terminal_mean": est.value,
        "terminal_mean_ci": est.ci,
        "notes": list(res.notes),
    }
    write_json(out / "summary.json", summary)
    rows = [
        {"inequality": f"picard-distance-{k}-{k + 1}", "lhs": d, "verdict": "ok"} for k, d in enumerate(res.sup_distances)
    ]
    rows.append({"inequality": "picard-terminal-mean", "lhs": est.value, "lhs_ci": est.ci, "verdict": "ok"})
    return rows, summary


def _reports_out(reports, out: Path) -> tuple[list[dict], dict]:
    payload = {r.row()["inequality"]: r.to_dict() for r in reports}
    write_json(out / "report.json", payload)
    return [r.row() for r in reports], payload


def _harnack(p: ParsedConfig, out: Path, name: str):
    f = p.functional(_DEFAULT_F[name])
    ex = p.experiment
    const = float(ex.get("constant", 1.0))
    if name == "harnack-log":
        rep = verify_log_harnack(p.coeffs, p.initial, p.other_initial(), p.t, f, p.solver, const)
    elif name == "gradient":
        rep = verify_gradient_estimate(p.coeffs, p.initial, p.other_initial(), p.t, f, p.solver, const, int(ex.get("ball_samples", 8)))
    else:
        rep = verify_power_harnack(
            p.coeffs, p.initial, p.other_initial(), p.t, f, float(ex.get("p", 3.0)), p.solver, const, float(ex.get("p_floor", 2.0))
        )
    return _reports_out([rep], out)


def _shift(p: ParsedConfig, out: Path):
    f = p.functional(_DEFAULT_F["harnack-shift"])
    ex = p.experiment
    reps = verify_shift_harnack(
        p.coeffs,
        p.initial,
        p.t,
        p.shift(),
        f,
        float(ex.get("p", 2.0)),
        p.solver,
        float(ex.get("constant", 2.0)),
        int(ex.get("flow_particles", 10_000)),
    )
    return _reports_out([reps.log_form, reps.power_form], out)


def _integrand(p: ParsedConfig) -> SpaceTimeFunction:
    return SpaceTimeFunction.from_dict(p.experiment.get("integrand", {"kind": "constant", "value": 1.0}))


def _pairs(p: ParsedConfig):
    pairs = p.experiment.get("pairs")
    return None if pairs is None else [tuple(map(float, x)) for x in pairs]


def _krylov(p: ParsedConfig, out: Path):
    pq = p.experiment.get("pq", [4.0, 4.0])
    rep = krylov_check(p.coeffs, _integrand(p), float(pq[0]), float(pq[1]), p.solver, _pairs(p), p.initial)
    return _reports_out([rep], out)


def _khasminskii(p: ParsedConfig, out: Path):
    lambdas = p.experiment.get("lambdas", [1.0, 2.0, 4.0])
    rep = khasminskii_check(p.coeffs, _integrand(p), lambdas, p.solver, p.initial, _pairs(p))
    return _reports_out([rep], out)


def _wasserstein(p: ParsedConfig, out: Path):
    ex = p.experiment
    theta = float(ex.get("theta", p.solver.theta))
    paths = [(p.base_dir / v) if not Path(v).is_absolute() else Path(v) for v in ex["laws"]]
    mu, nu = (read_law_csv(x, theta) for x in paths)
    value = wasserstein_theta(mu, nu, theta, ex.get("method", "exact"))
    print(fmt(value))
    payload = {"value": value, "theta": theta, "method": ex.get("method", "exact"), "laws": [str(x) for x in paths]}
    write_json(out / "report.json", payload)
    return [{"inequality": "wasserstein", "lhs": value, "verdict": "ok"}], payload


HANDLERS = {
    "simulate": _simulate,
    "picard": _picard,
    "harnack-log": lambda p, o: _harnack(p, o, "harnack-log"),
    "gradient": lambda p, o: _harnack(p, o, "gradient"),
    "harnack-power": lambda p, o: _harnack(p, o, "harnack-power"),
    "harnack-shift": _shift,
    "krylov-check": _krylov,
    "khasminskii-check": _khasminskii,
    "wasserstein": _wasserstein,
}


def run_subcommand(name: str, parsed: ParsedConfig, out_dir: str | Path | None = None) -> int:
    """Run one subcommand, write its artifacts and return the exit code."""
    if name not in HANDLERS:
        raise ConfigError([f"unknown subcommand {name!r}"])
    manifest = RunManifest.create(name, parsed, "")
    out = Path(out_dir) if out_dir is not None else Path("runs") / f"{name}-{manifest.manifest_hash[:12]}"
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(name, manifest.config, manifest.seed, manifest.version, manifest.manifest_hash, manifest.created, str(out))
    manifest.write(out)
    rows, _ = HANDLERS[name](parsed, out)
    append_results(out / "results.csv", rows, manifest.manifest_hash)
    for row in rows:
        if row.get("verdict") not in (None, "ok"):
            print(f"{row['inequality']}: {row['verdict']} (margin {fmt(row.get('margin'))})")
    return 2 if any(row.get("verdict") == VIOLATED for row in rows) else 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mvsde", description="Particle simulation and Monte Carlo inequality checks.")
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", required=True, help="JSON config or a run manifest")
    ap.add_argument("--seed", type=int, default=None, help="override solver.seed")
    ap.add_argument("--out", default=None, help="output directory")
    ap.add_argument("--threads", type=int, default=None, help="worker threads (falls back to MVSDE_THREADS)")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        parsed = parse_config(args.config, args.subcommand, args.seed, args.threads)
        return run_subcommand(args.subcommand, parsed, args.out)
    except ConfigError as exc:
        print(f"mvsde: {exc}", file=sys.stderr)
        return 1
    except (MVSDEError, OSError, ValueError) as exc:
        print(f"mvsde: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

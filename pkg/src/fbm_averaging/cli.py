"""Command-line entry point: ``fbm-averaging {generate,experiment,verify}``.

Exit codes: 0 success, 1 runtime or statistical failure, 2 usage error.
Every subcommand writes ``manifest.json`` next to its outputs with keys
``version, seed, config, outputs, divergent_count, wall_ms``. Floats in
CSV and JSON use ``repr`` so re-parsing reproduces them exactly.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import checks
from . import experiments as ex
from .fgn import TimeGrid, as_hurst, generate_ensemble

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

# key -> accepted python types for experiment config files
CONFIG_TYPES = {
    "preset": (str,),
    "case": (str,),
    "x0": (int, float),
    "lambda": (int, float),
    "hurst": (int, float),
    "epsilons": (list, int, float),
    "t_end": (int, float),
    "n_steps": (int,),
    "replicates": (int,),
    "seed": (int,),
    "kind": (str,),
    "delta": (int, float),
    "diffusion_mode": (str,),
    "method": (str,),
    "window": (int, float),
    "keep_trajectories": (int,),
}


class UsageError(Exception):
    """Bad flags or config; mapped to exit code 2."""


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path: Path, header: list, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _json_default(v):
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    return str(v)


def _write_manifest(out: Path, seed, config: dict, outputs: list, divergent: int, t0: float) -> Path:
    path = out / "manifest.json"
    manifest = {
        "version": __version__,
        "seed": seed,
        "config": config,
        "outputs": sorted(outputs + ["manifest.json"]),
        "divergent_count": divergent,
        "wall_ms": round((time.perf_counter() - t0) * 1000.0, 3),
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def cmd_generate(args) -> int:
    t0 = time.perf_counter()
    try:
        h = as_hurst(args.hurst)
        grid = TimeGrid(args.t_end, args.steps)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.paths < 1:
        raise UsageError("--paths must be at least 1")
    try:
        paths = generate_ensemble(grid, h, args.paths, args.seed, args.method)
    except Exception as exc:  # noqa: BLE001
        print(f"error: generation failed: {exc}", file=sys.stderr)
        return EXIT_FAIL
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t = grid.nodes
    rows = ((p, t[i], paths.values[p, i]) for p in range(args.paths) for i in range(grid.n_steps + 1))
    _write_csv(out / "paths.csv", ["path_id", "t", "value"], rows)
    config = {"hurst": h.h, "steps": args.steps, "t_end": args.t_end, "paths": args.paths,
              "method": args.method}
    _write_manifest(out, args.seed, config, ["paths.csv"], 0, t0)
    return EXIT_OK


def load_config(path: str) -> dict:
    """Read and validate a flat JSON experiment config; raise :class:`UsageError` listing bad keys."""
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise UsageError("config must be a JSON object")
    problems = []
    unknown = sorted(set(raw) - set(CONFIG_TYPES))
    if unknown:
        problems.append(f"unknown key(s): {', '.join(unknown)}")
    for key, value in raw.items():
        types = CONFIG_TYPES.get(key)
        if types is None:
            continue
        if isinstance(value, bool) or not isinstance(value, types):
            problems.append(f"{key}: expected {'/'.join(t.__name__ for t in types)}, got {type(value).__name__}")
        elif key == "epsilons" and isinstance(value, list) and not all(
            isinstance(e, (int, float)) and not isinstance(e, bool) for e in value
        ):
            problems.append("epsilons: expected a list of numbers")
    for key in ("preset", "case"):
        if key not in raw:
            problems.append(f"missing key: {key}")
    if problems:
        raise UsageError("invalid config: " + "; ".join(problems))
    return raw


def _experiment_config(args) -> ex.ExperimentConfig:
    if args.config:
        settings = load_config(args.config)
    elif args.preset:
        settings = {"preset": args.preset, "case": args.case}
    else:
        raise UsageError("one of --config or --preset is required")
    for key in ("epsilons", "replicates", "seed", "kind"):
        value = getattr(args, key)
        if value is not None:
            settings[key] = value
    preset = settings.pop("preset")
    case = settings.pop("case")
    if preset not in ex.PRESETS:
        raise UsageError(f"invalid config: preset: expected one of {sorted(ex.PRESETS)}, got {preset!r}")
    try:
        return ex.PRESETS[preset](case, **settings)
    except ValueError as exc:
        raise UsageError(f"invalid config: {exc}") from None


def cmd_experiment(args) -> int:
    t0 = time.perf_counter()
    config = _experiment_config(args)
    if args.workers < 1:
        raise UsageError("--workers must be at least 1")
    try:
        sweep = ex.epsilon_sweep(config, workers=args.workers)
    except ex.DivergenceBudgetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    first = sweep.ensembles[0]
    t = config.grid.nodes
    # first state component; the presets are scalar
    traj_rows = (
        (r, t[i], first.x_trajectories[r, i, 0], first.z_trajectories[r, i, 0])
        for r in range(first.x_trajectories.shape[0])
        for i in range(t.size)
    )
    _write_csv(out / "trajectories.csv", ["replicate", "t", "x", "z"], traj_rows)
    _write_csv(out / "mse.csv", ["t", "mse", "ci_lo", "ci_hi"],
               zip(t, first.mse, first.mse_ci_lo, first.mse_ci_hi))
    _write_csv(
        out / "sweep.csv",
        ["epsilon", "sup_mse", "mse_ci_lo", "mse_ci_hi", "exceedance", "exc_ci_lo", "exc_ci_hi"],
        ((r.epsilon, r.sup_mse, r.mse_ci_lo, r.mse_ci_hi, r.exceedance, r.exc_ci_lo, r.exc_ci_hi)
         for r in sweep.rows),
    )
    echo = dict(config.echo)
    echo["csv_epsilon"] = first.epsilon
    echo["diagnostics"] = sweep.diagnostics
    echo["averaged_provenance"] = config.averaged.provenance
    echo["paper_value"] = config.averaged.paper_value
    echo["metadata"] = {k: v if not isinstance(v, dict) else {repr(a): b for a, b in v.items()}
                        for k, v in config.metadata.items()}
    _write_manifest(out, config.master_seed, echo, ["trajectories.csv", "mse.csv", "sweep.csv"],
                    sweep.divergent_count, t0)
    return EXIT_OK


def cmd_verify(args) -> int:
    t0 = time.perf_counter()
    if args.suite not in checks.SUITES:
        raise UsageError(f"unknown suite {args.suite!r}; expected one of {list(checks.SUITES)}")
    results = checks.run_suite(args.suite, args.budget)
    passed = all(r.passed for r in results)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = {"suite": args.suite, "budget": args.budget, "passed": passed,
              "checks": [r.to_dict() for r in results]}
    (out / "report.json").write_text(json.dumps(report, indent=2, default=_json_default) + "\n")
    failed = sum(not r.passed for r in results)
    _write_manifest(out, None, {"suite": args.suite, "budget": args.budget}, ["report.json"], 0, t0)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}")
    if not passed:
        print(f"{failed} of {len(results)} checks failed", file=sys.stderr)
    return EXIT_OK if passed else EXIT_FAIL


def _epsilon_list(text: str) -> list:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None
    if not vals or not all(math.isfinite(v) for v in vals):
        raise argparse.ArgumentTypeError("epsilons must be finite numbers")
    return vals


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fbm-averaging", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="sample fBm paths to CSV")
    g.add_argument("--hurst", type=float, required=True)
    g.add_argument("--steps", type=int, required=True)
    g.add_argument("--t-end", type=float, default=1.0)
    g.add_argument("--paths", type=int, default=1)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--method", choices=["cholesky", "circulant"], default="circulant")
    g.add_argument("--out", default=".")
    g.set_defaults(func=cmd_generate)

    e = sub.add_parser("experiment", help="paired original/averaged Monte Carlo sweep")
    src = e.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", help="flat JSON config file")
    src.add_argument("--preset", choices=sorted(ex.PRESETS))
    e.add_argument("--case", choices=["a", "b", "c", "d"], default="a")
    e.add_argument("--epsilons", type=_epsilon_list, help="comma-separated, descending")
    e.add_argument("--replicates", type=int)
    e.add_argument("--seed", type=int)
    e.add_argument("--kind", choices=["symmetric", "forward", "backward"])
    e.add_argument("--workers", type=int, default=1)
    e.add_argument("--out", default=".")
    e.set_defaults(func=cmd_experiment)

    v = sub.add_parser("verify", help="run statistical property checks")
    v.add_argument("--suite", default="all")
    v.add_argument("--budget", choices=sorted(checks.BUDGETS), default="quick")
    v.add_argument("--out", default=".")
    v.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

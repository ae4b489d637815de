"""Command line scenario runner.

    python -m pilotwave run configs/free_packet.yaml --out out/free
    python -m pilotwave verify configs/harmonic.yaml

``run`` writes trajectories.csv, fields.json, histograms.json, report.json and a
manifest.json with sha256 digests of the others.  ``verify`` only prints the
check table (and writes report.json if ``--out`` is given).  Exit status is 0
iff every check passes, 1 if a check fails, 2 for config errors and 3 when the
scenario itself breaks.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import io
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import ScenarioConfig, load_config
from .errors import ConfigError, ScenarioError
from .scenarios import ScenarioResult, run_scenario

EXIT_OK, EXIT_CHECKS, EXIT_CONFIG, EXIT_SCENARIO = 0, 1, 2, 3


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return float(x) if np.isfinite(x) else None
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, complex):
        return [x.real, x.imag]
    return x


def _dump(obj) -> bytes:
    return (json.dumps(_jsonable(obj), indent=1, sort_keys=True, allow_nan=False) + "\n").encode()


def provenance(cfg: ScenarioConfig) -> dict:
    return {"config_digest": cfg.digest(), "seed": cfg.seed, "scenario": cfg.scenario,
            "versions": {"pilotwave": __version__, "numpy": np.__version__,
                         "scipy": scipy.__version__, "python": platform.python_version()}}


def _grid_meta(grid) -> dict | None:
    if grid is None:
        return None
    return {"lower": grid.lower, "upper": grid.upper, "points": list(grid.shape),
            "spacing": grid.spacing, "order": "row-major"}


def trajectories_csv(res: ScenarioResult) -> bytes:
    """member,t,q1..qd with one row per (member, output time), member-major."""
    T, n, d = res.positions.shape
    buf = io.StringIO()
    buf.write(",".join(["member", "t"] + [f"q{i + 1}" for i in range(d)]) + "\n")
    member = np.repeat(np.arange(n), T)
    t = np.tile(res.times, n)
    q = res.positions.transpose(1, 0, 2).reshape(n * T, d)
    rows = np.column_stack([t, q])
    for m, row in zip(member, rows):
        buf.write(f"{m}," + ",".join(format(v, ".17g") for v in row) + "\n")
    return buf.getvalue().encode()


def report_doc(cfg: ScenarioConfig, res: ScenarioResult) -> dict:
    return {"scenario": cfg.scenario, "provenance": provenance(cfg),
            "parameters": res.parameters, "checks": [c.as_dict() for c in res.checks],
            "passed": res.passed}


def artifacts(cfg: ScenarioConfig, res: ScenarioResult) -> dict[str, bytes]:
    out = {}
    prov = provenance(cfg)
    if res.positions is not None and res.positions.size:
        out["trajectories.csv"] = trajectories_csv(res)
    if res.snapshots:
        out["fields.json"] = _dump({
            "provenance": prov, "grid": _grid_meta(res.field_grid),
            "snapshots": [{"t": t, "density": rho.ravel()} for t, rho in res.snapshots]})
    if res.histograms:
        out["histograms.json"] = _dump({"provenance": prov, "grid": _grid_meta(res.field_grid),
                                        "histograms": res.histograms})
    out["report.json"] = _dump(report_doc(cfg, res))
    return out


def write_artifacts(files: dict[str, bytes], out_dir: Path) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for name in sorted(files):
        (out_dir / name).write_bytes(files[name])
        entries.append({"path": name, "sha256": hashlib.sha256(files[name]).hexdigest(),
                        "bytes": len(files[name])})
    manifest = {"files": entries}
    (out_dir / "manifest.json").write_bytes(_dump(manifest))
    return manifest


def print_checks(res: ScenarioResult, stream=None) -> None:
    stream = stream or sys.stdout
    for c in res.checks:
        status = "PASS" if c.passed else "FAIL"
        print(f"{status}  {c.name:<22} measured={c.measured:.6g}  {c.comparison} {c.tolerance:.6g}",
              file=stream)
    print(f"{res.scenario}: {sum(c.passed for c in res.checks)}/{len(res.checks)} checks passed",
          file=stream)


def _load(args) -> ScenarioConfig:
    cfg = load_config(args.config)
    out = cfg.output
    if args.snapshot_stride is not None:
        out = dataclasses.replace(out, snapshot_stride=args.snapshot_stride)
    if args.out is not None:
        out = dataclasses.replace(out, dir=str(args.out))
    return dataclasses.replace(cfg, output=out)


def _exit_status(cfg: ScenarioConfig, res: ScenarioResult) -> int:
    return EXIT_OK if res.passed or not cfg.checks.fatal else EXIT_CHECKS


def cmd_run(args) -> int:
    cfg = _load(args)
    res = run_scenario(cfg, threads=args.threads)
    manifest = write_artifacts(artifacts(cfg, res), Path(cfg.output.dir))
    print_checks(res)
    print(f"wrote {len(manifest['files'])} files + manifest.json to {cfg.output.dir}")
    return _exit_status(cfg, res)


def cmd_verify(args) -> int:
    cfg = _load(args)
    res = run_scenario(cfg, threads=args.threads)
    print_checks(res)
    if args.out is not None:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "report.json").write_bytes(_dump(report_doc(cfg, res)))
    return _exit_status(cfg, res)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pilotwave", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn, help_ in (("run", cmd_run, "run a scenario and write artifacts"),
                            ("verify", cmd_verify, "run a scenario's checks and print the table")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("config", help="YAML scenario config")
        s.add_argument("--out", type=Path, default=None, help="output directory")
        s.add_argument("--threads", type=int, default=1, help="worker threads for trajectories")
        s.add_argument("--snapshot-stride", type=int, default=None,
                       help="write every k-th recorded frame to fields.json (0 disables)")
        s.add_argument("-v", "--verbose", action="store_true", help="show solver warnings")
        s.set_defaults(func=fn)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_SCENARIO


if __name__ == "__main__":
    sys.exit(main())

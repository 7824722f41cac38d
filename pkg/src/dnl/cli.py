"""``dnl <subcommand> --config <path> --out <dir> --seed <u64> [--plot]``.

Exit codes: 0 pass, 1 check failed, 2 usage or config error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import math
import os
import platform
import sys
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__, _backend
from .errors import DNLError, InvalidInputError
from .experiments import COMMANDS, ConfigError, ExperimentResult, load_config, run
from .svg import chart_from_csv

EXIT_PASS, EXIT_FAIL, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2, 3
U64_MAX = 2**64 - 1


def format_cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return f"{v:.17g}"
    return str(v)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for r in rows:
            w.writerow([format_cell(v) for v in r])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


@dataclass
class RunManifest:
    command: str
    seed: int
    config: dict
    versions: dict
    started: str
    finished: str = ""
    status: str = ""
    exit_code: int = 0
    summary: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def versions() -> dict:
    return {"dnl": __version__, "numpy": np.__version__, "python": platform.python_version(),
            "backend": _backend.BACKEND}


def write_outputs(result: ExperimentResult, out: str, plot: bool) -> list:
    files = []
    for name, table in result.tables.items():
        fname = f"{name}.csv"
        write_csv(os.path.join(out, fname), table.header, table.rows)
        files.append(fname)
    if plot:
        for spec in result.plots:
            svg = chart_from_csv(os.path.join(out, f"{spec.table}.csv"), spec.x, spec.y, spec.group,
                                 title=spec.title, xlabel=spec.x, ylabel=spec.y,
                                 logx=spec.logx, logy=spec.logy)
            with open(os.path.join(out, spec.filename), "w", encoding="utf-8") as fh:
                fh.write(svg)
            files.append(spec.filename)
    for name, doc in result.artifacts.items():
        fname = f"{name}.json"
        with open(os.path.join(out, fname), "w", encoding="utf-8") as fh:
            json.dump(_jsonable(doc), fh, indent=1, sort_keys=True)
        files.append(fname)
    return files


def _seed(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}") from None
    if not 0 <= v <= U64_MAX:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dnl", description="Dense non-local network convergence experiments.")
    sub = ap.add_subparsers(dest="command", required=True, metavar="subcommand")
    for name in COMMANDS:
        sp = sub.add_parser(name, help=f"run the {name} experiment")
        sp.add_argument("--config", help="JSON config document (defaults apply to omitted keys)")
        sp.add_argument("--out", default=None, help="output directory (default: dnl-out/<subcommand>)")
        sp.add_argument("--seed", type=_seed, default=0, help="global seed, unsigned 64-bit")
        sp.add_argument("--plot", action="store_true", help="also emit SVG plots")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_PASS
    try:
        doc = None
        if args.config:
            with open(args.config, encoding="utf-8") as fh:
                doc = json.load(fh)
        config = load_config(args.command, doc)
    except (OSError, json.JSONDecodeError, ConfigError) as e:
        print(f"dnl: config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    out = args.out or os.path.join("dnl-out", args.command)
    os.makedirs(out, exist_ok=True)
    manifest = RunManifest(args.command, args.seed, config, versions(), _now())
    try:
        result = run(args.command, config, args.seed)
    except ConfigError as e:
        print(f"dnl: config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DNLError, ArithmeticError) as e:
        if isinstance(e, InvalidInputError):
            print(f"dnl: invalid input: {e}", file=sys.stderr)
            code = EXIT_USAGE
        else:
            print(f"dnl: numerical failure: {type(e).__name__}: {e}", file=sys.stderr)
            code = EXIT_NUMERICAL
        manifest.finished, manifest.status, manifest.exit_code = _now(), "error", code
        manifest.summary = {"error": f"{type(e).__name__}: {e}"}
        manifest.outputs = ["manifest.json"]
        _write_manifest(manifest, out)
        return code
    files = write_outputs(result, out, args.plot)
    code = EXIT_PASS if result.passed else EXIT_FAIL
    manifest.finished, manifest.exit_code = _now(), code
    manifest.status = "pass" if result.passed else "fail"
    manifest.summary = result.summary
    manifest.outputs = files + ["manifest.json"]
    _write_manifest(manifest, out)
    print(f"{'PASS' if result.passed else 'FAIL'} {args.command}: "
          + ", ".join(f"{k}={_short(v)}" for k, v in result.summary.items() if not isinstance(v, (dict, list))))
    return code


def _short(v):
    return f"{v:.4g}" if isinstance(v, float) else v


def _write_manifest(m: RunManifest, out: str) -> None:
    with open(os.path.join(out, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(_jsonable(asdict(m)), fh, indent=1, sort_keys=True)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

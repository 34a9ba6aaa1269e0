"""Command-line entry point.

Every subcommand reads its inputs from files or flags and writes JSON or CSV.
When ``--out`` is given, a ``<out>.manifest.json`` file next to the main
output records the resolved parameters, seed, paths, version and wall-clock
duration; the main outputs themselves carry nothing run-specific, so equal
inputs give byte-identical files.

Exit codes: 0 success, 1 failed check, 2 invalid input, 3 resource limit.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import math
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np

from . import born, statistics
from .errors import (
    DomainError,
    ModelConsistencyError,
    ParameterError,
    ResourceLimitError,
    TopologyError,
)
from .evolution import DEFAULT_BRANCH_LIMIT, closed_form, evolve, same_branches, superposition_rows
from .oracle import DEFAULT_DIM_CAP, compare_to_symbolic
from .topology import OrbitTopology, build_topology, load_params

EXIT_OK, EXIT_CHECK, EXIT_INPUT, EXIT_RESOURCE = 0, 1, 2, 3
CHECK_TOL = 1e-12
STATS_COLUMNS = ("Y", "R1", "R2", "D", "log2E")


class CheckFailed(Exception):
    def __init__(self, detail):
        super().__init__(detail.get("reason", "check failed"))
        self.detail = detail


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def _finite(obj):
    # JSON has no infinities; report them as strings
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def dumps(obj) -> str:
    return json.dumps(_finite(obj), indent=2, sort_keys=True) + "\n"


def _csv_text(rows, columns) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


class Run:
    """Collects output files and the manifest of one invocation."""

    def __init__(self, args):
        self.args = args
        self.started = time.perf_counter()
        self.outputs = []
        self.inputs = []
        self.params = {}
        self.seed = args.seed

    def emit(self, text: str, path=None) -> None:
        """Write ``text`` to ``path``, or to stdout when no path is given."""
        if path is None:
            sys.stdout.write(text)
            return
        path = Path(path)
        if path.parent != Path("."):
            path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        self.outputs.append(str(path))

    def manifest(self) -> None:
        if self.args.out is None:
            return
        doc = {
            "subcommand": self.args.command,
            "params": self.params,
            "seed": self.seed,
            "threads": self.args.threads,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "version": _version(),
            "duration_s": time.perf_counter() - self.started,
        }
        Path(f"{self.args.out}.manifest.json").write_text(dumps(doc))


def _trials_path(out):
    if out is None:
        return None
    path = Path(out)
    return str(path.with_suffix(".trials.csv" if path.suffix == ".csv" else ".csv"))


# subcommands -----------------------------------------------------------


def cmd_topology(args, run: Run) -> int:
    params = load_params(args.config)
    if args.seed is not None:
        params = dataclasses.replace(params, seed=args.seed)
    params.validate()
    run.inputs.append(str(args.config))
    run.params, run.seed = params.to_dict(), params.seed
    topo = build_topology(params)
    run.emit(topo.dumps(), args.out)
    return EXIT_OK


def cmd_evolve(args, run: Run) -> int:
    topo = OrbitTopology.load(args.topology)
    run.inputs.append(str(args.topology))
    T = topo.params.T if args.T is None else args.T
    run.params = {"T": T, "branch_limit": args.branch_limit, "verbose": args.verbose, **topo.params.to_dict()}
    run.seed = topo.params.seed
    sup = evolve(topo, T, branch_limit=args.branch_limit)
    agree = same_branches(sup.branches, closed_form(topo, T).branches)
    norm = sup.norm()
    rows = superposition_rows(sup, topo, verbose=args.verbose)
    columns = ["path", "p", "k", "t", "n_written", "R_max", "log2_dC"]
    if args.verbose:
        columns += ["ages", "rotated"]
        for row in rows:
            row["ages"] = json.dumps(row["ages"], separators=(",", ":"))
            row["rotated"] = json.dumps(row["rotated"], separators=(",", ":"))
    summary = {
        "T": T,
        "branches": len(sup),
        "counts": list(sup.counts),
        "norm": float(norm),
        "norm_exact": norm == 1,
        "closed_form_agrees": agree,
        "distinguishable": sup.distinguishable(),
        "max_log2_dC": max((r["log2_dC"] for r in rows), default=0),
    }
    run.emit(_csv_text(rows, columns), args.out)
    run.emit(dumps(summary), None if args.out is None else f"{args.out}.summary.json")
    if not (summary["norm_exact"] and agree and summary["distinguishable"]):
        raise CheckFailed({"reason": "evolution check failed", **summary})
    return EXIT_OK


def cmd_verify(args, run: Run) -> int:
    topo = OrbitTopology.load(args.topology)
    run.inputs.append(str(args.topology))
    T = topo.params.T if args.T is None else args.T
    run.params = {"T": T, "cap": args.cap, **topo.params.to_dict()}
    run.seed = topo.params.seed
    report = compare_to_symbolic(topo, T, cap=args.cap)
    run.emit(dumps(report), args.out)
    ok = report["max_amp_err"] < CHECK_TOL and report["gram_err"] < CHECK_TOL and report["structure_match"]
    if not ok:
        raise CheckFailed({"reason": "oracle disagrees with symbolic evolution", **report})
    return EXIT_OK


def cmd_stats(args, run: Run) -> int:
    params = statistics.GWParams(
        sigma=args.sigma, T=args.T, trials=args.trials, seed=0 if args.seed is None else args.seed, n_split=args.n_split
    ).validate()
    if not 1.0 < args.alpha < 2.0:
        raise ParameterError(f"alpha={args.alpha} must lie in (1, 2)", "alpha")
    if args.L0 < 1.0:
        raise ParameterError(f"L0={args.L0} must be at least 1", "L0")
    if params.sigma <= 0:
        raise ParameterError("sigma must be positive", "sigma")
    run.params = {**dataclasses.asdict(params), "alpha": args.alpha, "L0": args.L0}
    run.seed = params.seed
    result = statistics.excess_distribution(params, args.alpha, args.L0, threads=args.threads)
    run.emit(dumps(result.summary()), args.out)
    csv_path = _trials_path(args.out)
    if csv_path is not None:
        run.emit(_csv_text(({k: repr(v) for k, v in row.items()} for row in result.rows()), STATS_COLUMNS), csv_path)
    return EXIT_OK


def cmd_born(args, run: Run) -> int:
    run.params = {"a_sq": args.a_sq, "n": args.n, "brute_force": args.brute_force, "grid": args.grid}
    spec = born.optimal_split(args.a_sq, args.n)
    spec.check()
    doc = spec.to_dict()
    if args.brute_force:
        brute = born.brute_force_split(args.a_sq, args.n, args.grid)
        doc["brute_force"] = brute.to_dict()
        agree = brute.m == spec.m and all(
            abs(x * x - y * y) <= 1.0 / args.grid for x, y in zip(brute.moduli, spec.moduli)
        )
        doc["agree"] = agree
        run.emit(dumps(doc), args.out)
        if not agree:
            raise CheckFailed({"reason": "grid search disagrees with the closed form", **doc})
        return EXIT_OK
    run.emit(dumps(doc), args.out)
    return EXIT_OK


# parser ----------------------------------------------------------------


def _add_common(parser, suppress):
    default = (lambda value: argparse.SUPPRESS) if suppress else (lambda value: value)
    parser.add_argument("--seed", type=int, default=default(None), help="RNG seed (recorded in the manifest)")
    parser.add_argument("--threads", type=int, default=default(1), help="worker threads for Monte Carlo stages")
    parser.add_argument("--out", default=default(None), help="main output path (stdout when omitted)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="extremal-branch", description=__doc__.splitlines()[0])
    _add_common(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text)
        _add_common(p, suppress=True)
        return p

    p = command("topology", "draw a topology from a parameter file")
    p.add_argument("config", help="TOML or JSON file with the model parameters")

    p = command("evolve", "symbolic evolution of a topology; writes the branch table")
    p.add_argument("topology", help="topology JSON file")
    p.add_argument("--T", type=int, default=None, help="number of steps (default: the lifetime T)")
    p.add_argument("--branch-limit", type=int, default=DEFAULT_BRANCH_LIMIT)
    p.add_argument("--verbose", action="store_true", help="add per-record ages and rotation counts")

    p = command("verify", "exact state-vector check of a micro topology")
    p.add_argument("topology", help="topology JSON file")
    p.add_argument("--T", type=int, default=None, help="number of steps (default: the lifetime T)")
    p.add_argument("--cap", type=int, default=DEFAULT_DIM_CAP, help="largest state-space dimension allowed")

    p = command("stats", "Monte Carlo of the extremal recall excess")
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--T", type=int, required=True)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--L0", type=float, required=True)
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--n-split", type=int, default=2)

    p = command("born", "equal-modulus split of a two-outcome state")
    p.add_argument("--a-sq", type=float, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--brute-force", action="store_true", help="also run the grid search and compare")
    p.add_argument("--grid", type=int, default=200)
    return parser


COMMANDS = {
    "topology": cmd_topology,
    "evolve": cmd_evolve,
    "verify": cmd_verify,
    "stats": cmd_stats,
    "born": cmd_born,
}


def _fail(code, kind, message, **extra) -> int:
    sys.stderr.write(dumps({"error": kind, "message": message, **extra}))
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    if args.threads < 1:
        return _fail(EXIT_INPUT, "ParameterError", "--threads must be at least 1", field="threads")
    run = Run(args)
    try:
        code = COMMANDS[args.command](args, run)
    except CheckFailed as exc:
        code = _fail(EXIT_CHECK, "CheckFailed", str(exc), detail=exc.detail)
    except ModelConsistencyError as exc:
        code = _fail(EXIT_CHECK, type(exc).__name__, str(exc), k=exc.k, record=exc.record)
    except ParameterError as exc:
        return _fail(EXIT_INPUT, "ParameterError", str(exc), field=exc.field)
    except (DomainError, TopologyError) as exc:
        return _fail(EXIT_INPUT, type(exc).__name__, str(exc))
    except (OSError, ValueError) as exc:
        return _fail(EXIT_INPUT, type(exc).__name__, str(exc))
    except ResourceLimitError as exc:
        return _fail(EXIT_RESOURCE, "ResourceLimitError", str(exc), required=exc.required, limit=exc.limit)
    run.manifest()
    return code


if __name__ == "__main__":
    sys.exit(main())

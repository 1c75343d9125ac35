"""Command-line entry point: ``flmtest test | simulate | rates``.

Exit codes: 0 on success (whatever the test decision), 2 for invalid
input, 3 for a numerical failure. Every output embeds the resolved
configuration so a run can be repeated exactly.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import tempfile
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .adaptive import DEFAULT_MC_REPLICATES, dimension_collection, adaptive_test, subspace_test
from .fda import FpcaError, FunctionalSample, Grid, center_sample, fpca
from .numerics import RngStream
from .simulation import ExperimentPlan, ProcessSpec, SlopeSpec, run_experiment
from .theory import EllipsoidSpec, ScanBoundError, separation_rate

log = logging.getLogger("flmtest")

SCHEMA_VERSION = 1
EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3

PLAN_DEFAULTS = {
    "alpha": 0.05,
    "methods": ["P1", "P2"],
    "mc_replicates": DEFAULT_MC_REPLICATES,
    "noise_sd": 1.0,
    "seed": 0,
    "kbar": None,
    "process": {"kind": "brownian", "terms": 100, "grid_points": 1000},
}

SIM_COLUMNS = [
    "cell", "n", "family", "B", "xi", "tau", "method",
    "trials", "rejections", "percentage", "ci_half_width", "seed", "elapsed_s",
]
RATE_COLUMNS = [
    "n", "rho_sq", "rho_tilde_sq", "k_star", "argmax_k", "constant_C", "k_max", "outside_guarantee",
]


class InputError(Exception):
    """Invalid user input; reported with exit code 2."""


class NumericalError(Exception):
    """A computation could not be completed; reported with exit code 3."""


# ---------------------------------------------------------------------------
# file helpers


def write_atomic(path, text: str) -> None:
    """Write ``text`` to ``path`` through a temporary file and a rename."""
    path = Path(path)
    directory = path.parent if str(path.parent) else Path(".")
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=directory)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json_safe(value):
    # JSON has no infinities; they are written as strings
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if isinstance(value, (np.floating, float)):
        v = float(value)
        if math.isfinite(v):
            return v
        return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def read_numeric_csv(path, what: str) -> np.ndarray:
    """Parse a rectangular CSV of numbers, naming the row and column of any bad cell."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise InputError(f"{what}: cannot read {path}: {exc.strerror}") from exc
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if not rows:
        raise InputError(f"{what}: {path} is empty")
    width = len(rows[0])
    out = np.empty((len(rows), width))
    for i, row in enumerate(rows, start=1):
        if len(row) != width:
            raise InputError(
                f"{what}: row {i} has {len(row)} columns, expected {width} (missing cell at row {i}, "
                f"column {min(len(row), width) + 1})"
            )
        for j, cell in enumerate(row, start=1):
            text = cell.strip()
            if not text:
                raise InputError(f"{what}: missing value at row {i}, column {j}")
            try:
                value = float(text)
            except ValueError:
                raise InputError(f"{what}: non-numeric value {text!r} at row {i}, column {j}") from None
            if not math.isfinite(value):
                raise InputError(f"{what}: non-finite value {text!r} at row {i}, column {j}")
            out[i - 1, j - 1] = value
    return out


def load_sample(curves_path, responses_path) -> FunctionalSample:
    """Curves CSV (first row grid points, one curve per later row) plus a one-column responses CSV."""
    table = read_numeric_csv(curves_path, "curves")
    if table.shape[0] < 2:
        raise InputError("curves: need a grid row followed by at least one curve")
    try:
        grid = Grid(table[0])
    except ValueError as exc:
        raise InputError(f"curves: invalid grid row: {exc}") from exc
    curves = table[1:]
    resp = read_numeric_csv(responses_path, "responses")
    if resp.shape[1] != 1:
        raise InputError(f"responses: expected a single column, found {resp.shape[1]}")
    resp = resp[:, 0]
    if resp.size != curves.shape[0]:
        raise InputError(
            f"responses: {resp.size} values for {curves.shape[0]} curves"
        )
    if curves.shape[0] < 4:
        raise InputError(f"at least 4 observations are required, got {curves.shape[0]}")
    return FunctionalSample(grid, curves, resp)


def _load_basis(path, grid: Grid) -> np.ndarray:
    table = read_numeric_csv(path, "null basis")
    if table.shape[1] != grid.size or not np.array_equal(table[0], grid.points):
        raise InputError("null basis: the first row must repeat the curves grid")
    return table[1:]


# ---------------------------------------------------------------------------
# test


def cmd_test(args) -> int:
    if not 0 < args.alpha < 1:
        raise InputError("--alpha must lie in (0, 1)")
    method = args.method.upper()
    if method == "P2" and args.B < 100:
        raise InputError("--B must be at least 100")
    sample = load_sample(args.curves, args.responses)
    if args.center:
        sample = center_sample(sample)
    try:
        collection = dimension_collection(sample.n, args.kbar)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    config = {
        "command": "test",
        "curves": str(args.curves),
        "responses": str(args.responses),
        "null_basis": None if args.null_basis is None else str(args.null_basis),
        "alpha": args.alpha,
        "method": method,
        "B": args.B,
        "seed": args.seed,
        "kbar": collection.kbar,
        "center": args.center,
        "version": __version__,
    }
    decomposition = fpca(sample, max_components=min(collection.kbar, sample.n))
    stream = RngStream(args.seed)
    if args.null_basis is not None:
        basis = _load_basis(args.null_basis, sample.grid)
        try:
            result = subspace_test(
                sample, decomposition, basis, args.alpha, method, args.B, stream, collection
            )
        except ValueError as exc:
            raise InputError(f"null basis: {exc}") from exc
    else:
        result = adaptive_test(sample, decomposition, args.alpha, method, args.B, stream, collection)
    report = {
        "schema_version": SCHEMA_VERSION,
        "config": config,
        "n": sample.n,
        "grid_points": sample.grid.size,
        "rank": decomposition.rank,
        "result": result.as_dict(),
    }
    write_atomic(args.out, json.dumps(_json_safe(report), indent=2) + "\n")
    log.info("decision: %s (sup margin %.4g)", "reject" if result.reject else "accept", result.supremum_margin)
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate


def _shipped_plan(name: str) -> Optional[str]:
    ref = resources.files("flmtest").joinpath("plans", name)
    return ref.read_text() if ref.is_file() else None


def load_plan_text(path) -> str:
    p = Path(path)
    if p.is_file():
        return p.read_text()
    shipped = _shipped_plan(p.name)
    if shipped is None:
        raise InputError(f"plan: {path} not found (and no shipped plan of that name)")
    return shipped


def resolve_plan(raw: dict, trials: Optional[int] = None, seed: Optional[int] = None) -> dict:
    """Merge defaults into every cell and apply overrides; the result is itself a valid plan."""
    if not isinstance(raw, dict):
        raise InputError("plan: top level must be an object")
    version = raw.get("schema_version")
    if version != SCHEMA_VERSION:
        raise InputError(f"plan: unsupported schema_version {version!r}")
    cells = raw.get("cells")
    if not isinstance(cells, list) or not cells:
        raise InputError("plan: 'cells' must be a nonempty list")
    defaults = dict(PLAN_DEFAULTS)
    defaults.update(raw.get("defaults") or {})
    resolved = []
    seen = set()
    for pos, cell in enumerate(cells):
        if not isinstance(cell, dict):
            raise InputError(f"plan: cell #{pos} is not an object")
        merged = {k: v for k, v in defaults.items()}
        merged.update(cell)
        merged.setdefault("id", f"cell{pos}")
        if merged["id"] in seen:
            raise InputError(f"plan: duplicate cell id {merged['id']!r}")
        seen.add(merged["id"])
        if trials is not None:
            merged["trials"] = trials
        if seed is not None:
            merged["seed"] = seed
        resolved.append(merged)
    return {
        "schema_version": SCHEMA_VERSION,
        "name": raw.get("name", "plan"),
        "cells": resolved,
    }


_PROCESS_CACHE: Dict[tuple, ProcessSpec] = {}


def _process(spec: dict) -> ProcessSpec:
    if spec.get("kind") != "brownian":
        raise ValueError(f"unsupported process kind {spec.get('kind')!r}")
    key = (int(spec.get("terms", 100)), int(spec.get("grid_points", 1000)))
    if key not in _PROCESS_CACHE:
        _PROCESS_CACHE[key] = ProcessSpec.brownian(*key)
    return _PROCESS_CACHE[key]


def _slope(spec: dict) -> SlopeSpec:
    if not isinstance(spec, dict):
        raise ValueError("slope must be an object")
    family = spec.get("family", "zero")
    if family == "zero":
        return SlopeSpec.zero()
    if family == "theta_kl":
        return SlopeSpec.theta_kl(spec["B"], spec["xi"], spec.get("normalization", "norm"))
    if family == "theta_g":
        return SlopeSpec.theta_g(spec["B"], spec["tau"])
    raise ValueError(f"unknown slope family {family!r}")


def build_experiments(plan: dict) -> List[ExperimentPlan]:
    """Validate every cell up front; all problems are reported together."""
    experiments, problems = [], []
    for cell in plan["cells"]:
        try:
            n = int(cell["n"])
            if cell.get("kbar") is not None:
                dimension_collection(n, cell["kbar"])
            experiments.append(
                ExperimentPlan(
                    process=_process(cell["process"]),
                    slope=_slope(cell.get("slope", {"family": "zero"})),
                    n=n,
                    trials=int(cell["trials"]),
                    alpha=float(cell["alpha"]),
                    methods=tuple(cell["methods"]),
                    mc_replicates=int(cell["mc_replicates"]),
                    noise_sd=float(cell["noise_sd"]),
                    seed=int(cell["seed"]),
                    kbar=cell.get("kbar"),
                )
            )
            if not 0 < experiments[-1].alpha < 1:
                raise ValueError("alpha must lie in (0, 1)")
            if "P2" in experiments[-1].methods and experiments[-1].mc_replicates < 100:
                raise ValueError("mc_replicates must be at least 100")
        except (KeyError, TypeError, ValueError) as exc:
            detail = f"missing field {exc}" if isinstance(exc, KeyError) else str(exc)
            problems.append(f"cell {cell.get('id')!r}: {detail}")
    if problems:
        raise InputError("plan: invalid cells\n  " + "\n  ".join(problems))
    return experiments


def _config_lines(config: dict) -> str:
    return "# config " + json.dumps(config, sort_keys=True) + "\n"


def read_results(path):
    """Config dict and data rows of a results CSV written by ``simulate``."""
    config, body = None, []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("# config "):
                config = json.loads(line[len("# config "):])
            elif not line.startswith("#"):
                body.append(line)
    rows = list(csv.DictReader(io.StringIO("".join(body))))
    return config, rows


def _render_results(config: dict, rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    buf.write(_config_lines(config))
    writer = csv.DictWriter(buf, fieldnames=SIM_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()


def _fmt(value) -> str:
    return "" if value is None else repr(float(value))


def cmd_simulate(args) -> int:
    if args.trials is not None and args.trials < 1:
        raise InputError("--trials must be positive")
    text = load_plan_text(args.plan)
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"plan: not valid JSON ({exc})") from exc
    plan = resolve_plan(raw, args.trials, args.seed)
    experiments = build_experiments(plan)

    rows: List[dict] = []
    done = set()
    out = Path(args.out)
    if out.exists():
        try:
            old_config, old_rows = read_results(out)
        except (OSError, ValueError) as exc:
            raise InputError(f"output: cannot resume from {out}: {exc}") from exc
        if old_config != plan:
            raise InputError(f"output: {out} holds results for a different configuration")
        rows = old_rows
        done = {r["cell"] for r in rows}
        if done:
            log.info("resuming: %d cells already complete", len(done))

    for cell, exp in zip(plan["cells"], experiments):
        if cell["id"] in done:
            continue
        try:
            res = run_experiment(exp)
        except RuntimeError as exc:
            raise NumericalError(f"cell {cell['id']!r}: {exc}") from exc
        slope = exp.slope
        for m in res.methods:
            rows.append(
                {
                    "cell": cell["id"],
                    "n": exp.n,
                    "family": slope.family,
                    "B": _fmt(slope.B),
                    "xi": _fmt(slope.xi),
                    "tau": _fmt(slope.tau),
                    "method": m,
                    "trials": res.trials,
                    "rejections": res.rejections[m],
                    "percentage": repr(res.percentage(m)),
                    "ci_half_width": repr(res.ci_half_width(m)),
                    "seed": exp.seed,
                    "elapsed_s": f"{res.elapsed:.3f}",
                }
            )
        write_atomic(out, _render_results(plan, rows))
        log.info(
            "%s: %s (%.1fs)",
            cell["id"],
            ", ".join(f"{m} {res.percentage(m):.2f}%" for m in res.methods),
            res.elapsed,
        )
    if not out.exists():
        write_atomic(out, _render_results(plan, rows))
    return EXIT_OK


# ---------------------------------------------------------------------------
# rates


def _parse_n(text: str) -> int:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not value.is_integer() or value < 1:
        raise argparse.ArgumentTypeError(f"sample sizes must be positive integers, got {text!r}")
    return int(value)


def cmd_rates(args) -> int:
    regime = {"poly": "polynomial", "exp": "exponential"}[args.regime]
    if args.C < 0:
        raise InputError("--C must be nonnegative")
    try:
        spec = EllipsoidSpec(regime, args.R, s=args.s)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    config = {
        "command": "rates",
        "regime": regime,
        "s": args.s,
        "R": args.R,
        "C": args.C,
        "n_list": list(args.n_list),
        "k_max": args.k_max,
        "version": __version__,
    }
    buf = io.StringIO()
    buf.write(_config_lines(config))
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RATE_COLUMNS)
    for n in args.n_list:
        try:
            r = separation_rate(spec, n, args.C, args.k_max)
        except ScanBoundError as exc:
            raise NumericalError(f"n={n}: {exc}") from exc
        writer.writerow(
            [r.n, repr(r.rho_sq), repr(r.rho_tilde_sq), r.k_star, r.argmax_k,
             repr(r.constant_C), r.k_max, int(r.outside_guarantee)]
        )
    if spec.outside_guarantee:
        log.warning("s <= 3.5: outside the range where the theory guarantees the rate")
    write_atomic(args.out, buf.getvalue())
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flmtest", description="Goodness-of-fit tests for the functional linear model.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="progress messages on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("test", help="adaptive test of a null slope on data files")
    t.add_argument("--curves", required=True, help="CSV: grid row, then one curve per row")
    t.add_argument("--responses", required=True, help="CSV with one response per row")
    t.add_argument("--alpha", type=float, default=0.05)
    t.add_argument("--method", choices=["p1", "p2", "P1", "P2"], default="p2")
    t.add_argument("--B", type=int, default=DEFAULT_MC_REPLICATES, help="Monte-Carlo replicates (p2)")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--kbar", type=int, default=None, help="largest dimension (power of two)")
    t.add_argument("--no-center", dest="center", action="store_false", help="use the data as given")
    t.add_argument("--null-basis", default=None, help="CSV: grid row, then basis functions of the null span")
    t.add_argument("--out", required=True, help="JSON report path")
    t.set_defaults(func=cmd_test)

    s = sub.add_parser("simulate", help="run a simulation plan")
    s.add_argument("--plan", required=True, help="plan file, or the name of a shipped plan")
    s.add_argument("--trials", type=int, default=None, help="override the trials of every cell")
    s.add_argument("--seed", type=int, default=None, help="override the seed of every cell")
    s.add_argument("--out", required=True, help="CSV results path (resumed if present)")
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("rates", help="separation-rate table")
    r.add_argument("--regime", choices=["poly", "exp"], required=True)
    r.add_argument("--s", type=float, required=True)
    r.add_argument("--R", type=float, required=True)
    r.add_argument("--C", type=float, default=1.0)
    r.add_argument("--n-list", type=_parse_n, nargs="+", required=True)
    r.add_argument("--k-max", type=int, default=None)
    r.add_argument("--out", required=True, help="CSV path")
    r.set_defaults(func=cmd_rates)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_INPUT
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="flmtest: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except InputError as exc:
        print(f"flmtest: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NumericalError, FpcaError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"flmtest: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"flmtest: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

"""Command-line interface: ``margent <command> ...``.

Every command prints one JSON report (optionally written to ``--output``)
embedding the resolved run configuration and the library version.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from collections import defaultdict
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__, analysis, catalog, conic
from .config import ConfigError, RunConfig
from .iterate import INFEASIBLE, SOLVER_FAILURE, STALLED, SUCCESS, SearchConfig, run_seesaw
from .operators import OperatorError, mix_with_white_noise
from .witness import (
    DETECTION_THRESHOLD,
    MarginalSet,
    SolverFailure,
    WitnessError,
    classify,
    min_witness_value,
    min_witness_value_unrestricted,
    validate_witness,
)

EXIT_OK = 0
EXIT_NOT_DETECTED = 2
EXIT_INFEASIBLE = 3
EXIT_INPUT = 4
EXIT_SOLVER = 5

TOLERANCE_SLACK = 0.005

log = logging.getLogger("margent")


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _emit(payload: dict, output: str | None) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True, default=_json_default)
    if output:
        Path(output).write_text(text + "\n")
    print(text)


def _envelope(cfg: RunConfig, result: dict, started: float) -> dict:
    return {
        "version": __version__,
        "backend": os.environ.get(conic.BACKEND_ENV, "auto"),
        "config": cfg.to_json(),
        "result": result,
        "elapsed_seconds": round(time.time() - started, 3),
    }


# -- commands ----------------------------------------------------------------

def run_verify(cfg: RunConfig) -> tuple[dict, int]:
    rho, entry = cfg.resolve_state()
    opts = cfg.options
    if opts["noise"]:
        rho = mix_with_white_noise(rho, float(opts["noise"]))
    tol = cfg.resolve_tolerances()
    pattern = cfg.resolve_pattern(rho.register, entry)
    audit = analysis.marginal_audit(rho, pattern)
    value, W = min_witness_value(rho, pattern, tolerances=tol)
    report = validate_witness(W)
    result: dict[str, Any] = {
        "state": cfg.state or cfg.input_file,
        "dims": list(rho.register.dims),
        "pattern": pattern.labels(),
        "audit": audit,
        "marginal_witness_value": value,
        "classification": classify(value),
        "witness_validation": report.to_json(),
    }
    if opts["unrestricted"]:
        result["unrestricted_witness_value"] = min_witness_value_unrestricted(rho, tolerances=tol)[0]
    if opts["tolerance"]:
        result["tolerance"] = analysis.noise_tolerance(rho, pattern, tolerances=tol).to_json()

    detected = value < DETECTION_THRESHOLD
    checks = {"pairs_ppt": audit["all_pairs_ppt"], "witness_valid": report.passed}
    if entry is not None:
        expected_tol = entry.expected.get("marginal_tolerance", 0.0)
        checks["detection_as_expected"] = detected == (expected_tol > 0)
        if opts["tolerance"]:
            checks["tolerance_within_slack"] = abs(result["tolerance"]["p_star"] - expected_tol) <= TOLERANCE_SLACK
            result["expected_tolerance"] = expected_tol
    else:
        checks["detected"] = detected
    result["checks"] = checks
    result["verdict"] = "PASS" if all(checks.values()) else "FAIL"
    return result, EXIT_OK if result["verdict"] == "PASS" else EXIT_NOT_DETECTED


def run_search(cfg: RunConfig) -> tuple[dict, int]:
    register = cfg.resolve_register()
    pattern = cfg.resolve_pattern(register)
    constraints = cfg.resolve_constraints(register)
    opts = cfg.options
    sc = SearchConfig(register, pattern, constraints, seed=cfg.seed, max_rounds=int(opts["max_rounds"]),
                      stall_tol=float(opts["stall_tol"]), polish_rounds=int(opts["polish_rounds"]))
    outcome = run_seesaw(sc, tolerances=cfg.resolve_tolerances())
    result = outcome.to_json()
    result["search_config"] = sc.to_json()
    if register.dims != (2,) * register.n_parties:
        result["note"] = "PPT-certified, separability unverified"
    code = {SUCCESS: EXIT_OK, STALLED: EXIT_NOT_DETECTED, INFEASIBLE: EXIT_INFEASIBLE,
            SOLVER_FAILURE: EXIT_SOLVER}[outcome.status]
    return result, code


def run_tolerance(cfg: RunConfig) -> tuple[dict, int]:
    rho, entry = cfg.resolve_state()
    mode = cfg.options["mode"]
    if mode not in (analysis.MARGINAL, analysis.UNRESTRICTED):
        raise ConfigError(f"mode must be {analysis.MARGINAL!r} or {analysis.UNRESTRICTED!r}")
    pattern = cfg.resolve_pattern(rho.register, entry)
    res = analysis.noise_tolerance(rho, pattern, mode, width=float(cfg.options["width"]),
                                   tolerances=cfg.resolve_tolerances())
    code = EXIT_OK if res.detected else EXIT_NOT_DETECTED
    if any("aborted" in n for n in res.notes):
        code = EXIT_SOLVER
    return res.to_json(), code


def run_audit(cfg: RunConfig) -> tuple[dict, int]:
    rho, entry = cfg.resolve_state()
    if cfg.options["noise"]:
        rho = mix_with_white_noise(rho, float(cfg.options["noise"]))
    pattern = cfg.resolve_pattern(rho.register, entry)
    return analysis.marginal_audit(rho, pattern, bool(cfg.options["triples"])), EXIT_OK


def run_uniqueness(cfg: RunConfig) -> tuple[dict, int]:
    rho, entry = cfg.resolve_state()
    pattern = cfg.resolve_pattern(rho.register, entry)
    marg = MarginalSet.from_state(rho, pattern)
    rep = analysis.compatibility_range(marg, reference=rho, jobs=int(cfg.options["jobs"]),
                                       tolerances=cfg.resolve_tolerances())
    return rep.to_json(), EXIT_OK


def run_localizable(cfg: RunConfig) -> tuple[dict, int]:
    rho, _ = cfg.resolve_state()
    party = cfg.options["party"]
    parties = rho.register.parties if party is None else [int(party)]
    grid = tuple(int(g) for g in cfg.options["grid"])
    sweeps = [analysis.localizable_sweep(rho, p, grid, int(cfg.options["max_evals"])) for p in parties]
    return {"sweeps": sweeps, "minimum": min(s["minimum"] for s in sweeps)}, EXIT_OK


RUNNERS = {
    "verify": run_verify,
    "search": run_search,
    "tolerance": run_tolerance,
    "audit": run_audit,
    "uniqueness": run_uniqueness,
    "localizable": run_localizable,
}


def execute(cfg: RunConfig) -> tuple[dict, int]:
    """Run one configuration; returns the report envelope and the exit code."""
    started = time.time()
    try:
        result, code = RUNNERS[cfg.command](cfg)
    except SolverFailure as exc:
        result, code = {"error": str(exc), "status": exc.solution.status}, (
            EXIT_INFEASIBLE if exc.solution.status == conic.INFEASIBLE else EXIT_SOLVER)
    return _envelope(cfg, result, started), code


# -- report aggregation ------------------------------------------------------

def summarize(paths: list[str]) -> dict:
    """Group search outcome / tolerance reports by register and aggregate them."""
    groups: dict[str, list[dict]] = defaultdict(list)
    for p in paths:
        data = json.loads(Path(p).read_text())
        result = data.get("result", data)
        dims = result.get("search_config", {}).get("dims") or data.get("config", {}).get("dims") or []
        groups["x".join(map(str, dims)) or "unknown"].append(result)
    rows = []
    for key, results in sorted(groups.items()):
        searches = [r for r in results if "status" in r and "history" in r]
        tolerances = [r["p_star"] for r in results if "p_star" in r]
        success = [r for r in searches if r["status"] == SUCCESS]
        residuals = [r["verification"]["constraints"]["worst"] for r in success if r.get("verification")]
        rows.append({
            "register": key,
            "runs": len(searches),
            "successes": len(success),
            "success_rate": len(success) / len(searches) if searches else None,
            "mean_rounds_to_success": float(np.mean([r["rounds_to_success"] for r in success])) if success else None,
            "best_value": min((r["best_value"] for r in success), default=None),
            "worst_constraint_margin": min(residuals, default=None),
            "tolerances": tolerances,
        })
    return {"rows": rows}


def render_markdown(summary: dict) -> str:
    cols = ["register", "runs", "successes", "success_rate", "mean_rounds_to_success", "best_value",
            "worst_constraint_margin"]
    lines = ["| " + " | ".join(cols) + " |", "|" + "---|" * len(cols)]
    for row in summary["rows"]:
        cells = []
        for c in cols:
            v = row[c]
            cells.append("" if v is None else f"{v:.4g}" if isinstance(v, float) else str(v))
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines)


# -- argument parsing --------------------------------------------------------

def _add_state(p: argparse.ArgumentParser) -> None:
    p.add_argument("state", help="catalog id, or path to a JSON density matrix {dims, re, im}")
    p.add_argument("--param", action="append", default=[], metavar="KEY=VALUE",
                   help="catalog constructor parameter, e.g. phi_sign=-1")
    p.add_argument("--pattern", default=None, help="'all', 'AB,BC' or '01,12' (default: the catalog pattern)")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--output", default=None, help="also write the JSON report here")
    p.add_argument("--tolerance-override", action="append", default=[], metavar="FIELD=VALUE",
                   help="solver tolerance override, e.g. feasibility=1e-9")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="margent", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--backend", choices=sorted(conic.BACKENDS), default=None,
                        help=f"SDP backend (default: ${conic.BACKEND_ENV} or auto)")
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True)

    cat = sub.add_parser("catalog", help="catalog of named states")
    cat.add_argument("action", choices=["list"])

    p = sub.add_parser("verify", help="audit a state and compute its witness values")
    _add_state(p)
    _add_common(p)
    p.add_argument("--tolerance", action="store_true", help="also bisect the white-noise tolerance")
    p.add_argument("--no-unrestricted", action="store_true", help="skip the unrestricted witness program")
    p.add_argument("--noise", type=float, default=0.0, help="white-noise fraction mixed in first")

    p = sub.add_parser("search", help="see-saw search for a state with PPT marginals and a negative witness")
    p.add_argument("--config", default=None, help="JSON RunConfig; flags below are ignored when given")
    p.add_argument("--dims", default="2,2,2", help="local dimensions, e.g. 2,2,2 or 3,3,3")
    p.add_argument("--seed", type=int, default=None, help="rng seed (required)")
    p.add_argument("--pattern", default="all")
    p.add_argument("--triples", default=None, help="'all' or e.g. 'ABC,BCD': triple marginals kept PPT")
    p.add_argument("--directions", type=int, default=0, help="post-measurement directions in total")
    p.add_argument("--eps", type=float, default=1e-4, help="post-measurement PPT margin")
    p.add_argument("--max-rounds", type=int, default=50)
    _add_common(p)

    p = sub.add_parser("tolerance", help="white-noise tolerance by bisection")
    _add_state(p)
    _add_common(p)
    p.add_argument("--mode", choices=[analysis.MARGINAL, analysis.UNRESTRICTED], default=analysis.MARGINAL)
    p.add_argument("--width", type=float, default=1e-4, help="final bracket width")

    p = sub.add_parser("audit", help="PPT audit of pair (and triple) marginals")
    _add_state(p)
    _add_common(p)
    p.add_argument("--triples", action="store_true")
    p.add_argument("--noise", type=float, default=0.0)

    p = sub.add_parser("uniqueness", help="range of compatible global states along complement directions")
    _add_state(p)
    _add_common(p)
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("localizable", help="post-measurement PT sweep over the Bloch sphere")
    _add_state(p)
    _add_common(p)
    p.add_argument("--party", type=int, default=None, help="measured party (default: each in turn)")
    p.add_argument("--grid", default="60x120", help="theta x phi grid")

    p = sub.add_parser("report", help="aggregate JSON reports")
    p.add_argument("files", nargs="*")
    p.add_argument("--markdown", action="store_true")
    p.add_argument("--output", default=None)
    return parser


def _kv(items: list[str]) -> dict:
    out = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"expected KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        try:
            out[k] = json.loads(v)
        except json.JSONDecodeError:
            out[k] = v
    return out


def config_from_args(args: argparse.Namespace) -> RunConfig:
    common: dict[str, Any] = {"output": args.output, "tolerances": _kv(args.tolerance_override)}
    if args.command == "search":
        if args.config:
            return RunConfig.load(args.config)
        constraints: dict[str, Any] = {}
        if args.triples:
            constraints["three_body"] = args.triples
        if args.directions:
            constraints["post_measurement"] = {"count": args.directions, "eps": args.eps}
        return RunConfig("search", dims=[int(d) for d in args.dims.split(",")], pattern=args.pattern,
                         seed=args.seed, constraints=constraints, options={"max_rounds": args.max_rounds}, **common)
    state = {"params": _kv(args.param), "pattern": args.pattern}
    if Path(args.state).suffix == ".json" or os.sep in args.state:
        state["input_file"] = args.state
    else:
        state["state"] = args.state
    options: dict[str, Any] = {
        "verify": lambda: {"tolerance": args.tolerance, "unrestricted": not args.no_unrestricted,
                           "noise": args.noise},
        "tolerance": lambda: {"mode": args.mode, "width": args.width},
        "audit": lambda: {"triples": args.triples, "noise": args.noise},
        "uniqueness": lambda: {"jobs": args.jobs},
        "localizable": lambda: {"party": args.party, "grid": [int(g) for g in args.grid.lower().split("x")]},
    }[args.command]()
    return RunConfig(args.command, options=options, **state, **common)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    if args.backend:
        os.environ[conic.BACKEND_ENV] = args.backend

    if args.command == "catalog":
        _emit({"version": __version__,
               "states": [{"id": i, "description": catalog.describe(i)} for i in catalog.ids()]}, None)
        return EXIT_OK
    if args.command == "report":
        try:
            summary = summarize(args.files)
        except (OSError, json.JSONDecodeError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_INPUT
        if args.markdown:
            print(render_markdown(summary))
        else:
            _emit({"version": __version__, **summary}, args.output)
        return EXIT_OK

    try:
        cfg = config_from_args(args)
        envelope, code = execute(cfg)
    except (ConfigError, catalog.CatalogError, OperatorError, WitnessError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    _emit(envelope, cfg.output)
    return code


if __name__ == "__main__":
    sys.exit(main())

"""Command-line front end.

Tabular output is CSV with a header row, structured output is JSON with
stable key order. Every run writes a one-line resolved-config echo
(``# config {...}``) to stderr. Exit codes: 0 success, 1 domain error,
2 usage error.

Config files hold ``key = value`` lines (``#`` comments allowed) whose keys
are long option names; flags given on the command line override them.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .attack import ALPHA_CAP, AttackSpec, attack_bounds, attack_direction, attack_objective, greedy_best_attack, lp_best_attack, verify_optimality
from .cases import resolve_case
from .detector import DEFAULT_CUTOFF, DEFAULT_DECISION, AlphaMinConfig, build_asset_profile, detect, dump_profiles, load_profiles
from .dispatch import InfeasibleDispatchError, solve_dcopf
from .estimation import build_measurement_model, craft_bypass, estimate_states, state_error_for_deviation
from .grid import CaseFormatError, apply_modifications, parse_matpower, serialize_case, validate
from .network import DisconnectedNetworkError, ImbalanceError, build_susceptance, compute_ptdf
from .scenario import RNG_ALGORITHM, default_zeroed_count, monte_carlo

log = logging.getLogger("lrguard")

SIM_COLUMNS = ["index", "kind", "alpha", "npdsb", "tnsb", "ratio", "flagged",
               "cyber_flow_mw", "physical_flow_mw", "overflow_mw"]


class DomainError(Exception):
    """Bad input data (as opposed to a bad command line)."""


# ---------------------------------------------------------------------------
# small I/O helpers


def _fmt(x) -> str:
    return "" if x is None else f"{x:.12g}"


def _open_out(args, name):
    if args.out_dir:
        path = Path(args.out_dir)
        path.mkdir(parents=True, exist_ok=True)
        return open(path / name, "w", newline="")
    return _Borrowed(sys.stdout)


class _Borrowed:
    def __init__(self, fh):
        self.fh = fh

    def __enter__(self):
        return self.fh

    def __exit__(self, *exc):
        self.fh.flush()


def _write_json(args, name, doc):
    with _open_out(args, name) as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def _read_bus_csv(path, column, case):
    """``bus,<column>`` CSV -> vector in case bus order (missing buses raise)."""
    values = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "bus" not in reader.fieldnames or column not in reader.fieldnames:
            raise DomainError(f"{path}: expected header 'bus,{column}'")
        for n, row in enumerate(reader, start=2):
            try:
                bus, val = int(row["bus"]), float(row[column])
            except (TypeError, ValueError):
                raise DomainError(f"{path}:{n}: bad row {row}") from None
            if bus not in case.bus_index:
                raise DomainError(f"{path}:{n}: unknown bus {bus}")
            if bus in values:
                raise DomainError(f"{path}:{n}: bus {bus} listed twice")
            values[bus] = val
    missing = [b.id for b in case.buses if b.id not in values]
    if missing:
        raise DomainError(f"{path}: no value for buses {missing[:10]}")
    return np.array([values[b.id] for b in case.buses])


def _targets(text):
    out = []
    for tok in str(text).split(","):
        tok = tok.strip()
        if tok:
            out.append(int(tok) if tok.lstrip("-").isdigit() else tok)
    return out


def _load_case(args):
    if not args.case.startswith("builtin:") and not Path(args.case).exists():
        raise DomainError(f"case file not found: {args.case}")
    case = resolve_case(args.case)
    if getattr(args, "rating_scale", 1.0) != 1.0:
        case = apply_modifications(case, args.rating_scale, zero_negative_loads=False)
    if getattr(args, "reference", None) is not None:
        case = case.with_reference(args.reference)
    return case


def _ptdf(args, case):
    return compute_ptdf(build_susceptance(case))


# ---------------------------------------------------------------------------
# subcommands


def cmd_convert(args):
    text = Path(args.input).read_text()
    case = parse_matpower(text, unlimited_rating=args.unlimited_rating)
    case = apply_modifications(case, args.rating_scale, zero_negative_loads=not args.keep_negative_loads)
    with _open_out(args, "case.grid") as fh:
        fh.write(serialize_case(case))
    return 0


def cmd_validate(args):
    case = _load_case(args)
    report = validate(case)
    doc = {
        "buses": case.n_buses,
        "branches": case.n_branches,
        "generators": len(case.generators),
        "ok": report.ok,
        "violations": [{"kind": v.kind, "message": v.message, "buses": list(v.buses)} for v in report.violations],
    }
    _write_json(args, "validation.json", doc)
    return 0 if report.ok else 1


def cmd_ptdf(args):
    case = _load_case(args)
    ptdf = _ptdf(args, case)
    positions = [case.branch_position(t) for t in _targets(args.branches)] if args.branches else range(case.n_branches)
    with _open_out(args, "ptdf.csv") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["branch", "bus", "ptdf"])
        for k in positions:
            row = ptdf.row_at(k)
            for i, b in enumerate(case.buses):
                w.writerow([case.branches[k].id, b.id, f"{row[i]:.12g}"])
    return 0


def cmd_dcopf(args):
    case = _load_case(args)
    loads = _read_bus_csv(args.loads, "load_mw", case) if args.loads else case.loads
    sol = solve_dcopf(case, _ptdf(args, case), loads)
    with _open_out(args, "dispatch.csv") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["generator", "bus", "dispatch_mw"])
        for g, p in zip(case.generators, sol.dispatch):
            w.writerow([g.id, g.bus, _fmt(p)])
    print(json.dumps({"total_cost": sol.total_cost}), file=sys.stderr)
    if args.out_dir:
        _write_json(args, "dcopf.json", {"total_cost": sol.total_cost,
                                         "branch_flows_mw": {str(b.id): f for b, f in zip(case.branches, sol.cyber_flows.tolist())}})
    return 0


def cmd_attack(args):
    case = _load_case(args)
    ptdf = _ptdf(args, case)
    k = case.branch_position(args.target)
    branch = case.branches[k]
    loads = _read_bus_csv(args.loads, "load_mw", case) if args.loads else case.loads
    direction = attack_direction(ptdf, case, branch.id, loads) if args.direction == "auto" else int(args.direction)
    spec = AttackSpec(branch.id, direction, args.alpha, args.alpha_cap)
    row = ptdf.row_at(k)
    solver = lp_best_attack if args.method == "lp" else greedy_best_attack
    dev = solver(row, loads, spec)
    lo, hi = attack_bounds(loads, args.alpha)
    with _open_out(args, "deviations.csv") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bus", "delta_mw"])
        for b, d in zip(case.buses, dev.deltas):
            w.writerow([b.id, _fmt(d)])
    summary = {
        "target": branch.id,
        "from_bus": branch.from_bus,
        "to_bus": branch.to_bus,
        "alpha": args.alpha,
        "direction": direction,
        "method": args.method,
        "objective_mw": attack_objective(dev, row, direction),
        "optimal": verify_optimality(dev, row, lo, hi, direction),
    }
    if args.out_dir:
        _write_json(args, "attack.json", summary)
    else:
        print(json.dumps(summary), file=sys.stderr)
    return 0


def _alpha_min_arg(args):
    if args.alpha_min is not None:
        return args.alpha_min
    return AlphaMinConfig(args.alpha_min_mode, args.alpha_min_step, args.deviation_threshold, args.alpha_cap)


def _build_profiles(args, case, ptdf):
    targets = _targets(args.targets)
    if not targets:
        raise DomainError("no target branches given")
    return [
        build_asset_profile(case, ptdf, t, args.cutoff, _alpha_min_arg(args), alpha_cap=args.alpha_cap)
        for t in targets
    ]


def _profile_config(args):
    return {k: getattr(args, k) for k in ("case", "targets", "cutoff", "alpha_cap", "alpha_min",
                                          "alpha_min_mode", "alpha_min_step", "deviation_threshold")}


def cmd_profile(args):
    case = _load_case(args)
    profiles = _build_profiles(args, case, _ptdf(args, case))
    with _open_out(args, "profiles.json") as fh:
        dump_profiles(profiles, fh, _profile_config(args))
    return 0


def cmd_detect(args):
    case = _load_case(args)
    if args.profiles:
        with open(args.profiles) as fh:
            profiles = load_profiles(fh)
    else:
        profiles = _build_profiles(args, case, _ptdf(args, case))
    for p in profiles:
        if p.ptdf_row.shape[0] != case.n_buses:
            raise DomainError(f"profile for branch {p.target_branch} does not match the case")
    forecast = _read_bus_csv(args.forecast, "load_mw", case) if args.forecast else case.loads
    if args.deviations:
        if args.estimated:
            raise DomainError("give either --estimated or --deviations, not both")
        estimated = forecast + _read_bus_csv(args.deviations, "delta_mw", case)
    elif args.estimated:
        estimated = _read_bus_csv(args.estimated, "load_mw", case)
    else:
        raise DomainError("detect needs --estimated or --deviations")
    report = detect(estimated, forecast, profiles, args.decision_threshold)
    _write_json(args, "detection.json", report.to_dict())
    return 0


def cmd_bdd_demo(args):
    case = _load_case(args)
    deltas = _read_bus_csv(args.deviations, "delta_mw", case)
    model = build_measurement_model(case)
    sol = solve_dcopf(case, _ptdf(args, case))
    system = build_susceptance(case)
    theta = system.solve_angles(sol.injections(case) / case.base_mva)
    rng = np.random.default_rng(args.seed)
    z = model.h_matrix @ theta + rng.normal(0.0, args.noise_sigma, model.n_measurements)
    base = estimate_states(model, z)
    attacked = estimate_states(model, z + craft_bypass(model, state_error_for_deviation(model, deltas)))
    doc = {
        "base_residual": base.residual_norm,
        "attacked_residual": attacked.residual_norm,
        "difference": attacked.residual_norm - base.residual_norm,
        "noise_sigma": args.noise_sigma,
        "seed": args.seed,
    }
    _write_json(args, "bdd.json", doc)
    return 0


def cmd_simulate(args):
    case = _load_case(args)
    ptdf = _ptdf(args, case)
    profiles = _build_profiles(args, case, ptdf)
    if len(profiles) != 1:
        raise DomainError("simulate takes exactly one target")
    profile = profiles[0]
    if not profile.attackable:
        raise DomainError(f"branch {profile.target_branch} is not attackable up to alpha_cap {args.alpha_cap}")
    zeroed = args.zeroed_count if args.zeroed_count is not None else default_zeroed_count(profile.tnsb)
    kinds = ["gaussian", "cauchy"] if args.noise_kind == "both" else [args.noise_kind]
    records = []
    for j, kind in enumerate(kinds):
        batch = monte_carlo(case, ptdf, profile, args.attacks if j == 0 else 0, args.noise, kind,
                            args.seed + j, zeroed_count=zeroed, alpha_cap=args.alpha_cap,
                            noise_alpha=args.noise_alpha, decision_threshold=args.decision_threshold,
                            pipeline=not args.no_pipeline)
        offset = len(records)
        records.extend((offset + n, r) for n, r in enumerate(batch))
    meta = {
        "format": "lrguard-simulate",
        "rng": RNG_ALGORITHM,
        "seed": args.seed,
        "noise_seeds": {k: args.seed + j for j, k in enumerate(kinds)},
        "target": profile.target_branch,
        "alpha_min": profile.alpha_min,
        "tnsb": profile.tnsb,
        "zeroed_count": zeroed,
        "config": _resolved(args),
    }
    with _open_out(args, "simulate.csv") as fh:
        fh.write("# " + json.dumps(meta) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SIM_COLUMNS)
        for idx, r in records:
            alpha = r.alpha if isinstance(r.alpha, str) else _fmt(r.alpha)
            w.writerow([idx, r.kind, alpha, r.npdsb, r.tnsb, _fmt(r.ratio), int(r.flagged),
                        _fmt(r.cyber_flow), _fmt(r.physical_flow), _fmt(r.overflow)])
    failures = sum(r.failed for _, r in records)
    if failures:
        log.warning("%d scenarios had an infeasible dispatch (flow columns left empty)", failures)
    return 0


def read_simulation(fh):
    """Parse a simulate CSV; returns ``(metadata, rows)``."""
    meta = {}
    lines = []
    for line in fh:
        if line.startswith("#"):
            try:
                meta = json.loads(line[1:])
            except json.JSONDecodeError as exc:
                raise DomainError(f"bad metadata header: {exc}") from None
        elif line.strip():
            lines.append(line)
    if not lines:
        raise DomainError("simulate CSV has no header row")
    reader = csv.DictReader(io.StringIO("".join(lines)))
    if reader.fieldnames != SIM_COLUMNS:
        raise DomainError(f"unexpected columns {reader.fieldnames}")
    rows = []
    for n, row in enumerate(reader, start=2):
        try:
            rows.append({
                "index": int(row["index"]),
                "kind": row["kind"],
                "alpha": row["alpha"] if row["alpha"] == "exogenous" else float(row["alpha"]),
                "npdsb": int(row["npdsb"]),
                "tnsb": int(row["tnsb"]),
                "ratio": float(row["ratio"]),
                "flagged": bool(int(row["flagged"])),
                "overflow_mw": float(row["overflow_mw"]) if row["overflow_mw"] else None,
            })
        except (TypeError, ValueError):
            raise DomainError(f"malformed row {n}: {row}") from None
    return meta, rows


def summarize(meta, rows) -> dict:
    kinds = sorted({r["kind"] for r in rows})
    per_kind = {}
    for kind in kinds:
        sel = [r for r in rows if r["kind"] == kind]
        over = [r["overflow_mw"] for r in sel if r["overflow_mw"] is not None]
        per_kind[kind] = {
            "count": len(sel),
            "flagged": sum(r["flagged"] for r in sel),
            "flag_rate": sum(r["flagged"] for r in sel) / len(sel),
            "ratio_min": min(r["ratio"] for r in sel),
            "ratio_max": max(r["ratio"] for r in sel),
            "overflow_count": sum(1 for v in over if v > 0),
            "overflow_max_mw": max(over) if over else None,
            "overflow_mean_mw": float(np.mean(over)) if over else None,
            "pipeline_failures": len(sel) - len(over),
        }
    cfg = meta.get("config", {})
    doc = {
        "scenarios": len(rows),
        "kinds": per_kind,
        "thresholds": {
            "target": meta.get("target"),
            "alpha_min": meta.get("alpha_min"),
            "tnsb": meta.get("tnsb"),
            "cutoff": cfg.get("cutoff"),
            "decision_threshold": cfg.get("decision_threshold"),
            "alpha_cap": cfg.get("alpha_cap"),
            "zeroed_count": meta.get("zeroed_count"),
        },
    }
    if not rows:
        doc["warning"] = "empty batch: no scenarios to summarize"
    return doc


def cmd_report(args):
    if not Path(args.input).exists():
        raise DomainError(f"file not found: {args.input}")
    with open(args.input) as fh:
        meta, rows = read_simulation(fh)
    doc = summarize(meta, rows)
    if not rows:
        print(f"lrguard: warning: {doc['warning']}", file=sys.stderr)
    _write_json(args, "report.json", doc)
    return 0


# ---------------------------------------------------------------------------
# parser


def _case_opts(p):
    p.add_argument("--case", required=True, help="case file, or builtin:case3|case6|sep60")
    p.add_argument("--reference", type=int, help="reference bus id (default: the case's)")
    p.add_argument("--rating-scale", type=_positive, default=1.0, help="multiply every rating")


def _profile_opts(p, targets_required=True):
    p.add_argument("--targets", required=targets_required, help="comma separated branch ids or from-to labels")
    p.add_argument("--cutoff", type=_nonneg, default=DEFAULT_CUTOFF)
    p.add_argument("--alpha-cap", type=_unit, default=ALPHA_CAP)
    p.add_argument("--alpha-min", type=_unit, default=None, help="fixed value; skips the search")
    p.add_argument("--alpha-min-mode", choices=("pipeline", "deviation"), default="pipeline")
    p.add_argument("--alpha-min-step", type=_positive, default=0.0025)
    p.add_argument("--deviation-threshold", type=_nonneg, default=0.0, help="MW, deviation mode")


def _decision_opt(p):
    p.add_argument("--decision-threshold", type=_fraction, default=DEFAULT_DECISION)


def _typed(check, msg):
    def conv(text):
        try:
            v = float(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{text!r} is not a number") from None
        if not check(v):
            raise argparse.ArgumentTypeError(f"{text} {msg}")
        return v

    return conv


_positive = _typed(lambda v: v > 0, "must be positive")
_nonneg = _typed(lambda v: v >= 0, "must be nonnegative")
_unit = _typed(lambda v: 0 < v <= 1, "must lie in (0, 1]")
_fraction = _typed(lambda v: 0 <= v < 1, "must lie in [0, 1)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lrguard", description="Load-redistribution attack analysis and detection.")
    ap.add_argument("--config", help="key = value file; command-line flags take precedence")
    ap.add_argument("--out-dir", help="write outputs as files here instead of stdout")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("convert", help="MATPOWER case file -> grid case file")
    p.add_argument("input")
    p.add_argument("--rating-scale", type=_positive, default=1.0)
    p.add_argument("--unlimited-rating", type=_positive, default=9999.0, help="MW used for rateA = 0")
    p.add_argument("--keep-negative-loads", action="store_true")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("validate", help="check a case for structural problems")
    _case_opts(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("ptdf", help="PTDF rows as CSV")
    _case_opts(p)
    p.add_argument("--branches", help="comma separated subset (default: all)")
    p.set_defaults(func=cmd_ptdf)

    p = sub.add_parser("dcopf", help="economic dispatch; dispatch CSV, cost on stderr")
    _case_opts(p)
    p.add_argument("--loads", help="CSV bus,load_mw (default: case loads)")
    p.set_defaults(func=cmd_dcopf)

    p = sub.add_parser("attack", help="best load-redistribution attack on one branch")
    _case_opts(p)
    p.add_argument("--target", required=True)
    p.add_argument("--alpha", type=_unit, default=ALPHA_CAP)
    p.add_argument("--alpha-cap", type=_unit, default=ALPHA_CAP)
    p.add_argument("--direction", choices=("auto", "1", "-1"), default="auto")
    p.add_argument("--method", choices=("greedy", "lp"), default="greedy")
    p.add_argument("--loads", help="CSV bus,load_mw (default: case loads)")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("profile", help="build and cache detection profiles (JSON)")
    _case_opts(p)
    _profile_opts(p)
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("detect", help="run the detector on one interval")
    _case_opts(p)
    p.add_argument("--profiles", help="profile cache from 'profile' (else built from --targets)")
    _profile_opts(p, targets_required=False)
    _decision_opt(p)
    p.add_argument("--estimated", help="CSV bus,load_mw of estimated loads")
    p.add_argument("--deviations", help="CSV bus,delta_mw (estimated = forecast + deviations)")
    p.add_argument("--forecast", help="CSV bus,load_mw (default: case loads)")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("bdd-demo", help="residual before and after a stealthy injection")
    _case_opts(p)
    p.add_argument("--deviations", required=True, help="CSV bus,delta_mw")
    p.add_argument("--noise-sigma", type=_nonneg, default=0.5, help="MW")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bdd_demo)

    p = sub.add_parser("simulate", help="Monte-Carlo attacks and noise (CSV)")
    _case_opts(p)
    _profile_opts(p)
    _decision_opt(p)
    p.add_argument("--attacks", type=int, default=500)
    p.add_argument("--noise", type=int, default=500, help="noise vectors per kind")
    p.add_argument("--noise-kind", choices=("gaussian", "cauchy", "both"), default="both")
    p.add_argument("--noise-alpha", type=_unit, default=ALPHA_CAP)
    p.add_argument("--zeroed-count", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-pipeline", action="store_true", help="skip dispatch and flows")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="summarize a simulate CSV")
    p.add_argument("input")
    p.set_defaults(func=cmd_report)
    return ap


def read_config(path) -> list[str]:
    """Turn a ``key = value`` file into long-option argv tokens."""
    out = []
    for n, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        flag = "--" + key.replace("_", "-")
        if value.lower() in ("true", "yes", "on"):
            out.append(flag)
        elif value.lower() in ("false", "no", "off"):
            continue
        else:
            out.extend([flag, value])
    return out


def _resolved(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config", "verbose")}


def _split_global(argv):
    """Pull --config out of argv so its contents can be spliced in after the subcommand."""
    argv = list(argv)
    config = None
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            config = argv[i + 1]
            del argv[i : i + 2]
            break
        if tok.startswith("--config="):
            config = tok.split("=", 1)[1]
            del argv[i]
            break
    return argv, config


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    argv, config = _split_global(argv)
    if config is not None:
        try:
            extra = read_config(config)
        except (OSError, ValueError) as exc:
            print(f"lrguard: error: config: {exc}", file=sys.stderr)
            return 2
        # config values go right after the subcommand so later flags override them
        cmd_pos = next((i for i, t in enumerate(argv) if t in parser._subparsers._group_actions[0].choices), None)
        if cmd_pos is None:
            parser.print_usage(sys.stderr)
            return 2
        argv = argv[: cmd_pos + 1] + extra + argv[cmd_pos + 1 :]
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    args.config = config
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="lrguard: %(levelname)s: %(message)s")
    print("# config " + json.dumps({"command": args.command, **_resolved(args)}), file=sys.stderr)
    try:
        return args.func(args)
    except (DomainError, CaseFormatError, InfeasibleDispatchError, DisconnectedNetworkError,
            ImbalanceError, KeyError, ValueError, OSError, np.linalg.LinAlgError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"lrguard: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

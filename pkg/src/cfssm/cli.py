"""Command-line front end: ``cfssm run | report | verify``.

Exit codes: 0 success, 1 check or I/O failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path

from .bench import SUMMARY_FIELDS, MethodId, RunResult, SummaryRow, monte_carlo
from .core import CFSSMError, InvalidParameterError
from .models import SCENARIO_NAMES, UnknownScenarioError, build_scenario
from .verify import PROPERTIES, run_properties

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

DEFAULT_SEED = 0

OVERRIDE_FLAGS = {
    "delta": float, "window": int, "n_particles": int, "horizon": int,
    "sigma_w2": float, "sigma_v2": float, "sigma0_2": float, "change_time": int,
}

# Row labels and metric visibility mirroring the published results table.
_METHOD_LABELS = {
    "fixed:lin": "Fixed LIN", "fixed:nl": "Fixed NL",
    "fixed:quad": "Fixed-QUAD", "fixed:sat": "Fixed-SAT",
    "imm": "IMM", "cf": "CF",
}


class UsageError(Exception):
    pass


def fmt(x: float) -> str:
    """17 significant digits: round-trips every double exactly."""
    return format(float(x), ".17g")


def resolve_seed(seed: int | None) -> int:
    if seed is not None:
        return seed
    env = os.environ.get("CF_SSM_SEED")
    if env:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"CF_SSM_SEED is not an integer: {env!r}") from None
    return DEFAULT_SEED


def load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise UsageError("config file must hold a JSON object")
    return cfg


def merged_settings(args: argparse.Namespace) -> dict:
    """Built-in scenario < config file < command-line flags."""
    cfg = load_config(getattr(args, "config", None))
    out = dict(cfg)
    for key in ("scenario", "methods", "runs", "seed", "out", "parallelism", *OVERRIDE_FLAGS):
        val = getattr(args, key, None)
        if val is not None:
            out[key] = val
    return out


def write_summary(path: Path, rows: list[SummaryRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_FIELDS)
        for r in rows:
            w.writerow([r.experiment, r.method, r.runs,
                        fmt(r.rmse_mean), fmt(r.rmse_se),
                        fmt(r.phi_bar_mean), fmt(r.phi_bar_se),
                        fmt(r.switch_rate_mean), fmt(r.switch_rate_se), r.seed])


def read_summary(path: Path) -> list[SummaryRow]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != SUMMARY_FIELDS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        for rec in reader:
            rows.append(SummaryRow(
                rec["experiment"], rec["method"], int(rec["runs"]),
                *(float(rec[k]) for k in SUMMARY_FIELDS[3:9]), int(rec["seed"])))
    return rows


def trace_header(dim: int, n_structures: int) -> list[str]:
    return (["t"] + [f"z_true_{i + 1}" for i in range(dim)]
            + [f"z_hat_{i + 1}" for i in range(dim)] + ["s_t"]
            + [f"phi_s{k}" for k in range(n_structures)] + ["loglik", "ess"])


def write_trace(path: Path, result: RunResult) -> None:
    tr = result.trace
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(trace_header(tr.z_true.shape[1], tr.phi.shape[1]))
        for k in range(len(tr)):
            w.writerow([k + 1, *map(fmt, tr.z_true[k]), *map(fmt, tr.z_hat[k]), int(tr.s[k]),
                        *map(fmt, tr.phi[k]), fmt(tr.loglik[k]), fmt(tr.ess[k])])


def format_table(rows: list[SummaryRow]) -> str:
    """Results table keyed by (experiment, method); '--' where the table shows none."""
    lines = [f"{'Exp.':<8}{'Method':<12}{'RMSE':>10}{'Phi_bar':>10}{'rho_sw':>10}"]
    last = None
    for r in rows:
        exp = r.experiment.replace("exp", "").replace("_", ".")
        label = _METHOD_LABELS.get(r.method, r.method)
        rmse_s = f"{r.rmse_mean:.3f}"
        phi_s = "--" if r.method == "imm" or math.isnan(r.phi_bar_mean) else f"{r.phi_bar_mean:.3f}"
        sw_s = f"{r.switch_rate_mean:.3f}" if r.method == "cf" else "--"
        lines.append(f"{exp if exp != last else '':<8}{label:<12}{rmse_s:>10}{phi_s:>10}{sw_s:>10}")
        last = exp
    return "\n".join(lines)


def _scenario(settings: dict, name: str, sweep: bool = False):
    overrides = {k: settings.get(k) for k in OVERRIDE_FLAGS}
    if sweep and name != "exp4_2":
        overrides.pop("change_time")  # only one scenario has a change point
    try:
        return build_scenario(name, **overrides)
    except UnknownScenarioError as exc:
        raise UsageError(str(exc)) from None
    except InvalidParameterError as exc:
        raise UsageError(f"invalid override: {exc}") from None


def cmd_run(args: argparse.Namespace) -> int:
    settings = merged_settings(args)
    name = settings.get("scenario")
    if not name:
        raise UsageError("--scenario is required")
    names = list(SCENARIO_NAMES) if name == "all" else [name]
    scenarios = [_scenario(settings, n, sweep=len(names) > 1) for n in names]
    seed = resolve_seed(settings.get("seed"))
    runs = settings.get("runs")
    if runs is not None and runs < 1:
        raise UsageError("--runs must be >= 1")
    parallelism = settings.get("parallelism") or 1
    methods = settings.get("methods")
    if isinstance(methods, str):
        methods = [m for m in methods.split(",") if m]
    out_root = Path(settings.get("out") or "results")
    all_rows = []
    for sc in scenarios:
        try:
            mids = [MethodId.parse(m) for m in methods] if methods else None
            for m in mids or ():
                if m.kind == "fixed" and m.structure not in sc.bank.labels:
                    raise UsageError(f"{sc.name}: structure {m.structure!r} not in bank {sc.bank.labels}")
                if m.kind == "imm" and sc.imm_config is None:
                    raise UsageError(f"{sc.name}: no IMM baseline for this scenario")
        except InvalidParameterError as exc:
            raise UsageError(str(exc)) from None
        out = out_root / sc.name if len(scenarios) > 1 else out_root
        try:
            out.mkdir(parents=True, exist_ok=True)
            probe = out / ".write_test"
            probe.touch()
            probe.unlink()
        except OSError as exc:
            print(f"error: output directory {out} is not writable: {exc}", file=sys.stderr)
            return EXIT_FAIL
        try:
            rows, results = monte_carlo(sc, mids, runs, seed, parallelism)
        except CFSSMError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_FAIL
        try:
            write_summary(out / "summary.csv", rows)
            for r in results:
                write_trace(out / f"trace_{r.method.slug}_{r.run_index}.csv", r)
        except OSError as exc:
            print(f"error: writing results failed: {exc}", file=sys.stderr)
            return EXIT_FAIL
        all_rows.extend(rows)
    print(format_table(all_rows))
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    root = Path(args.out or "results")
    files = sorted(root.rglob("summary.csv")) if root.is_dir() else []
    if not files:
        print(f"error: no summary.csv under {root}", file=sys.stderr)
        return EXIT_FAIL
    rows = []
    try:
        for f in files:
            rows.extend(read_summary(f))
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    order = {n: i for i, n in enumerate(SCENARIO_NAMES)}
    rows.sort(key=lambda r: order.get(r.experiment, len(order)))
    print(format_table(rows))
    if args.merged:
        write_summary(Path(args.merged), rows)
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    settings = merged_settings(args)
    delta = settings.get("delta", 1.0)
    if delta is None or not delta >= 0:
        raise UsageError(f"hysteresis margin must be >= 0, got {delta}")
    seed = resolve_seed(settings.get("seed"))
    names = args.property or None
    results = run_properties(names, seed=seed, delta=delta)
    for r in results:
        print(f"[{'PASS' if r.passed else 'FAIL'}] {r.name}: {r.detail}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cfssm", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="subcommand", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int, help="master seed (fallback: $CF_SSM_SEED, then 0)")
        sp.add_argument("--config", help="JSON file with default settings")
        sp.add_argument("--delta", type=float, help="hysteresis margin override")

    run = sub.add_parser("run", help="run an experiment and write CSV results")
    common(run)
    run.add_argument("--scenario", help=f"one of {', '.join(SCENARIO_NAMES)} or 'all'")
    run.add_argument("--methods", help="comma-separated: cf, imm, fixed:<label>")
    run.add_argument("--runs", type=int, help="Monte-Carlo runs (default per scenario)")
    run.add_argument("--out", help="output directory (default: results)")
    run.add_argument("--parallelism", type=int, help="worker processes")
    run.add_argument("--window", type=int)
    run.add_argument("--n-particles", dest="n_particles", type=int)
    run.add_argument("--horizon", type=int)
    run.add_argument("--sigma-w2", dest="sigma_w2", type=float)
    run.add_argument("--sigma-v2", dest="sigma_v2", type=float)
    run.add_argument("--sigma0-2", dest="sigma0_2", type=float)
    run.add_argument("--change-time", dest="change_time", type=int,
                     help="observation change step (exp4_2 only; default mid-horizon)")
    run.set_defaults(func=cmd_run)

    rep = sub.add_parser("report", help="merge summary.csv files into one table")
    rep.add_argument("--out", help="directory searched recursively for summary.csv")
    rep.add_argument("--merged", help="also write the merged table as CSV")
    rep.set_defaults(func=cmd_report)

    ver = sub.add_parser("verify", help="run the property suite")
    common(ver)
    ver.add_argument("--property", action="append", choices=sorted(PROPERTIES),
                     help="run only this property (repeatable)")
    ver.set_defaults(func=cmd_verify)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

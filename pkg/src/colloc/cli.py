"""Command-line entry point.

    colloc run --config cfg.json [--seed S] [--out DIR] [--algos ekf,dcl,ccl]
    colloc montecarlo --config cfg.json --runs N [--seed S] [--out DIR] [--jobs P]
    colloc table [--config overrides.json] --runs N [--seed S] [--out DIR] [--jobs P]

Exit status: 0 success, 1 usage or configuration error, 2 when any filter
run was flagged (numerical failure, non-PSD covariance or divergence).
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import engine
from .scenarios import KINDS, ConfigError, ScenarioConfig, default_scenario

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2
SEED_ENV = "COLLOC_SEED"


class UsageError(Exception):
    """Bad command line or configuration; reported with exit status 1."""


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; 2 is reserved for numerical failure here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="colloc", description="Collaborative localization simulator (EKF / DCL / CCL).")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required):
        sp.add_argument("--config", type=Path, required=config_required,
                        help="JSON scenario config; absent keys take defaults")
        sp.add_argument("--seed", type=int, default=0,
                        help=f"base seed (overridden by ${SEED_ENV})")
        sp.add_argument("--out", type=Path, default=None, help="output directory")
        sp.add_argument("--algos", default="ekf,dcl,ccl",
                        help="comma-separated subset of ekf,dcl,ccl")

    run = sub.add_parser("run", help="simulate one seed and write a per-tick trace")
    common(run, True)

    mc = sub.add_parser("montecarlo", help="Monte-Carlo batch for one scenario")
    common(mc, True)
    mc.add_argument("--runs", type=int, default=100)
    mc.add_argument("--jobs", type=int, default=1, help="worker processes")

    tb = sub.add_parser("table", help="all three scenarios, summary table")
    common(tb, False)
    tb.add_argument("--runs", type=int, default=100)
    tb.add_argument("--jobs", type=int, default=1, help="worker processes")
    return p


def load_config(path: Path | None, allow_kind: bool = True) -> dict:
    if path is None:
        return {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"config: cannot read {path}: {exc.strerror or exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"config: {path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise UsageError("config: top level must be a JSON object")
    if not allow_kind and "kind" in data:
        raise UsageError("kind: not allowed in a table config (all scenarios are run)")
    return data


def resolve_seed(seed: int) -> int:
    env = os.environ.get(SEED_ENV)
    if env is not None and env.strip():
        try:
            seed = int(env)
        except ValueError:
            raise UsageError(f"{SEED_ENV}: not an integer: {env!r}") from None
    if not 0 <= seed < 2 ** 63:
        raise UsageError(f"seed: must be in [0, 2**63), got {seed}")
    return seed


def _build(data: dict) -> ScenarioConfig:
    try:
        return ScenarioConfig.from_dict(data)
    except ConfigError as exc:
        raise UsageError(f"config field {exc}") from None


def _algos(text: str) -> tuple[str, ...]:
    try:
        return engine.parse_algos(text)
    except ValueError as exc:
        raise UsageError(f"--algos: {exc}") from None


def _positive(name: str, v: int) -> int:
    if v < 1:
        raise UsageError(f"{name}: must be >= 1, got {v}")
    return v


def _write_config(out: Path, cfgs: dict[str, ScenarioConfig]) -> None:
    for tag, cfg in cfgs.items():
        path = out / (f"config_{tag}.json" if len(cfgs) > 1 else "config.json")
        path.write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_run(args) -> int:
    cfg = _build(load_config(args.config))
    algos = _algos(args.algos)
    seed = resolve_seed(args.seed)
    out = args.out or Path("colloc_out")
    sim = engine.simulate(cfg, seed, algos)
    result = engine.reduce_simulation(sim, run_id=0)
    out.mkdir(parents=True, exist_ok=True)
    _write_config(out, {cfg.kind: cfg})
    engine.write_trace_csv(out / "trace.csv", sim)
    engine.write_results_csv(out / "results.csv", [result])
    for a in result.algorithms:
        status = result.failed[a] or "ok"
        print(f"{a:>4}: rms_pos {result.mean_rms_pos(a):.4f} m  [{status}]")
    return EXIT_NUMERICAL if result.any_failed else EXIT_OK


def cmd_montecarlo(args) -> int:
    cfg = _build(load_config(args.config))
    algos = _algos(args.algos)
    seed = resolve_seed(args.seed)
    runs = _positive("--runs", args.runs)
    jobs = _positive("--jobs", args.jobs)
    out = args.out or Path("colloc_out")
    summary, results = engine.run_monte_carlo(cfg, runs, seed, jobs, algos)
    out.mkdir(parents=True, exist_ok=True)
    _write_config(out, {cfg.kind: cfg})
    engine.write_results_csv(out / "results.csv", results)
    rows = engine.summarize_table([summary])
    engine.write_summary_csv(out / "summary.csv", rows)
    engine.write_stats_csv(out / "stats.csv", summary)
    engine.write_histogram_csv(out / "histogram.csv", summary)
    print(engine.format_table(rows))
    if summary.n_failed:
        print(f"{summary.n_failed} flagged filter runs", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_table(args) -> int:
    overrides = load_config(args.config, allow_kind=False)
    cfgs = {k: _build({**_tunnel_safe(k, overrides), "kind": k}) for k in KINDS}
    algos = _algos(args.algos)
    seed = resolve_seed(args.seed)
    runs = _positive("--runs", args.runs)
    jobs = _positive("--jobs", args.jobs)
    summaries = [engine.run_monte_carlo(cfg, runs, seed, jobs, algos)[0] for cfg in cfgs.values()]
    rows = engine.summarize_table(summaries)
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        _write_config(args.out, cfgs)
        engine.write_summary_csv(args.out / "summary.csv", rows)
    print(engine.format_table(rows))
    failed = sum(s.n_failed for s in summaries)
    if failed:
        print(f"{failed} flagged filter runs", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def _tunnel_safe(kind: str, overrides: dict) -> dict:
    # a shared override file may enable GPS; the tunnel keeps it off
    if kind == "tunnel" and "gps_enabled" in overrides:
        return {k: v for k, v in overrides.items() if k != "gps_enabled"}
    return overrides


COMMANDS = {"run": cmd_run, "montecarlo": cmd_montecarlo, "table": cmd_table}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"colloc: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

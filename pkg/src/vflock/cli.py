"""Command-line front end: campaign execution, traces, CSV summaries, SVG.

Subcommands:
  run      execute a campaign config, writing per-entry JSON reports and a
           summary.csv into the output directory
  samples  print the Chernoff-Hoeffding sample count for an error budget
  render   draw one step of a JSONL trace as an SVG snapshot
  replay   re-execute a single seed of a campaign entry with tracing

All randomness flows from config seeds; reruns produce byte-identical
reports (timing is never serialized).
"""

from __future__ import annotations

import argparse
import csv
import functools
import json
import sys
from dataclasses import replace
from pathlib import Path

from .config import Campaign, CampaignEntry, ConfigError, parse_config
from .games import GameConfig, RemoveBirdsAttack, run_game
from .render import load_trace, render_snapshot
from .smc import SmcPlan, SmcRunError, derive_seed, estimate, required_samples

SUMMARY_COLUMNS = [
    "name",
    "game",
    "B",
    "R",
    "M",
    "h_max",
    "m",
    "samples",
    "win_rate",
    "mean_steps_to_v",
    "mean_avg_horizon",
]


def _campaign_runner(config: GameConfig, traced_seeds: frozenset, seed: int):
    """Top-level runner so the SMC worker pool can pickle it."""
    run_config = replace(config, seed=seed, controller=None)
    return run_game(run_config, collect_trace=seed in traced_seeds)


def _summary_row(entry: CampaignEntry, report) -> dict:
    config = entry.game
    attack = config.attack
    if isinstance(attack, RemoveBirdsAttack):
        r_value, m_value = attack.removal_count, ""
    else:
        r_value, m_value = attack.count, attack.magnitude
    return {
        "name": entry.name,
        "game": config.game_name,
        "B": config.bird_count,
        "R": r_value,
        "M": m_value,
        "h_max": config.h_max,
        "m": config.m,
        "samples": report.samples,
        "win_rate": report.estimate,
        "mean_steps_to_v": "" if report.mean_steps_to_v is None else report.mean_steps_to_v,
        "mean_avg_horizon": "" if report.mean_avg_horizon is None else report.mean_avg_horizon,
    }


def _append_summary(path: Path, rows: list[dict]) -> None:
    fresh = not path.exists()
    with open(path, "a", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=SUMMARY_COLUMNS)
        if fresh:
            writer.writeheader()
        for row in rows:
            writer.writerow(row)


def _write_trace(path: Path, trace: list[dict]) -> None:
    with open(path, "w") as handle:
        for record in trace:
            handle.write(json.dumps(record, sort_keys=True) + "\n")


def run_campaign(
    campaign: Campaign,
    jobs: int | None = None,
    trace_runs: int = 0,
    samples_override: int | None = None,
    seed_override: int | None = None,
) -> int:
    """Execute every campaign entry; returns the process exit status."""
    out_dir = Path(campaign.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for entry in campaign.entries:
        plan = entry.plan
        if samples_override is not None:
            plan = replace(plan, sample_count=samples_override)
        if seed_override is not None:
            plan = replace(plan, master_seed=seed_override)
        if jobs is not None:
            plan = replace(plan, parallelism=jobs)
        traced = frozenset(
            derive_seed(plan.master_seed, i) for i in range(min(trace_runs, plan.samples))
        )
        runner = functools.partial(_campaign_runner, entry.game, traced)
        try:
            report = estimate(runner, plan)
        except SmcRunError as exc:
            print(f"error: entry {entry.name!r}: {exc}", file=sys.stderr)
            return 1
        for i, record in enumerate(report.run_records):
            if record.trace is not None:
                _write_trace(out_dir / f"{entry.name}-run{i}.jsonl", record.trace)
        report_path = out_dir / f"{entry.name}-report.json"
        payload = {"name": entry.name, "game": entry.game.game_name, **report.to_json_dict()}
        report_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        rows.append(_summary_row(entry, report))
        print(
            f"{entry.name}: win_rate={report.estimate:.3f} "
            f"({report.wins}/{report.samples} runs)"
        )
    _append_summary(out_dir / "summary.csv", rows)
    return 0


def _cmd_run(args) -> int:
    try:
        campaign = parse_config(Path(args.config).read_text())
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.out:
        campaign = replace(campaign, output_dir=args.out)
    return run_campaign(
        campaign,
        jobs=args.jobs,
        trace_runs=args.trace if args.trace is not None else 0,
        samples_override=args.samples,
        seed_override=args.seed,
    )


def _cmd_samples(args) -> int:
    print(required_samples(args.epsilon, args.delta))
    return 0


def _cmd_render(args) -> int:
    trace = load_trace(args.trace)
    try:
        svg = render_snapshot(trace, args.step, upwash_grid=args.upwash_grid)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    Path(args.out).write_text(svg)
    return 0


def _cmd_replay(args) -> int:
    try:
        campaign = parse_config(Path(args.config).read_text())
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    by_name = {entry.name: entry for entry in campaign.entries}
    if args.name is None and len(campaign.entries) == 1:
        entry = campaign.entries[0]
    elif args.name in by_name:
        entry = by_name[args.name]
    else:
        print(
            f"error: entry {args.name!r} not found; have {sorted(by_name)}", file=sys.stderr
        )
        return 2
    out_dir = Path(args.out or campaign.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    config = replace(entry.game, seed=args.seed, controller=None)
    record = run_game(config, collect_trace=True)
    trace_path = out_dir / f"{entry.name}-seed{args.seed}.jsonl"
    _write_trace(trace_path, record.trace)
    print(
        f"{entry.name} seed {args.seed}: won={record.won} "
        f"steps_to_v={record.steps_to_v} trace={trace_path}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vflock",
        description="V-formation flocking games with adaptive-horizon MPC",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a campaign config")
    p_run.add_argument("--config", required=True, help="campaign JSON path")
    p_run.add_argument("--out", help="output directory (overrides config)")
    p_run.add_argument("--jobs", type=int, help="parallel workers for game runs")
    p_run.add_argument(
        "--trace",
        type=int,
        nargs="?",
        const=5,
        default=None,
        help="write JSONL traces for the first K runs (default 5)",
    )
    p_run.add_argument("--samples", type=int, help="override the sample count")
    p_run.add_argument("--seed", type=int, help="override the master seed")
    p_run.set_defaults(func=_cmd_run)

    p_samples = sub.add_parser("samples", help="print the required sample count")
    p_samples.add_argument("--epsilon", type=float, default=0.1)
    p_samples.add_argument("--delta", type=float, default=0.01)
    p_samples.set_defaults(func=_cmd_samples)

    p_render = sub.add_parser("render", help="render one trace step as SVG")
    p_render.add_argument("--trace", required=True, help="JSONL trace path")
    p_render.add_argument("--step", type=int, required=True)
    p_render.add_argument("--out", required=True, help="SVG output path")
    p_render.add_argument("--upwash-grid", action="store_true")
    p_render.set_defaults(func=_cmd_render)

    p_replay = sub.add_parser("replay", help="re-run one seed with tracing")
    p_replay.add_argument("--config", required=True)
    p_replay.add_argument("--name", help="campaign entry name")
    p_replay.add_argument("--seed", type=int, required=True)
    p_replay.add_argument("--out", help="output directory")
    p_replay.set_defaults(func=_cmd_replay)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

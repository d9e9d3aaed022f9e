"""Batch command-line entry point.

Subcommands: ``synth`` (dataset generation), ``train`` (per-seed training
runs), ``eval`` (greedy rollouts plus metric reports), ``sweep`` (static
capacitance sweep), ``report`` (re-emit reports from logged CSVs).

Exit codes: 0 success, 2 argument/validation, 3 training divergence,
4 snapshot/env incompatibility, 5 I/O failure. ``AEF_LOG`` sets verbosity.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .agents import (
    DimensionMismatchError,
    TrainingDivergenceError,
    load_snapshot,
    run_policy,
    save_snapshot,
    train,
)
from .config import (
    ConfigError,
    RunConfig,
    SyntheticSource,
    dump_run_config,
    load_run_config,
    run_config_from_dict,
    run_config_to_dict,
)
from .env import AefEnv
from .metrics import (
    InsertionLossSeries,
    MetricReport,
    RewardStats,
    emit_report,
    reward_stats,
    rmse,
)
from .circuit import FrequencyGrid
from .signal import (
    DatasetFormatError,
    SyntheticProfile,
    generate_synthetic_dataset,
    load_dataset,
    save_dataset,
)

log = logging.getLogger("aef")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_DIVERGENCE = 3
EXIT_INCOMPATIBLE = 4
EXIT_IO = 5


def _parse_range(text: str, what: str) -> tuple[float, float]:
    try:
        lo, hi = text.split(":")
        return float(lo), float(hi)
    except ValueError:
        raise ConfigError(f"{what} must look like LOW:HIGH, got {text!r}") from None


def _parse_seeds(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(s) for s in text.split(",") if s)
    except ValueError:
        raise ConfigError(f"seeds must be a comma-separated integer list, got {text!r}") from None


def cmd_synth(args) -> int:
    band = _parse_range(args.band, "--band")
    amp = _parse_range(args.amp, "--amp")
    profile = SyntheticProfile(
        band_low=band[0], band_high=band[1], line_count=args.lines,
        amp_low_dbua=amp[0], amp_high_dbua=amp[1],
    )
    dataset = generate_synthetic_dataset(profile, args.seed, name=args.name)
    save_dataset(dataset, args.out)
    print(f"wrote {len(dataset)} lines in [{band[0]:g}, {band[1]:g}] Hz to {args.out}")
    return EXIT_OK


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    from dataclasses import replace

    if getattr(args, "agent", None):
        cfg = replace(cfg, agent_kind=args.agent, hyper=None)
    if getattr(args, "seed", None):
        cfg = replace(cfg, seeds=_parse_seeds(args.seed))
    if getattr(args, "out", None):
        cfg = replace(cfg, output_dir=args.out)
    return cfg


def _train_one_seed(cfg_dict: dict, seed: int, out_dir: str) -> dict:
    """Worker for one seed; safe to run in a separate process."""
    cfg = run_config_from_dict(cfg_dict)
    dataset = cfg.resolve_dataset()
    env_config = cfg.env_config(dataset)
    os.makedirs(out_dir, exist_ok=True)
    hyper = cfg.resolved_hyper()
    try:
        result = train(cfg.agent_kind, env_config, hyper, seed)
    except TrainingDivergenceError as exc:
        exc.log.write_episode_csv(os.path.join(out_dir, "episodes.csv"))
        exc.log.write_step_csv(os.path.join(out_dir, "steps.csv"))
        return {"seed": seed, "diverged": True, "error": str(exc)}
    save_snapshot(
        result.agent, hyper, os.path.join(out_dir, "snapshot.json"),
        extras={"run_config": cfg_dict, "seed": seed},
    )
    result.log.write_episode_csv(os.path.join(out_dir, "episodes.csv"))
    result.log.write_step_csv(os.path.join(out_dir, "steps.csv"))
    rewards = result.log.episode_rewards()
    return {
        "seed": seed,
        "diverged": False,
        "episodes": len(result.log.episodes),
        "mean_reward": float(rewards.mean()) if rewards.size else 0.0,
        "log_hash": result.log.canonical_hash(),
    }


def cmd_train(args) -> int:
    cfg = _apply_overrides(load_run_config(args.config), args)
    if args.dump_config:
        print(dump_run_config(cfg))
        return EXIT_OK
    cfg_dict = run_config_to_dict(cfg)
    jobs = [(seed, os.path.join(cfg.output_dir, f"seed_{seed}")) for seed in cfg.seeds]

    if args.parallel_seeds > 1 and len(jobs) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.parallel_seeds) as pool:
            futures = [pool.submit(_train_one_seed, cfg_dict, seed, out) for seed, out in jobs]
            summaries = [f.result() for f in futures]
    else:
        summaries = [_train_one_seed(cfg_dict, seed, out) for seed, out in jobs]

    diverged = False
    for s in summaries:
        if s["diverged"]:
            diverged = True
            print(f"seed {s['seed']}: DIVERGED ({s['error']}); partial logs kept")
        else:
            print(
                f"seed {s['seed']}: {s['episodes']} episodes, "
                f"mean cumulative reward {s['mean_reward']:.2f}"
            )
    return EXIT_DIVERGENCE if diverged else EXIT_OK


def _episode_terminal_c(log) -> list[float]:
    """Terminal capacitance of each episode in a rollout log."""
    out: list[float] = []
    for episode in range(1, len(log.episodes) + 1):
        rows = [s for s in log.steps if s.episode == episode]
        out.append(rows[-1].c_farads)
    return out


def _line_bins(env: AefEnv) -> np.ndarray:
    freqs = env.grid.as_array()
    idx = sorted(
        {int(np.argmin(np.abs(freqs - ln.frequency))) for ln in env.config.dataset.lines}
    )
    return np.asarray(idx, dtype=int)


def _series_for_c(env: AefEnv, bins: np.ndarray, tau: float, c: float) -> InsertionLossSeries:
    freqs = env.grid.as_array()
    base_dbua = 20.0 * np.log10(np.maximum(env._base_linear, 1e-10))
    required = np.maximum(base_dbua[bins] - tau, 0.0)
    achieved = -env.response_db(c)[bins]
    return InsertionLossSeries(FrequencyGrid(tuple(freqs[bins])), required, achieved)


def _low_freq_average_db(env: AefEnv, c: float, f_max: float = 1e6) -> float:
    freqs = env.grid.as_array()
    mask = freqs <= f_max
    resp = env.response_db(c)
    return float(resp[mask].mean()) if mask.any() else float(resp.mean())


def cmd_eval(args) -> int:
    agent, hyper, extras = load_snapshot(args.snapshot)
    if "run_config" not in extras:
        raise ConfigError("snapshot carries no run_config; cannot rebuild environment")
    cfg = run_config_from_dict(extras["run_config"])
    dataset = load_dataset(args.dataset) if args.dataset else cfg.resolve_dataset()
    env_config = cfg.env_config(dataset)
    env = AefEnv(env_config)
    bins = _line_bins(env)
    tau = env_config.tau_emi
    out_dir = args.out or os.path.join(cfg.output_dir, "eval")

    if args.no_rl:
        c_fixed = env_config.components.c_inject
        series = [_series_for_c(env, bins, tau, c_fixed)]
        scalar, _ = env.static_emi(c_fixed)
        report = MetricReport(
            dataset.name, rmse(series), _low_freq_average_db(env, c_fixed), 0.0, 0.0, 0.0,
        )
        written = emit_report(report, series, out_dir)
        print(f"fixed-capacitance baseline at {c_fixed:g} F: scalar EMI {scalar:.2f} dBuA")
        for path in written:
            print(f"wrote {path}")
        return EXIT_OK

    seeds = _parse_seeds(args.seed) if args.seed else (0,)
    logs = []
    series = []
    low_freq = []
    for seed in seeds:
        rollout = run_policy(agent, env_config, args.episodes, seed)
        logs.append(rollout)
        for c_term in _episode_terminal_c(rollout):
            series.append(_series_for_c(env, bins, tau, c_term))
            low_freq.append(_low_freq_average_db(env, c_term))
    stats = reward_stats(logs)
    report = MetricReport(
        dataset.name, rmse(series), float(np.mean(low_freq)),
        stats.mean, stats.std, stats.runtime_per_episode_s,
    )
    rewards = [r for lg in logs for r in lg.episode_rewards()]
    written = emit_report(report, series, out_dir, episode_rewards=rewards)
    print(f"dataset {dataset.name}: RMSE {report.insertion_loss_rmse:.3f} dB, "
          f"reward {stats.format()}")
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _apply_overrides(load_run_config(args.config), args)
    if args.dump_config:
        print(dump_run_config(cfg))
        return EXIT_OK
    if args.steps < 2:
        raise ConfigError("--steps must be >= 2")
    env = AefEnv(cfg.env_config())
    cs = np.geomspace(cfg.env.c_min, cfg.env.c_max, args.steps)
    out = args.out or os.path.join(cfg.output_dir, "sweep.csv")
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("c_farads,scalar_emi_dbua,avg_insertion_loss_db\n")
        for c in cs:
            scalar, state = env.static_emi(float(c))
            fh.write(f"{float(c)!r},{scalar!r},{float(state.f_response.mean())!r}\n")
    print(f"wrote {args.steps} rows to {out}")
    return EXIT_OK


def cmd_report(args) -> int:
    episodes_csv = os.path.join(args.run_dir, "episodes.csv")
    if not os.path.exists(episodes_csv):
        raise OSError(f"no episodes.csv under {args.run_dir}")
    rewards: list[float] = []
    wall: list[float] = []
    with open(episodes_csv, "r", encoding="utf-8") as fh:
        next(fh)
        for row in fh:
            parts = row.strip().split(",")
            rewards.append(float(parts[1]))
            wall.append(float(parts[3]))
    arr = np.asarray(rewards)
    stats = RewardStats(float(arr.mean()), float(arr.std()), float(np.mean(wall)) / 1e3)
    report = MetricReport("logged-run", 0.0, 0.0, stats.mean, stats.std,
                          stats.runtime_per_episode_s)
    out_dir = args.out or args.run_dir
    written = emit_report(report, [], out_dir, episode_rewards=rewards)
    print(f"reward {stats.format()} over {len(rewards)} episodes")
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aef", description=__doc__)
    parser.add_argument("--version", action="version", version=f"aef {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset CSV")
    p.add_argument("--band", required=True, help="frequency band LOW:HIGH in Hz")
    p.add_argument("--lines", type=int, required=True, help="number of interference lines")
    p.add_argument("--amp", default="20:50", help="peak amplitude range LOW:HIGH in dBuA")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--name", default="synthetic")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one agent per seed")
    p.add_argument("--config", required=True)
    p.add_argument("--agent", choices=["qlearning", "qlearning-deep", "sarsa", "dqn",
                                       "eqrl", "eqrl-tabular"])
    p.add_argument("--seed", help="comma-separated seed list overriding the config")
    p.add_argument("--out", help="output directory overriding the config")
    p.add_argument("--parallel-seeds", type=int, default=1)
    p.add_argument("--dump-config", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="greedy rollouts and metric report")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--dataset", help="dataset CSV overriding the snapshot's source")
    p.add_argument("--seed", help="comma-separated rollout seeds (default 0)")
    p.add_argument("--episodes", type=int, default=3)
    p.add_argument("--out")
    p.add_argument("--no-rl", action="store_true",
                   help="evaluate the fixed nominal capacitance instead of the policy")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="static capacitance sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--steps", type=int, default=128)
    p.add_argument("--seed", help="accepted for interface symmetry; sweep uses no RNG")
    p.add_argument("--out")
    p.add_argument("--dump-config", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="re-emit report files from logged CSVs")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("AEF_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DimensionMismatchError as exc:
        print(f"incompatible snapshot: {exc}", file=sys.stderr)
        return EXIT_INCOMPATIBLE
    except TrainingDivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (ConfigError, DatasetFormatError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

"""Command-line experiment runner.

Subcommands: run (one simulation), sweep (batch or rate sweeps), calibrate
(fit a cost model from a latency profile CSV), capacity (SLO capacity
search).  All outputs are plot-ready CSV/JSON; every command is reproducible
given --seed and the config file.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Any, Optional, Sequence

import yaml

from .commit import CommitProfile
from .core import WindowRule, records_to_csv
from .costmodel import CostModel, default_cost_model, fit, profile_from_csv
from .errors import ConfigError, SimulatorError
from .metrics import summarize
from .scheduler import (
    AutoregressivePolicy,
    BlockLevelBatch,
    ElasticChunk,
    FixedBlock,
    FixedChunk,
    SchedulerPolicy,
    policy_name,
)
from .sim import (
    ClosedLoop,
    OpenLoop,
    Scenario,
    find_slo_capacity,
    run,
    summarize_trimmed,
    sweep_closed_loop,
    sweep_open_loop,
)
from .workload import PROFILES, VARIANTS, DatasetProfile, calibrated_profile

# Every config key, with the one-line documentation shown by --help.
CONFIG_KEY_DOCS: dict[str, str] = {
    "scenario.mode.kind": "'open' (rate-driven arrivals) or 'closed' (fixed concurrency)",
    "scenario.mode.arrival_rate": "open loop: Poisson arrival rate in requests/s (> 0)",
    "scenario.mode.num_requests": "open loop: number of requests to generate",
    "scenario.mode.concurrency": "closed loop: running requests held constant",
    "scenario.mode.total_requests": "closed loop: requests to complete before stopping",
    "scenario.policy.kind": "'ar', 'fixed-block', 'block-level-batch', 'fixed-chunk', or 'elastic'",
    "scenario.policy.block_size": "block length in tokens for diffusion policies",
    "scenario.policy.chunk_size": "fixed-chunk: tokens computed per request per iteration",
    "scenario.policy.candidates": "elastic: candidate chunk sizes (even, within [2, block_size])",
    "scenario.policy.hysteresis": "elastic: fractional improvement required to switch chunks",
    "scenario.policy.warmup_observations": "elastic: steps observed at full blocks before adapting",
    "scenario.policy.alpha": "elastic: EWMA decay of the commit-rank histogram",
    "scenario.policy.min_observations": "elastic: steps before the histogram replaces the prior",
    "scenario.policy.window_rule": "'in-block' or 'out-block' masked-window rule",
    "scenario.dataset": "preset name (sharegpt, lmsys-chat, longbench, gsm8k, humaneval, mbpp, ifeval) or inline table",
    "scenario.dataset.name": "inline dataset: label",
    "scenario.dataset.prompt_mean": "inline dataset: mean prompt tokens",
    "scenario.dataset.prompt_std": "inline dataset: std of prompt tokens",
    "scenario.dataset.output_mean": "inline dataset: mean output tokens",
    "scenario.dataset.output_std": "inline dataset: std of output tokens",
    "scenario.dataset.tokens_per_step_mean": "inline dataset: mean commits per full-window step",
    "scenario.dataset.tokens_per_step_std": "inline dataset: std of commits per full-window step",
    "scenario.dataset.slo_tpot_ms": "inline dataset: default TPOT SLO in ms",
    "scenario.variant": f"model variant for preset commit rates: {', '.join(VARIANTS)}",
    "scenario.commit.q": "override the calibrated per-rank commit decay (0 <= q < 1)",
    "scenario.commit.rate_jitter_sigma": "lognormal sigma of per-request rate multipliers",
    "scenario.cost_model": "path to a fitted cost-model JSON; omit for the built-in default",
    "scenario.seed": "simulation seed (overridden by --seed)",
    "scenario.max_batch": "maximum decode batch size",
    "sweep.axis": "'batch' (closed loop) or 'rate' (open loop)",
    "sweep.values": "axis values, e.g. [1, 2, 4, ...] or rates in requests/s",
    "sweep.policies": "list of policy tables to sweep (defaults to scenario.policy)",
    "capacity.slo_ms": "P90 TPOT objective in ms (overridden by --slo)",
    "capacity.rate_low": "lower bracket for the capacity search, requests/s",
    "capacity.rate_high": "upper bracket for the capacity search, requests/s",
    "capacity.seeds": "seed list for capacity probes (median P90 across seeds)",
    "capacity.num_requests": "requests per capacity probe run",
}

_MODE_KEYS = {"kind", "arrival_rate", "num_requests", "concurrency", "total_requests"}
_POLICY_KEYS = {
    "kind", "block_size", "chunk_size", "candidates", "hysteresis",
    "warmup_observations", "alpha", "min_observations", "window_rule",
}
_DATASET_KEYS = {
    "name", "prompt_mean", "prompt_std", "output_mean", "output_std",
    "tokens_per_step_mean", "tokens_per_step_std", "slo_tpot_ms",
}
_COMMIT_KEYS = {"q", "rate_jitter_sigma"}
_SCENARIO_KEYS = {
    "mode", "policy", "dataset", "variant", "commit", "cost_model", "seed", "max_batch",
}
_SWEEP_KEYS = {"axis", "values", "policies"}
_CAPACITY_KEYS = {"slo_ms", "rate_low", "rate_high", "seeds", "num_requests"}
_TOP_KEYS = {"scenario", "sweep", "capacity"}


def _check_keys(table: dict, allowed: set[str], path: str) -> None:
    if not isinstance(table, dict):
        raise ConfigError(f"{path} must be a key/value table")
    for key in table:
        if key not in allowed:
            raise ConfigError(f"unknown config key {path}.{key}")


def load_config(path: str) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigError(f"config parse error{where}: {exc}") from exc
    if data is None:
        data = {}
    _check_keys(data, _TOP_KEYS, "config")
    if "scenario" not in data:
        raise ConfigError("config.scenario is required")
    _check_keys(data["scenario"], _SCENARIO_KEYS, "config.scenario")
    _check_keys(data["scenario"].get("mode", {}), _MODE_KEYS, "config.scenario.mode")
    _check_keys(
        data["scenario"].get("policy", {}), _POLICY_KEYS, "config.scenario.policy"
    )
    dataset = data["scenario"].get("dataset", "sharegpt")
    if isinstance(dataset, dict):
        _check_keys(dataset, _DATASET_KEYS, "config.scenario.dataset")
    if "commit" in data["scenario"]:
        _check_keys(data["scenario"]["commit"], _COMMIT_KEYS, "config.scenario.commit")
    if "sweep" in data:
        _check_keys(data["sweep"], _SWEEP_KEYS, "config.sweep")
        for i, pol in enumerate(data["sweep"].get("policies", [])):
            _check_keys(pol, _POLICY_KEYS, f"config.sweep.policies[{i}]")
    if "capacity" in data:
        _check_keys(data["capacity"], _CAPACITY_KEYS, "config.capacity")
    return data


def _build_mode(table: dict) -> OpenLoop | ClosedLoop:
    kind = table.get("kind")
    if kind == "open":
        rate = table.get("arrival_rate")
        if rate is None or rate <= 0:
            raise ConfigError(
                "scenario.mode.arrival_rate must be > 0 for open-loop mode"
            )
        return OpenLoop(
            arrival_rate=float(rate), num_requests=int(table.get("num_requests", 200))
        )
    if kind == "closed":
        conc = table.get("concurrency")
        if conc is None or int(conc) < 1:
            raise ConfigError("scenario.mode.concurrency must be >= 1")
        return ClosedLoop(
            concurrency=int(conc), total_requests=int(table.get("total_requests", 64))
        )
    raise ConfigError("scenario.mode.kind must be 'open' or 'closed'")


def _window_rule(name: str) -> WindowRule:
    if name == "in-block":
        return WindowRule.IN_BLOCK
    if name == "out-block":
        return WindowRule.OUT_BLOCK
    raise ConfigError("scenario.policy.window_rule must be 'in-block' or 'out-block'")


def build_policy(table: dict) -> SchedulerPolicy:
    kind = table.get("kind")
    block = int(table.get("block_size", 32))
    rule = _window_rule(table.get("window_rule", "in-block"))
    if kind == "ar":
        return AutoregressivePolicy()
    if kind == "fixed-block":
        return FixedBlock(block_size=block)
    if kind == "block-level-batch":
        return BlockLevelBatch(block_size=block)
    if kind == "fixed-chunk":
        if "chunk_size" not in table:
            raise ConfigError("scenario.policy.chunk_size is required for fixed-chunk")
        return FixedChunk(
            chunk_size=int(table["chunk_size"]), block_size=block, window_rule=rule
        )
    if kind == "elastic":
        kwargs: dict[str, Any] = {"block_size": block, "window_rule": rule}
        if "candidates" in table:
            kwargs["candidates"] = tuple(int(c) for c in table["candidates"])
        for key in ("hysteresis", "alpha"):
            if key in table:
                kwargs[key] = float(table[key])
        for key in ("warmup_observations", "min_observations"):
            if key in table:
                kwargs[key] = int(table[key])
        return ElasticChunk(**kwargs)
    raise ConfigError(
        "scenario.policy.kind must be one of: ar, fixed-block, block-level-batch, "
        "fixed-chunk, elastic"
    )


def _build_dataset(spec: Any) -> tuple[DatasetProfile, str]:
    if isinstance(spec, str):
        if spec not in PROFILES:
            raise ConfigError(
                f"unknown dataset preset {spec!r}; known: {sorted(PROFILES)}"
            )
        return PROFILES[spec], "preset"
    _check_keys(spec, _DATASET_KEYS, "config.scenario.dataset")
    mean = float(spec.get("tokens_per_step_mean", 4.0))
    std = float(spec.get("tokens_per_step_std", 0.0))
    profile = DatasetProfile(
        name=str(spec.get("name", "custom")),
        prompt_mean=float(spec["prompt_mean"]),
        prompt_std=float(spec.get("prompt_std", 0.0)),
        output_mean=float(spec["output_mean"]),
        output_std=float(spec.get("output_std", 0.0)),
        tokens_per_step={"custom": (mean, std)},
        slo_tpot_s=float(spec.get("slo_tpot_ms", 50.0)) / 1e3,
    )
    return profile, "custom"


def build_scenario(config: dict, seed_override: Optional[int] = None) -> Scenario:
    sc = config["scenario"]
    if "mode" not in sc:
        raise ConfigError("config.scenario.mode is required")
    if "policy" not in sc:
        raise ConfigError("config.scenario.policy is required")
    mode = _build_mode(sc["mode"])
    policy = build_policy(sc["policy"])
    dataset, origin = _build_dataset(sc.get("dataset", "sharegpt"))
    variant = sc.get("variant", VARIANTS[0]) if origin == "preset" else "custom"

    block = getattr(policy, "block_size", 32)
    commit_table = sc.get("commit", {})
    if "q" in commit_table:
        profile = CommitProfile(
            q=float(commit_table["q"]),
            rate_jitter_sigma=float(commit_table.get("rate_jitter_sigma", 0.0)),
            note="config override",
        )
    else:
        profile = calibrated_profile(dataset, variant, block_size=block)
        if "rate_jitter_sigma" in commit_table:
            profile = CommitProfile(
                q=profile.q,
                rate_jitter_sigma=float(commit_table["rate_jitter_sigma"]),
                note=profile.note,
            )

    if "cost_model" in sc and sc["cost_model"]:
        cost = CostModel.from_json(Path(sc["cost_model"]).read_text())
    else:
        cost = default_cost_model()

    seed = int(sc.get("seed", 0)) if seed_override is None else seed_override
    return Scenario(
        mode=mode,
        policy=policy,
        commit_profile=profile,
        cost_model=cost,
        dataset=dataset,
        seed=seed,
        max_batch=int(sc.get("max_batch", 256)),
    )


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _rows_to_csv(rows: Sequence[dict]) -> str:
    if not rows:
        return ""
    out = io.StringIO()
    writer = csv.DictWriter(out, fieldnames=list(rows[0].keys()))
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    return out.getvalue()


def cmd_run(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    scenario = build_scenario(config, args.seed)
    result = run(scenario)
    summary = summarize(result.records, result.request_log)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _atomic_write(out_dir / "summary.json", summary.to_json() + "\n")
    _atomic_write(out_dir / "iterations.csv", records_to_csv(result.records))
    print(f"completed {summary.completed} requests; wrote {out_dir}/summary.json")
    return 0


def _sweep_cell(config: dict, policy_table: dict, axis: str, value: float,
                seed: Optional[int]) -> dict:
    """One sweep cell, rebuilt from plain tables so it can run in a worker."""
    scenario = build_scenario(config, seed)
    policy = build_policy(policy_table)
    if axis == "batch":
        rows = sweep_closed_loop(scenario, [int(value)], [policy])
    else:
        rows = sweep_open_loop(scenario, [float(value)], [policy])
    return rows[0]


def cmd_sweep(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    sweep_table = config.get("sweep")
    if not sweep_table:
        raise ConfigError("config.sweep is required for the sweep command")
    axis = sweep_table.get("axis")
    if axis not in ("batch", "rate"):
        raise ConfigError("config.sweep.axis must be 'batch' or 'rate'")
    values = sweep_table.get("values")
    if not values:
        raise ConfigError("config.sweep.values must be a nonempty list")
    policy_tables = sweep_table.get("policies") or [config["scenario"]["policy"]]
    build_scenario(config, args.seed)  # fail fast on bad scenario config

    out_dir = Path(args.out_dir)
    cell_dir = out_dir / "cells"
    cell_dir.mkdir(parents=True, exist_ok=True)

    cells = []
    for table in policy_tables:
        label = policy_name(build_policy(table))
        for value in values:
            cells.append((table, label, value))

    todo = []
    for table, label, value in cells:
        path = cell_dir / f"{label}-{axis}-{value}.json"
        if args.resume and path.exists():
            continue
        todo.append((table, label, value, path))

    if args.jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = [
                (path, pool.submit(_sweep_cell, config, table, axis, value, args.seed))
                for table, _, value, path in todo
            ]
            for path, future in futures:
                _atomic_write(path, json.dumps(future.result(), indent=2) + "\n")
    else:
        for table, _, value, path in todo:
            row = _sweep_cell(config, table, axis, value, args.seed)
            _atomic_write(path, json.dumps(row, indent=2) + "\n")

    rows = []
    for table, label, value in cells:
        path = cell_dir / f"{label}-{axis}-{value}.json"
        rows.append(json.loads(path.read_text()))
    rows.sort(key=lambda r: (r["policy"], float(r[axis])))
    _atomic_write(out_dir / f"sweep_{axis}.csv", _rows_to_csv(rows))
    print(f"wrote {len(rows)} rows to {out_dir}/sweep_{axis}.csv")
    return 0


def cmd_calibrate(args: argparse.Namespace) -> int:
    samples = profile_from_csv(Path(args.profile_csv).read_text())
    model = fit(samples)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _atomic_write(out_dir / "cost_model.json", model.to_json() + "\n")
    for seg in model.segments:
        print(
            f"x >= {seg.x_start:7.1f}: {seg.slope * 1e6:8.3f} us/token, "
            f"intercept {seg.intercept * 1e3:8.3f} ms"
        )
    print(f"wrote {out_dir}/cost_model.json")
    return 0


def cmd_capacity(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    scenario = build_scenario(config, args.seed)
    cap_table = config.get("capacity", {})
    if args.slo is not None:
        slo_s = args.slo / 1e3
    elif "slo_ms" in cap_table:
        slo_s = float(cap_table["slo_ms"]) / 1e3
    else:
        slo_s = scenario.dataset.slo_tpot_s
    rate_low = float(cap_table.get("rate_low", 0.25))
    rate_high = float(cap_table.get("rate_high", 64.0))
    seeds = [int(s) for s in cap_table.get("seeds", [0, 1, 2])]
    num_requests = int(cap_table.get("num_requests", 300))

    sweep_table = config.get("sweep", {})
    policy_tables = sweep_table.get("policies") or [config["scenario"]["policy"]]
    results = {}
    for table in policy_tables:
        policy = build_policy(table)
        capacity = find_slo_capacity(
            replace(scenario, policy=policy),
            slo_s,
            rate_low,
            rate_high,
            seeds=seeds,
            num_requests=num_requests,
        )
        results[policy_name(policy)] = capacity
        print(f"{policy_name(policy)}: {capacity:.3f} req/s at P90 TPOT <= {slo_s * 1e3:.0f} ms")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _atomic_write(out_dir / "capacity.json", json.dumps(results, indent=2) + "\n")
    return 0


def _config_reference() -> str:
    lines = ["config file keys:"]
    lines.extend(f"  {key:42s} {doc}" for key, doc in CONFIG_KEY_DOCS.items())
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dllmsim",
        description="Discrete-event simulator for diffusion-LLM serving schedules.",
        epilog=_config_reference(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", required=True, help="path to the YAML config file")
        p.add_argument("--seed", type=int, default=None, help="override scenario.seed")
        p.add_argument("--out-dir", default="results", help="output directory")

    p_run = sub.add_parser("run", help="run one simulation", epilog=_config_reference(),
                           formatter_class=argparse.RawDescriptionHelpFormatter)
    common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="sweep batch sizes or arrival rates")
    common(p_sweep)
    p_sweep.add_argument("--jobs", type=int, default=1, help="parallel sweep workers")
    p_sweep.add_argument(
        "--resume", action="store_true", help="skip cells whose output already exists"
    )
    p_sweep.set_defaults(func=cmd_sweep)

    p_cal = sub.add_parser("calibrate", help="fit a cost model from a profile CSV")
    p_cal.add_argument("profile_csv", help="CSV with header x,latency_ms")
    p_cal.add_argument("--out-dir", default="results", help="output directory")
    p_cal.set_defaults(func=cmd_calibrate)

    p_cap = sub.add_parser("capacity", help="search the SLO-capacity knee")
    common(p_cap)
    p_cap.add_argument("--slo", type=float, default=None, help="P90 TPOT SLO in ms")
    p_cap.set_defaults(func=cmd_capacity)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except SimulatorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Command-line front end: validate configs, run scenarios, verify analytics.

Exit codes are part of the contract: 0 success, 1 semantic failure (invalid
config content, scenario errors, oracle disagreement), 2 usage or I/O
failure (missing files, bad flags, unsupported subcommand input).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import scenarios as scn
from .estimator import EstimatorDistribution, lag_law, miss_probability
from .oracle import (
    GridTestModel,
    oracle_summary,
    proportion_se,
    sample_grid,
    z_score,
)
from .version import __version__

_EMIT_CHOICES = ("csv", "json", "svg")
_Z_GATE = 4.0


@dataclass(frozen=True)
class RunManifest:
    """Everything one `run` invocation needs, resolved from flags and env."""

    names: tuple[str, ...]
    config_path: str | None
    out_dir: str
    seed: int
    emit: tuple[str, ...] = ("csv", "json")
    paths: int | None = None
    jobs: int = 1
    verbose: int = 0


def _parse_emit(text: str, parser: argparse.ArgumentParser) -> tuple[str, ...]:
    parts = tuple(p.strip() for p in text.split(",") if p.strip())
    bad = [p for p in parts if p not in _EMIT_CHOICES]
    if bad or not parts:
        parser.error(f"--emit expects a comma list from {','.join(_EMIT_CHOICES)}")
    return parts


def _resolve_seed(value, parser: argparse.ArgumentParser) -> int:
    if value is None:
        value = os.environ.get("CAPWATCH_SEED", "0")
    try:
        seed = int(value)
    except ValueError:
        parser.error(f"seed must be an integer, got {value!r}")
    if not 0 <= seed < 2**64:
        parser.error("seed must fit in an unsigned 64-bit integer")
    return seed


def _load_scenarios(names, config_path) -> list[scn.Scenario]:
    chosen: list[scn.Scenario] = [scn.builtin(name) for name in names]
    if config_path is not None:
        data = json.loads(Path(config_path).read_text())
        problems = scn.validate_config(data)
        if problems:
            raise ValueError("; ".join(problems))
        chosen.extend(scn.load_config(data))
    if not chosen:
        raise ValueError("nothing to run: give builtin names or --config")
    seen = set()
    for s in chosen:
        if s.name in seen:
            raise ValueError(f"duplicate scenario name {s.name!r}")
        seen.add(s.name)
    return sorted(chosen, key=lambda s: s.name)


def _child_seed(root: int, index: int) -> int:
    return int(np.random.SeedSequence(root, spawn_key=(index,)).generate_state(1, np.uint64)[0])


def cmd_validate(args, parser) -> int:
    path = Path(args.config)
    try:
        text = path.read_text()
    except OSError as exc:
        print(f"error: cannot read {path}: {exc.strerror}", file=sys.stderr)
        return 2
    try:
        data = json.loads(text)
    except ValueError as exc:
        json.dump([f"invalid JSON: {exc}"], sys.stderr)
        sys.stderr.write("\n")
        return 1
    problems = scn.validate_config(data)
    if problems:
        json.dump(problems, sys.stderr)
        sys.stderr.write("\n")
        return 1
    print(f"{path}: OK")
    return 0


def cmd_run(args, parser) -> int:
    manifest = RunManifest(
        names=tuple(args.names),
        config_path=args.config,
        out_dir=args.out,
        seed=_resolve_seed(args.seed, parser),
        emit=_parse_emit(args.emit, parser),
        paths=args.paths,
        jobs=args.jobs,
        verbose=args.verbose,
    )
    try:
        chosen = _load_scenarios(manifest.names, manifest.config_path)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if manifest.paths is not None:
        chosen = [s.replace(paths=manifest.paths) for s in chosen]

    jobs = [(s, _child_seed(manifest.seed, i)) for i, s in enumerate(chosen)]

    def evaluate(job):
        scenario, seed = job
        return scn.run(scenario, seed=seed)

    try:
        if manifest.jobs > 1:
            with ThreadPoolExecutor(max_workers=manifest.jobs) as pool:
                results = list(pool.map(evaluate, jobs))
        else:
            results = [evaluate(job) for job in jobs]
        from . import reporting

        for result in results:
            written = reporting.write_outputs(result, manifest.out_dir, manifest.emit)
            print(result.summary_line())
            if manifest.verbose:
                for p in written:
                    print(f"  wrote {p}")
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def _verify_rows(scenario: scn.Scenario, seed: int, draws: int, grid: float, offset: float):
    rate = scenario.rate
    assert rate is not None
    threshold = scenario.threshold
    dist = EstimatorDistribution(rate, rate.y_max)
    law = (
        lag_law(rate, threshold, growth=scenario.growth)
        if threshold < rate.y_max
        else None
    )
    span = rate.y_max - rate.y0
    cdf_points = [rate.y0 + span * i / 6.0 for i in range(1, 6)]

    model = GridTestModel(rate=rate, truncation=rate.y_max, step=grid)
    summary = oracle_summary(
        sample_grid(model, draws, seed, threshold=threshold),
        threshold=threshold,
        cdf_points=cdf_points,
    )

    rows = []

    def add(quantity, analytic, sample, se):
        rows.append((scenario.name, quantity, analytic + offset, sample, se))

    add("mean", dist.mean(), summary.mean, summary.mean_se)
    p_mass = dist.point_mass()
    add("point_mass", p_mass, summary.point_mass_rate, proportion_se(p_mass, draws))
    p_detect = dist.detection_likelihood(threshold)
    add(
        "detection_likelihood",
        p_detect,
        summary.detection_rate,
        proportion_se(p_detect, draws),
    )
    c = miss_probability(rate, threshold)
    add("miss_probability", c, summary.miss_rate, proportion_se(c, draws))
    if law is not None and not law.always_missed and summary.lag_mean is not None:
        add("conditional_lag", law.conditional_mean_time(), summary.lag_mean, summary.lag_se)
    for q in cdf_points:
        p = dist.cdf(q)
        add(f"cdf@{q:.4g}", p, summary.cdf_at[q], proportion_se(p, draws))
    return rows


def cmd_verify(args, parser) -> int:
    seed = _resolve_seed(args.seed, parser)
    try:
        if args.names or args.config:
            chosen = _load_scenarios(args.names, args.config)
        else:
            chosen = [
                scn.builtin(name)
                for name in scn.BUILTIN_NAMES
                if scn.builtin(name).rate is not None
            ]
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    static = [s for s in chosen if s.rate is not None]
    if len(static) != len(chosen):
        skipped = ", ".join(s.name for s in chosen if s.rate is None)
        print(f"error: verify needs static scenarios (got: {skipped})", file=sys.stderr)
        return 2

    header = f"{'scenario':<18} {'quantity':<22} {'analytic':>12} {'oracle':>12} {'z':>8}"
    print(header)
    print("-" * len(header))
    worst = 0.0
    for index, scenario in enumerate(static):
        child = _child_seed(seed, index)
        for name, quantity, analytic, sample, se in _verify_rows(
            scenario, child, args.draws, args.grid, args.self_test_offset
        ):
            z = z_score(sample, analytic, se)
            worst = max(worst, abs(z))
            z_text = f"{z:8.2f}" if math.isfinite(z) else f"{'inf':>8}"
            print(
                f"{name:<18} {quantity:<22} {analytic:12.6g} {sample:12.6g} {z_text}"
            )
    if worst < _Z_GATE:
        print(f"all statistics within |z| < {_Z_GATE:g}")
        return 0
    print(f"disagreement: max |z| = {worst:.2f} >= {_Z_GATE:g}", file=sys.stderr)
    return 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="capwatch",
        description="Danger-testing estimator models: run scenarios, check the math.",
    )
    parser.add_argument("--version", action="version", version=f"capwatch {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_val = sub.add_parser("validate", help="check a scenario config file")
    p_val.add_argument("config", help="path to a JSON config")

    p_run = sub.add_parser("run", help="run scenarios and write result files")
    p_run.add_argument("names", nargs="*", help="builtin scenario names")
    p_run.add_argument("--config", help="path to a JSON config with extra scenarios")
    p_run.add_argument("--out", default="capwatch-out", help="output directory")
    p_run.add_argument("--seed", default=None, help="root seed (env CAPWATCH_SEED)")
    p_run.add_argument(
        "--emit", default="csv,json", help="comma list of outputs: csv,json,svg"
    )
    p_run.add_argument("--paths", type=int, default=None, help="override path counts")
    p_run.add_argument("--jobs", type=int, default=1, help="parallel scenario jobs")
    p_run.add_argument("-v", "--verbose", action="count", default=0)

    p_ver = sub.add_parser("verify", help="cross-check closed forms against the grid oracle")
    p_ver.add_argument("names", nargs="*", help="builtin scenario names (default: all static)")
    p_ver.add_argument("--config", help="path to a JSON config")
    p_ver.add_argument("--draws", type=int, default=100_000, help="oracle draw count")
    p_ver.add_argument("--grid", type=float, default=1e-3, help="oracle cell width")
    p_ver.add_argument("--seed", default=None, help="root seed (env CAPWATCH_SEED)")
    p_ver.add_argument(
        "--self-test-offset",
        type=float,
        default=0.0,
        help=argparse.SUPPRESS,
    )
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "validate":
            return cmd_validate(args, parser)
        if args.command == "run":
            return cmd_run(args, parser)
        return cmd_verify(args, parser)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else int(exc.code)


def main_entry() -> None:
    sys.exit(main())

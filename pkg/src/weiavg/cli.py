"""Command-line front end: run, sweep, analyze.

Config files are flat ``key=value`` text with strict parsing: unknown or
duplicate keys are errors with line numbers, not warnings.  All CSV output
uses round-trip float formatting and a versioned schema header comment so
re-analysis is bit-stable and stale readers fail loudly.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .aggregate import (
    DEFAULT_LT_EPSILON,
    STRATEGIES,
    WEIAVG_PROJECTION,
    AggregationPolicy,
    WeightVector,
)
from .analysis import (
    UndefinedCorrelationError,
    compare_strategies,
    projection_entropy_correlation,
)
from .datagen import PartitionSpec
from .model import TrainConfig
from .orchestrator import (
    DatasetSpec,
    ExperimentConfig,
    ExperimentResult,
    RoundRecord,
    run_experiment,
)

logger = logging.getLogger(__name__)

ROUNDS_SCHEMA = "weiavg.rounds.v1"
WEIGHTS_SCHEMA = "weiavg.weights.v1"
SWEEP_SCHEMA = "weiavg.sweep.v1"
MANIFEST_SCHEMA = "weiavg.manifest.v1"

ROUNDS_FIELDS = ("seed", "round", "strategy", "lambda", "accuracy", "loss", "degenerate_flag")
WEIGHTS_FIELDS = ("seed", "round", "client_id", "weight", "projection", "entropy")

# Sweepable axis name -> config key.
SWEEP_AXES = {
    "lambda": "lambda",
    "p": "skew_p",
    "local_epochs": "local_epochs",
    "mu": "prox_mu",
    "strategy": "strategy",
}

_STRATEGY_ALIASES = {"weiavg_proj": WEIAVG_PROJECTION}

_INT_KEYS = (
    "rounds",
    "total_clients",
    "clients_per_round",
    "samples_per_client",
    "classes",
    "feature_dim",
    "samples",
    "batch_size",
    "local_epochs",
    "hidden_units",
    "data_seed",
)
_FLOAT_KEYS = (
    "lambda",
    "lt_epsilon",
    "test_fraction",
    "skew_p",
    "learning_rate",
    "momentum",
    "prox_mu",
    "mean_scale",
)
_STR_KEYS = ("strategy", "seeds", "data_file")

DEFAULT_CONFIG = {
    "strategy": "weiavg_projection",
    "lambda": 2.0,
    "lt_epsilon": DEFAULT_LT_EPSILON,
    "rounds": 100,
    "total_clients": 100,
    "clients_per_round": 10,
    "samples_per_client": 30,
    "classes": 10,
    "feature_dim": 32,
    "samples": 3750,
    "test_fraction": 0.2,
    "skew_p": 0.8,
    "batch_size": 16,
    "local_epochs": 10,
    "learning_rate": 0.05,
    "momentum": 0.9,
    "prox_mu": 0.0,
    "hidden_units": 64,
    "seeds": "20",
    "data_seed": 7,
    "mean_scale": 0.3,
    "data_file": "",
}


class ConfigError(Exception):
    """Invalid configuration input, with a source location in the message."""


class AnalyzeError(Exception):
    """Missing or malformed run artifacts."""


def convert_value(key: str, token: str, origin: str):
    """Parse one config value, raising ConfigError with its origin."""
    if key in _INT_KEYS:
        try:
            return int(token)
        except ValueError:
            raise ConfigError(f"{origin}: key '{key}': expected integer, got {token!r}") from None
    if key in _FLOAT_KEYS:
        try:
            value = float(token)
        except ValueError:
            raise ConfigError(f"{origin}: key '{key}': expected number, got {token!r}") from None
        if not np.isfinite(value):
            raise ConfigError(f"{origin}: key '{key}': must be finite, got {token!r}")
        return value
    if key == "strategy":
        name = _STRATEGY_ALIASES.get(token, token)
        if name not in STRATEGIES:
            raise ConfigError(
                f"{origin}: key 'strategy': {token!r} is not one of {', '.join(STRATEGIES)}"
            )
        return name
    if key in _STR_KEYS:
        return token
    raise ConfigError(f"{origin}: unknown key '{key}'")


def parse_config_text(text: str, source: str) -> dict:
    """Strict flat key=value parser; returns defaults overlaid by the file."""
    values = dict(DEFAULT_CONFIG)
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, _, token = line.partition("=")
        key = key.strip()
        token = token.strip()
        origin = f"{source}:{lineno}"
        if key not in DEFAULT_CONFIG:
            raise ConfigError(f"{origin}: unknown key '{key}'")
        if key in seen:
            raise ConfigError(f"{origin}: duplicate key '{key}'")
        seen.add(key)
        values[key] = convert_value(key, token, origin)
    return values


def parse_config_file(path) -> dict:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from None
    return parse_config_text(text, str(p))


def apply_overrides(values: dict, overrides) -> dict:
    """Apply ``key=value`` strings from --set on top of parsed values."""
    out = dict(values)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"--set {item!r}: expected key=value")
        key, _, token = item.partition("=")
        key = key.strip()
        if key not in DEFAULT_CONFIG:
            raise ConfigError(f"--set: unknown key '{key}'")
        out[key] = convert_value(key, token.strip(), f"--set {key}")
    return out


def parse_seeds(token: str) -> tuple[int, ...]:
    """Seed list syntax: a bare count N (seeds 1..N), 'a..b', or 'a,b,c'."""
    token = token.strip()
    try:
        if ".." in token:
            lo_s, _, hi_s = token.partition("..")
            lo, hi = int(lo_s), int(hi_s)
            if hi < lo:
                raise ConfigError(f"seeds range {token!r} is empty")
            return tuple(range(lo, hi + 1))
        if "," in token:
            return tuple(int(t) for t in token.split(",") if t.strip())
        count = int(token)
        if count < 1:
            raise ConfigError(f"seed count must be positive, got {token!r}")
        return tuple(range(1, count + 1))
    except ValueError:
        raise ConfigError(
            f"key 'seeds': expected a count, 'a..b', or a comma list, got {token!r}"
        ) from None


def build_config(values: dict) -> ExperimentConfig:
    """Assemble the typed experiment config; validation errors become ConfigError."""
    try:
        seeds = parse_seeds(values["seeds"])
        policy = AggregationPolicy(
            kind=values["strategy"],
            lam=values["lambda"],
            lt_epsilon=values["lt_epsilon"],
        )
        train = TrainConfig(
            batch_size=values["batch_size"],
            local_epochs=values["local_epochs"],
            learning_rate=values["learning_rate"],
            momentum=values["momentum"],
            prox_mu=values["prox_mu"],
            seed=0,
        )
        partition = PartitionSpec(
            total_clients=values["total_clients"],
            samples_per_client=values["samples_per_client"],
            skew_p=values["skew_p"],
            classes=values["classes"],
            seed=0,
        )
        dataset = DatasetSpec(
            classes=values["classes"],
            feature_dim=values["feature_dim"],
            samples=values["samples"],
            seed=values["data_seed"],
            mean_scale=values["mean_scale"],
            path=values["data_file"],
        )
        return ExperimentConfig(
            dataset=dataset,
            partition=partition,
            train=train,
            policy=policy,
            total_clients=values["total_clients"],
            clients_per_round=values["clients_per_round"],
            rounds=values["rounds"],
            test_fraction=values["test_fraction"],
            hidden_units=values["hidden_units"],
            seeds=seeds,
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _fmt_float(x) -> str:
    return repr(float(x))


def write_rounds_csv(path, result: ExperimentResult, values: dict) -> None:
    strategy = values["strategy"]
    lam = _fmt_float(values["lambda"])
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema={ROUNDS_SCHEMA}\n")
        writer = csv.writer(fh)
        writer.writerow(ROUNDS_FIELDS)
        for seed in sorted(result.runs):
            for rec in result.runs[seed]:
                writer.writerow(
                    [
                        seed,
                        rec.round,
                        strategy,
                        lam,
                        _fmt_float(rec.test_accuracy),
                        _fmt_float(rec.test_loss),
                        int(rec.degenerate_fallback),
                    ]
                )


def write_weights_csv(path, result: ExperimentResult) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema={WEIGHTS_SCHEMA}\n")
        writer = csv.writer(fh)
        writer.writerow(WEIGHTS_FIELDS)
        for seed in sorted(result.runs):
            for rec in result.runs[seed]:
                projections = (
                    rec.projections
                    if rec.projections is not None
                    else np.full(rec.selected.size, np.nan)
                )
                for cid, weight, proj, ent in zip(
                    rec.selected, rec.weights.weights, projections, rec.entropies
                ):
                    writer.writerow(
                        [
                            seed,
                            rec.round,
                            int(cid),
                            _fmt_float(weight),
                            _fmt_float(proj),
                            _fmt_float(ent),
                        ]
                    )


def _timestamp() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


def write_manifest(out_dir: Path, values: dict, seeds, status: str, failures=None) -> None:
    manifest = {
        "schema": MANIFEST_SCHEMA,
        "version": __version__,
        "config": {k: values[k] for k in sorted(values)},
        "seeds": list(seeds),
        "outputs": ["rounds.csv", "weights.csv"],
        "status": status,
        "failures": dict(failures or {}),
    }
    path = out_dir / "manifest.json"
    if path.exists():
        try:
            manifest["started_at"] = json.loads(path.read_text()).get("started_at")
        except (OSError, json.JSONDecodeError):
            manifest["started_at"] = None
    else:
        manifest["started_at"] = _timestamp()
    if status != "running":
        manifest["finished_at"] = _timestamp()
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def execute_run(values: dict, out_dir: Path) -> int:
    """Shared core of run and sweep sub-runs: train, write artifacts."""
    cfg = build_config(values)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_manifest(out_dir, values, cfg.seeds, status="running")
    result = run_experiment(cfg)
    write_rounds_csv(out_dir / "rounds.csv", result, values)
    write_weights_csv(out_dir / "weights.csv", result)
    status = "failed" if result.failures else "complete"
    write_manifest(out_dir, values, cfg.seeds, status=status, failures=result.failures)
    if result.failures:
        for seed, message in sorted(result.failures.items()):
            print(f"error: seed {seed} failed: {message}", file=sys.stderr)
        return 1
    return 0


def cmd_run(args) -> int:
    try:
        values = apply_overrides(parse_config_file(args.config), args.set)
        return execute_run(values, Path(args.out))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


def cmd_sweep(args) -> int:
    try:
        values = apply_overrides(parse_config_file(args.config), args.set)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.axis not in SWEEP_AXES:
        print(
            f"config error: axis {args.axis!r} is not one of {', '.join(sorted(SWEEP_AXES))}",
            file=sys.stderr,
        )
        return 2
    key = SWEEP_AXES[args.axis]
    tokens = [t.strip() for t in args.values.split(",") if t.strip()]
    if not tokens:
        print("config error: --values is empty", file=sys.stderr)
        return 2
    out_root = Path(args.out)
    out_root.mkdir(parents=True, exist_ok=True)
    worst = 0
    for token in tokens:
        sub_dir = out_root / f"{args.axis}={token}"
        if _is_complete(sub_dir):
            logger.info("skipping completed sub-run %s", sub_dir)
            continue
        try:
            sub_values = dict(values)
            sub_values[key] = convert_value(key, token, f"--values {token}")
            code = execute_run(sub_values, sub_dir)
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 2
        worst = max(worst, code)
    if worst == 0:
        _write_merged_csv(out_root, args.axis, tokens)
    return worst


def _is_complete(sub_dir: Path) -> bool:
    path = sub_dir / "manifest.json"
    if not path.exists():
        return False
    try:
        return json.loads(path.read_text()).get("status") == "complete"
    except (OSError, json.JSONDecodeError):
        return False


def _write_merged_csv(out_root: Path, axis: str, tokens) -> None:
    """Concatenate sub-run rounds under an axis/value prefix."""
    with open(out_root / "merged.csv", "w", newline="") as fh:
        fh.write(f"# schema={SWEEP_SCHEMA}\n")
        writer = csv.writer(fh)
        writer.writerow(("axis", "value") + ROUNDS_FIELDS)
        for token in tokens:
            rows = read_csv_rows(out_root / f"{axis}={token}" / "rounds.csv", ROUNDS_SCHEMA)
            for row in rows:
                writer.writerow([axis, token] + [row[f] for f in ROUNDS_FIELDS])


def read_csv_rows(path, expected_schema: str) -> list[dict]:
    """Read a schema-versioned CSV; reject missing or mismatched schemas."""
    p = Path(path)
    try:
        with open(p, newline="") as fh:
            header = fh.readline().strip()
            prefix = "# schema="
            if not header.startswith(prefix):
                raise AnalyzeError(f"{p}: missing schema header")
            schema = header[len(prefix):]
            if schema != expected_schema:
                raise AnalyzeError(
                    f"{p}: unsupported schema {schema!r}, expected {expected_schema!r}"
                )
            return list(csv.DictReader(fh))
    except OSError as exc:
        raise AnalyzeError(f"{p}: {exc}") from None


def load_run(run_dir) -> tuple[dict, dict[int, list[RoundRecord]]]:
    """Rebuild per-seed round records from a run directory's CSV pair.

    Returns (info, runs) where info holds the run's strategy and lambda.
    ``simple_update_norm`` is not serialized and comes back as None.
    """
    run_dir = Path(run_dir)
    round_rows = read_csv_rows(run_dir / "rounds.csv", ROUNDS_SCHEMA)
    weight_rows = read_csv_rows(run_dir / "weights.csv", WEIGHTS_SCHEMA)
    if not round_rows:
        raise AnalyzeError(f"{run_dir}/rounds.csv: no data rows")
    info = {
        "strategy": round_rows[0]["strategy"],
        "lambda": float(round_rows[0]["lambda"]),
        "dir": str(run_dir),
    }
    per_round: dict[tuple[int, int], list[dict]] = {}
    for row in weight_rows:
        key = (int(row["seed"]), int(row["round"]))
        per_round.setdefault(key, []).append(row)
    runs: dict[int, list[RoundRecord]] = {}
    has_projections = info["strategy"] == WEIAVG_PROJECTION
    for row in round_rows:
        seed, rnd = int(row["seed"]), int(row["round"])
        client_rows = per_round.get((seed, rnd))
        if not client_rows:
            raise AnalyzeError(f"{run_dir}/weights.csv: no rows for seed {seed} round {rnd}")
        ids = np.array([int(r["client_id"]) for r in client_rows])
        weights = WeightVector(
            weights=np.array([float(r["weight"]) for r in client_rows]),
            client_ids=ids,
        )
        projections = (
            np.array([float(r["projection"]) for r in client_rows])
            if has_projections
            else None
        )
        record = RoundRecord(
            round=rnd,
            selected=ids,
            weights=weights,
            projections=projections,
            entropies=np.array([float(r["entropy"]) for r in client_rows]),
            test_accuracy=float(row["accuracy"]),
            test_loss=float(row["loss"]),
            degenerate_fallback=row["degenerate_flag"] == "1",
        )
        runs.setdefault(seed, []).append(record)
    for seed in runs:
        runs[seed].sort(key=lambda rec: rec.round)
    return info, runs


def _correlation_section(info: dict, runs: dict[int, list[RoundRecord]]) -> str:
    lines = [f"run: {info['dir']}", f"strategy: {info['strategy']} lambda: {info['lambda']}"]
    reports = {}
    for seed in sorted(runs):
        try:
            reports[seed] = projection_entropy_correlation(runs[seed])
        except (UndefinedCorrelationError, ValueError) as exc:
            lines.append(f"seed={seed} correlation unavailable: {exc}")
    for seed, rep in sorted(reports.items()):
        lines.append(
            f"seed={seed} r={rep.r!r} p={rep.p_value!r} n={rep.n_points} ({rep.grouping})"
        )
    if reports:
        rs = np.array([rep.r for rep in reports.values()])
        strong = sum(1 for rep in reports.values() if rep.r > 0.5 and rep.p_value < 0.01)
        lines.append(
            f"summary: seeds={len(reports)} mean_r={float(rs.mean())!r} "
            f"min_r={float(rs.min())!r} strong(r>0.5,p<0.01)={strong}/{len(reports)}"
        )
    else:
        lines.append("correlation: unavailable (no projection telemetry)")
    return "\n".join(lines) + "\n"


def cmd_analyze(args) -> int:
    out_dir = Path(args.out)
    try:
        loaded = [load_run(d) for d in args.dirs]
    except AnalyzeError as exc:
        print(f"analyze error: {exc}", file=sys.stderr)
        return 1
    out_dir.mkdir(parents=True, exist_ok=True)

    sections = [_correlation_section(info, runs) for info, runs in loaded]
    (out_dir / "correlation_report.txt").write_text("\n".join(sections))

    curves = {}
    for info, runs in loaded:
        label = Path(info["dir"]).name or info["dir"]
        matrix = []
        for seed in sorted(runs):
            matrix.append([rec.test_accuracy for rec in runs[seed]])
        curves[label] = np.array(matrix)
    baseline = next(iter(curves))
    if args.target is not None:
        target = args.target
    else:
        target = float(curves[baseline].mean(axis=0)[-1])
    try:
        summaries = compare_strategies(curves, baseline=baseline, target_accuracy=target)
    except ValueError as exc:
        print(f"analyze error: {exc}", file=sys.stderr)
        return 1
    lines = [
        f"baseline: {baseline}",
        f"target_accuracy: {target!r}",
        "run\tmean_final_accuracy\tstd_final_accuracy\trounds_to_target\twin_rate_vs_baseline",
    ]
    for s in summaries:
        lines.append(
            f"{s.strategy}\t{s.mean_final_accuracy!r}\t{s.std_final_accuracy!r}"
            f"\t{s.rounds_to_target}\t{s.win_rate_vs_baseline!r}"
        )
    (out_dir / "strategy_comparison.txt").write_text("\n".join(lines) + "\n")
    print(f"wrote {out_dir / 'correlation_report.txt'} and {out_dir / 'strategy_comparison.txt'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="weiavg",
        description="Diversity-weighted federated averaging simulator.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one experiment config")
    p_run.add_argument("--config", required=True, help="path to key=value config file")
    p_run.add_argument(
        "--set",
        action="append",
        metavar="KEY=VALUE",
        help="override one config key (repeatable)",
    )
    p_run.add_argument("--out", default="weiavg_run", help="output directory")
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="run one config across an axis of values")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--axis", required=True, help=", ".join(sorted(SWEEP_AXES)))
    p_sweep.add_argument("--values", required=True, help="comma-separated axis values")
    p_sweep.add_argument("--set", action="append", metavar="KEY=VALUE")
    p_sweep.add_argument("--out", default="weiavg_sweep", help="output directory")
    p_sweep.set_defaults(func=cmd_sweep)

    p_an = sub.add_parser("analyze", help="summarize finished run directories")
    p_an.add_argument("dirs", nargs="+", help="run directories (first is the baseline)")
    p_an.add_argument("--out", default="weiavg_analysis", help="output directory")
    p_an.add_argument(
        "--target",
        type=float,
        default=None,
        help="accuracy threshold for rounds-to-target (default: baseline final mean)",
    )
    p_an.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``drivefp <command> [options]``.

Every option can also come from a JSON config file (``--config``); flags
given on the command line win. Exit status: 0 success / authorized,
1 operational error, 2 verification alert.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Sequence

from drivefp.classifiers import ALGORITHMS, Hyperparameters, check_algorithms
from drivefp.dataset import (
    CANONICAL_SCHEMA,
    Dataset,
    Schema,
    dataset_summary,
    detect_delimiter,
    parse_log,
    random_profiles,
    synthesize_dataset,
    write_log,
)
from drivefp.evaluation import (
    DEFAULT_WINDOWS,
    FeatureSpec,
    cross_validate,
    emit_report,
    feature_set_comparison,
    window_sweep,
)
from drivefp.features import WindowConfig, rank_arrays, redundant_arrays, select_top
from drivefp.training import train_bundle
from drivefp.verification import Bundle, read_stream, replay

log = logging.getLogger("drivefp")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_ALERT = 2

# Offsets added to the top-level seed for each consumer of randomness.
SEED_OFFSETS = {"folds": 0, "models": 1, "synth": 2}


@dataclass
class RunConfig:
    dataset: str | None = None
    schema: str | dict | None = None
    window: int = 60
    windows: list[int] | None = None
    top_k: int = 15
    algorithms: list[str] = field(default_factory=lambda: list(ALGORITHMS))
    hyperparameters: dict = field(default_factory=dict)
    seed: int = 42
    out: str | None = None
    paper_mode: bool = False
    normalize_first: bool = True
    folds: int = 10
    sizes: list[int] = field(default_factory=lambda: list(DEFAULT_WINDOWS))
    prior_mapping: dict | None = None
    threshold: float = 0.97
    road_type: str | None = None
    bins: int = 16
    corr_threshold: float = 0.99

    def validate(self) -> "RunConfig":
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.folds < 2:
            raise ValueError("folds must be >= 2")
        check_algorithms(self.algorithms)
        if self.dataset is not None and not Path(self.dataset).exists():
            raise FileNotFoundError(f"dataset not found: {self.dataset}")
        return self

    def hp(self) -> Hyperparameters:
        doc = {"seed": self.seed + SEED_OFFSETS["models"], **self.hyperparameters}
        return Hyperparameters.from_dict(doc)

    def window_config(self, w: int | None = None) -> WindowConfig:
        return WindowConfig(w or self.window, normalize_first=self.normalize_first)

    def feature_spec(self) -> FeatureSpec:
        return FeatureSpec(top_k=self.top_k, bins=self.bins, corr_threshold=self.corr_threshold)


def _split_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def build_config(args: argparse.Namespace) -> RunConfig:
    doc: dict = {}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            doc = json.load(fh)
        names = {f.name for f in fields(RunConfig)}
        unknown = set(doc) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
    overrides = {
        "dataset": args.dataset,
        "schema": args.schema,
        "out": args.out,
        "seed": args.seed,
        "window": args.window,
        "top_k": args.top_k,
        "folds": args.folds,
        "road_type": args.road_type,
        "threshold": args.threshold,
    }
    if args.algorithms is not None:
        overrides["algorithms"] = _split_list(args.algorithms)
    if args.windows is not None:
        overrides["windows"] = [int(w) for w in _split_list(args.windows)]
    if args.sizes is not None:
        overrides["sizes"] = [int(w) for w in _split_list(args.sizes)]
    if args.paper_mode:
        overrides["paper_mode"] = True
    if args.window_first:
        overrides["normalize_first"] = False
    for item in args.hp or []:
        key, _, value = item.partition("=")
        doc.setdefault("hyperparameters", {})[key] = json.loads(value)
    doc.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**doc).validate()


def _schema_for(cfg: RunConfig) -> Schema | None:
    if cfg.schema is None:
        return None
    if isinstance(cfg.schema, dict):
        return Schema.from_dict(cfg.schema)
    if cfg.schema == "canonical":
        return CANONICAL_SCHEMA
    return Schema.load(cfg.schema)


def _guess_schema(path: Path) -> Schema:
    with open(path, encoding="utf-8-sig") as fh:
        header = fh.readline().strip()
    delim = detect_delimiter(header)
    cols = {c.strip() for c in header.split(delim)}
    canonical = {"time_s", "Class", "road_type", "trip_id"}
    return CANONICAL_SCHEMA if canonical <= cols else Schema()


def load_dataset(cfg: RunConfig) -> Dataset:
    if cfg.dataset is None:
        raise ValueError("no dataset given (--dataset or config 'dataset')")
    path = Path(cfg.dataset)
    schema = _schema_for(cfg) or _guess_schema(path)
    return parse_log(path, schema)


def _out_dir(cfg: RunConfig, default: str) -> Path:
    out = Path(cfg.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(path: Path, text: str) -> None:
    path.write_text(text)
    log.info("wrote %s", path)


# --- commands -------------------------------------------------------------


def cmd_synth(cfg: RunConfig, args) -> int:
    profiles = random_profiles(args.drivers, args.channels, cfg.seed + SEED_OFFSETS["synth"], spread=args.spread)
    roads = _split_list(args.roads)
    ds = synthesize_dataset(
        profiles,
        args.seconds,
        cfg.seed + SEED_OFFSETS["synth"],
        road_types=roads,
        trips_per_road=args.trips,
        autocorrelation=args.autocorrelation,
    )
    text = write_log(ds)
    if cfg.out:
        Path(cfg.out).parent.mkdir(parents=True, exist_ok=True)
        _write(Path(cfg.out), text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_summary(cfg: RunConfig, args) -> int:
    sys.stdout.write(dataset_summary(load_dataset(cfg)).to_text())
    return EXIT_OK


def cmd_rank(cfg: RunConfig, args) -> int:
    ds = load_dataset(cfg)
    raw, labels = ds.values(), ds.labels().astype(str)
    channels = list(ds.channel_names)
    if not args.keep_redundant:
        channels = redundant_arrays(raw, labels, ds.channel_names, cfg.corr_threshold, cfg.bins)
    if cfg.top_k > len(channels):
        raise ValueError(f"top-k {cfg.top_k} exceeds the {len(channels)} available channels")
    idx = [ds.channel_names.index(c) for c in channels]
    ranking = rank_arrays(raw[:, idx], labels, channels, cfg.bins)
    out = _out_dir(cfg, "drivefp-out")
    _write(out / "ranking.csv", ranking.to_csv())
    for e in ranking.entries[: cfg.top_k]:
        print(f"{e.rank:>3}  {e.score:.4f}  {e.channel}")
    log.info("selected: %s", ", ".join(select_top(ranking, cfg.top_k)))
    return EXIT_OK


def cmd_train(cfg: RunConfig, args) -> int:
    ds = load_dataset(cfg)
    bundle = train_bundle(
        ds,
        cfg.algorithms,
        cfg.hp(),
        cfg.window_config(),
        cfg.feature_spec(),
        road_type=cfg.road_type,
        threshold=cfg.threshold,
    )
    out = bundle.save(_out_dir(cfg, "drivefp-bundle"))
    print(f"bundle written to {out} ({len(bundle.models)} models, channels: {', '.join(bundle.channels)})")
    return EXIT_OK


def _road_filter(cfg: RunConfig):
    return [cfg.road_type] if cfg.road_type else None


def _emit(cfg: RunConfig, report, name: str, table_fmt: str) -> None:
    out = _out_dir(cfg, "drivefp-out")
    _write(out / f"{name}.csv", emit_report(report, "csv"))
    _write(out / f"{name}_folds.csv", emit_report(report, "folds"))
    table = emit_report(report, table_fmt)
    _write(out / f"{name}.txt", table)
    print(table)


def cmd_evaluate(cfg: RunConfig, args) -> int:
    ds = load_dataset(cfg)
    report = None
    for w in cfg.windows or [cfg.window]:
        r = cross_validate(
            ds, cfg.algorithms, cfg.hp(), cfg.window_config(w), cfg.feature_spec(),
            cfg.folds, cfg.seed + SEED_OFFSETS["folds"], cfg.paper_mode, _road_filter(cfg),
        )
        report = r if report is None else report.extend(r)
    _emit(cfg, report, "evaluate", "table")
    return EXIT_OK


def cmd_sweep(cfg: RunConfig, args) -> int:
    ds = load_dataset(cfg)
    report = window_sweep(
        ds, cfg.algorithms, cfg.sizes, cfg.hp(), cfg.window_config(), cfg.feature_spec(),
        cfg.folds, cfg.seed + SEED_OFFSETS["folds"], cfg.paper_mode, _road_filter(cfg),
    )
    _emit(cfg, report, "sweep", "window-table")
    return EXIT_OK


def cmd_compare(cfg: RunConfig, args) -> int:
    ds = load_dataset(cfg)
    report = feature_set_comparison(
        ds, cfg.algorithms, cfg.window_config(), cfg.hp(), cfg.top_k, cfg.prior_mapping,
        cfg.folds, cfg.seed + SEED_OFFSETS["folds"], cfg.paper_mode, _road_filter(cfg),
    )
    _emit(cfg, report, "compare", "feature-table")
    return EXIT_OK


def _run_stream(lines, out) -> int:
    alerted = False
    for line in lines:
        out.write(line + "\n")
        out.flush()
        alerted |= line.startswith("ALERT")
    return EXIT_ALERT if alerted else EXIT_OK


def _profile(cfg: RunConfig, args):
    bundle = Bundle.load(args.bundle)
    threshold = args.threshold if args.threshold is not None else None
    algorithms = _split_list(args.algorithms) if args.algorithms else None
    return bundle.profile(args.driver, threshold, algorithms)


def cmd_verify(cfg: RunConfig, args) -> int:
    profile = _profile(cfg, args)
    schema = _schema_for(cfg) or Schema()
    source = sys.stdin if args.input in (None, "-") else open(args.input, encoding="utf-8-sig")
    try:
        records = read_stream(source, schema)
        return _run_stream(replay(profile, records, args.pacing, trip_id=args.trip_id or ""), sys.stdout)
    finally:
        if source is not sys.stdin:
            source.close()


def cmd_replay(cfg: RunConfig, args) -> int:
    profile = _profile(cfg, args)
    ds = load_dataset(cfg)
    trip = ds.trip(args.trip_id) if args.trip_id else ds.trips[0]
    return _run_stream(replay(profile, trip.records(), args.pacing, trip_id=trip.trip_id), sys.stdout)


COMMANDS = {
    "synth": cmd_synth,
    "summary": cmd_summary,
    "rank": cmd_rank,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "compare": cmd_compare,
    "verify": cmd_verify,
    "replay": cmd_replay,
}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run config; flags override its keys")
    p.add_argument("--dataset", help="per-second driving log (delimited text)")
    p.add_argument("--schema", help="schema JSON file, or 'canonical'")
    p.add_argument("--out", help="output directory (file for synth)")
    p.add_argument("--seed", type=int)
    p.add_argument("--window", type=int, help="sliding window size in seconds")
    p.add_argument("--windows", help="comma-separated window sizes (evaluate)")
    p.add_argument("--sizes", help="comma-separated window sizes (sweep)")
    p.add_argument("--top-k", type=int, dest="top_k")
    p.add_argument("--algorithms", help=f"comma-separated subset of {','.join(ALGORITHMS)}")
    p.add_argument("--folds", type=int)
    p.add_argument("--road-type", dest="road_type")
    p.add_argument("--threshold", type=float)
    p.add_argument("--paper-mode", action="store_true", help="plain per-vector folds")
    p.add_argument("--window-first", action="store_true", help="compute window statistics before scaling")
    p.add_argument("--hp", action="append", metavar="KEY=JSON", help="hyperparameter override")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="drivefp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        _common(p)
        if name == "synth":
            p.add_argument("--drivers", type=int, default=3)
            p.add_argument("--channels", type=int, default=6)
            p.add_argument("--seconds", type=int, default=600)
            p.add_argument("--trips", type=int, default=2)
            p.add_argument("--roads", default="city_way,motor_way,parking_lot")
            p.add_argument("--spread", type=float, default=5.0)
            p.add_argument("--autocorrelation", type=float, default=0.8)
        if name == "rank":
            p.add_argument("--keep-redundant", action="store_true")
        if name in ("verify", "replay"):
            p.add_argument("--bundle", required=True)
            p.add_argument("--driver", required=True, help="claimed driver label")
            p.add_argument("--pacing", choices=("max-speed", "realtime"), default="max-speed")
            p.add_argument("--trip-id", dest="trip_id")
        if name == "verify":
            p.add_argument("--input", help="record stream file; '-' or omitted reads stdin")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = build_config(args)
        return COMMANDS[args.command](cfg, args)
    except BrokenPipeError:
        # downstream reader closed early (e.g. `| head`); not an error of ours
        sys.stdout = open(os.devnull, "w")
        return EXIT_OK
    except (ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"drivefp {args.command}: error: {msg}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())

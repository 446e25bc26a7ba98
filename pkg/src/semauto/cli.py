"""``semauto`` command line.

Exit codes: 0 success, 1 invalid configuration or input, 2 runtime failure,
3 partial results. Errors are also printed to stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from contextlib import contextmanager
from pathlib import Path
from typing import List, Optional

from . import __version__
from .config import all_keys, env_name, flag_name, load_config, render_default_config
from .data import ParseStats, holdout_split, parse_genres, parse_movielens
from .exceptions import (
    ConfigError,
    ContractError,
    FormatError,
    ParseError,
    SemAutoError,
    SparqlError,
    UserNotTrainable,
)
from .utils import atomic_write, parse_id

logger = logging.getLogger("semauto")

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
EXIT_PARTIAL = 3

COMMANDS = ("ingest", "extract-features", "train-profiles", "recommend", "evaluate", "gradcheck")


class _KeyValueFormatter(logging.Formatter):
    def format(self, record):
        base = f"ts={self.formatTime(record, '%Y-%m-%dT%H:%M:%S')} level={record.levelname} logger={record.name}"
        extra = getattr(record, "fields", None)
        if extra:
            base += " " + " ".join(f"{k}={v}" for k, v in extra.items())
        return f"{base} msg={json.dumps(record.getMessage())}"


def _setup_logging(level: str) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(_KeyValueFormatter())
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(level.upper())


@contextmanager
def stage(name: str):
    t0 = time.perf_counter()
    logger.info("stage started", extra={"fields": {"stage": name}})
    yield
    logger.info("stage finished", extra={"fields": {"stage": name, "seconds": f"{time.perf_counter() - t0:.3f}"}})


def _fail(code: int, exc: BaseException) -> int:
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    if isinstance(exc, UserNotTrainable):
        payload["user_id"] = exc.user_id
        payload["mapped_items"] = exc.n_mapped
    print(json.dumps(payload, default=str), file=sys.stderr)
    return code


class _Parser(argparse.ArgumentParser):
    """Usage errors are validation failures: JSON on stderr, exit 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.exit(_fail(EXIT_VALIDATION, ConfigError(message)))


def build_parser() -> argparse.ArgumentParser:
    key_lines = "\n".join(
        f"  {s}.{k:<22} {flag_name(s, k):<32} {spec.help} [default: {spec.default!r}]"
        for s, k, spec in all_keys()
    )
    epilog = (
        "configuration keys (INI section.key, flag; env "
        f"{env_name('section', 'key')}):\n{key_lines}\n\n"
        "exit codes: 0 ok, 1 validation, 2 runtime, 3 partial results"
    )
    parser = _Parser(
        prog="semauto",
        description="Knowledge-graph autoencoder recommender: ingest, features, training, evaluation.",
        epilog=epilog,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("command", choices=COMMANDS + ("show-config",), help="what to run")
    parser.add_argument("--config", help="INI configuration file")
    parser.add_argument("--user", help="recommend: target user id")
    parser.add_argument("--top", type=int, help="recommend: list length (default protocol.top_n)")
    parser.add_argument("--k", type=int, help="recommend: neighbourhood size (default first protocol.k_values)")
    parser.add_argument("--out", help="recommend: CSV output path (default stdout)")
    parser.add_argument("--nets", type=int, default=100, help="gradcheck: random networks to test")
    parser.add_argument("--tolerance", type=float, default=1e-5, help="gradcheck: max relative error")
    for section, key, spec in all_keys():
        parser.add_argument(flag_name(section, key), dest=f"cfg__{section}__{key}", metavar="VALUE",
                            help=argparse.SUPPRESS)
    return parser


def _overrides(args) -> dict:
    out = {}
    for name, value in vars(args).items():
        if name.startswith("cfg__") and value is not None:
            _, section, key = name.split("__", 2)
            out[(section, key)] = value
    return out


def _load_ratings(cfg):
    cfg.require("ratings")
    stats = ParseStats()
    dataset = parse_movielens(cfg.get("paths", "ratings"), cfg.get("ingest", "separator"), stats=stats)
    return dataset, stats


def _load_feature_map(cfg):
    from .kg import load_feature_map

    path = cfg.path("feature_map", "features.tsv")
    if not path.exists():
        raise ConfigError(f"feature map {path} not found; run extract-features first")
    return load_feature_map(path)


def cmd_ingest(cfg, args) -> int:
    with stage("parse-ratings"):
        dataset, stats = _load_ratings(cfg)
    summary = {
        "ratings": stats.as_dict(),
        "users": len(dataset.users),
        "items": len(dataset.items),
    }
    if cfg.get("paths", "movies"):
        cfg.require("movies")
        gstats = ParseStats()
        with stage("parse-genres"):
            genres = parse_genres(cfg.get("paths", "movies"), cfg.get("ingest", "separator"), stats=gstats)
        summary["genres"] = dict(gstats.as_dict(), items=len(genres))
    seed = cfg.get("protocol", "seed")
    with stage("holdout-split"):
        split = holdout_split(dataset, cfg.get("protocol", "train_fraction"), seed)
    out = cfg.output_dir
    sep = "::"
    for name, part in (("train.dat", split.train), ("test.dat", split.test)):
        with atomic_write(out / name) as fh:
            for r in part:
                fh.write(f"{r.user_id}{sep}{r.item_id}{sep}{r.stars}{sep}{r.timestamp if r.timestamp is not None else ''}\n")
    summary["split"] = {"seed": seed, "train": len(split.train), "test": len(split.test)}
    with atomic_write(out / "ingest.json") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_extract_features(cfg, args) -> int:
    from .kg import MappingStats, TripleStats, extract_features, fetch_features_sparql, parse_mapping, save_feature_map

    cfg.require("mapping")
    mstats = MappingStats()
    mapping = parse_mapping(cfg.get("paths", "mapping"), mstats)
    predicates = cfg.get("kg", "predicates")
    namespace = cfg.get("kg", "type_namespace")
    if cfg.get("paths", "triples"):
        cfg.require("triples")
        tstats = TripleStats()
        with stage("extract-dump"):
            fmap = extract_features(Path(cfg.get("paths", "triples")), mapping, predicates,
                                    type_namespace=namespace, stats=tstats)
        source = {"triples": tstats.triples, "skipped_lines": tstats.skipped, "matched": tstats.matched}
    elif cfg.get("paths", "endpoint"):
        with stage("extract-sparql"):
            fmap = fetch_features_sparql(
                cfg.get("paths", "endpoint"), mapping, predicates,
                batch_size=cfg.get("kg", "batch_size"), max_workers=cfg.get("kg", "max_workers"),
                type_namespace=namespace, retries=cfg.get("kg", "retries"), cache_dir=cfg.get("kg", "cache_dir"),
            )
        source = {"endpoint": cfg.get("paths", "endpoint")}
    else:
        raise ConfigError("extract-features needs paths.triples or paths.endpoint")
    path = cfg.path("feature_map", "features.tsv")
    save_feature_map(fmap, path)
    summary = {
        "mapping": {"accepted": mstats.accepted, "rejected": mstats.rejected},
        "items": len(fmap),
        "features": len(fmap.vocabulary),
        "path": str(path),
        **source,
    }
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_train_profiles(cfg, args) -> int:
    from .profiles import save_profiles
    from .recommender import train_profiles

    dataset, _ = _load_ratings(cfg)
    fmap = _load_feature_map(cfg)
    with stage("train-profiles"):
        profiles, untrainable, traces = train_profiles(
            dataset, fmap, cfg.train_config(), cfg.get("train", "epsilon"),
            cfg.get("train", "include_decoder"), n_jobs=cfg.n_jobs(),
        )
    path = cfg.path("profiles", "profiles.tsv")
    save_profiles(profiles, path)
    stops = {}
    for t in traces.values():
        stops[t.stop_reason] = stops.get(t.stop_reason, 0) + 1
    summary = {
        "profiles": len(profiles),
        "untrainable": {str(u): n for u, n in sorted(untrainable.items(), key=lambda x: str(x[0]))},
        "stop_reasons": stops,
        "path": str(path),
    }
    with atomic_write(path.with_suffix(".json")) as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    print(json.dumps({k: v for k, v in summary.items() if k != "untrainable"} | {"untrainable": len(untrainable)},
                     sort_keys=True))
    return EXIT_OK


def cmd_recommend(cfg, args) -> int:
    from .profiles import load_profiles
    from .recommender import SemAutoRecommender

    if args.user is None:
        raise ConfigError("recommend needs --user")
    dataset, _ = _load_ratings(cfg)
    fmap = _load_feature_map(cfg)
    path = cfg.path("profiles", "profiles.tsv")
    if not path.exists():
        raise ConfigError(f"profiles {path} not found; run train-profiles first")
    user = parse_id(args.user)
    if user not in dataset.users:
        raise ConfigError(f"unknown user {args.user!r}")
    k = args.k or cfg.get("protocol", "k_values")[0]
    top = args.top or cfg.get("protocol", "top_n")
    est = SemAutoRecommender.from_profiles(dataset, fmap, load_profiles(path), k=k,
                                           divide_by=cfg.get("protocol", "divide_by"))
    ranked = est.recommend(user, n=top)
    if args.out:
        with atomic_write(args.out) as fh:
            ranked.write_csv(fh)
    else:
        ranked.write_csv(sys.stdout)
    return EXIT_OK


def cmd_evaluate(cfg, args) -> int:
    from .evaluation import run_cold_experiment

    dataset, _ = _load_ratings(cfg)
    cfg.require("movies")
    genres = parse_genres(cfg.get("paths", "movies"), cfg.get("ingest", "separator"))
    fmap = _load_feature_map(cfg)
    exp = cfg.experiment_config()
    exp.n_jobs = cfg.n_jobs()
    source = cfg.sources[("protocol", "seed")]
    logger.info("protocol seed", extra={"fields": {"seed": exp.split_seed, "source": source}})
    if source == "generated":
        print(json.dumps({"generated_seed": exp.split_seed}), file=sys.stderr)
    with stage("cold-experiment"):
        report = run_cold_experiment(dataset, fmap, genres, exp)
    out = cfg.output_dir
    with atomic_write(out / "report.csv") as fh:
        fh.write(report.to_csv())
    with atomic_write(out / "report.json") as fh:
        fh.write(report.to_json())
    with atomic_write(out / "plot_data.csv") as fh:
        fh.write(report.plot_data_csv())
    with atomic_write(out / "timings.json") as fh:
        json.dump(report.timings, fh, indent=2, sort_keys=True)
    sys.stdout.write(report.to_csv())
    return EXIT_PARTIAL if report.failed else EXIT_OK


def cmd_gradcheck(cfg, args) -> int:
    from .autoencoder import gradcheck

    t0 = time.perf_counter()
    seed = cfg.get("protocol", "seed")
    worst = gradcheck(n_nets=args.nets, seed=seed)
    ok = worst < args.tolerance
    print(json.dumps({
        "nets": args.nets,
        "seed": seed,
        "max_relative_error": worst,
        "tolerance": args.tolerance,
        "passed": ok,
        "seconds": round(time.perf_counter() - t0, 3),
    }))
    return EXIT_OK if ok else EXIT_RUNTIME


HANDLERS = {
    "ingest": cmd_ingest,
    "extract-features": cmd_extract_features,
    "train-profiles": cmd_train_profiles,
    "recommend": cmd_recommend,
    "evaluate": cmd_evaluate,
    "gradcheck": cmd_gradcheck,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, overrides=_overrides(args))
    except ConfigError as exc:
        return _fail(EXIT_VALIDATION, exc)
    _setup_logging(cfg.get("run", "log_level"))
    if args.command == "show-config":
        print(render_default_config() if not args.config else json.dumps(cfg.as_dict(), indent=2, default=str))
        return EXIT_OK
    try:
        with stage(args.command):
            return HANDLERS[args.command](cfg, args)
    except (ConfigError, ContractError, ParseError, FormatError) as exc:
        return _fail(EXIT_VALIDATION, exc)
    except SparqlError as exc:
        return _fail(EXIT_PARTIAL if exc.partial else EXIT_RUNTIME, exc)
    except (SemAutoError, OSError, RuntimeError, ValueError) as exc:
        return _fail(EXIT_RUNTIME, exc)


if __name__ == "__main__":
    sys.exit(main())


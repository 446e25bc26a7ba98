"""Application configuration: INI file, environment and command-line overrides.

Precedence, lowest first: built-in defaults, the ``--config`` file,
``SEMAUTO_<SECTION>__<KEY>`` environment variables, ``--<section>-<key>``
flags. Unknown sections or keys are rejected.
"""

from __future__ import annotations

import configparser
import os
import secrets
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Tuple

from .autoencoder import TrainConfig
from .evaluation import POPULARITY, RANDOM, ExperimentConfig
from .exceptions import ConfigError, ContractError
from .kg import DEFAULT_PREDICATES

ENV_PREFIX = "SEMAUTO_"


def _int_list(value: str) -> List[int]:
    return [int(v) for v in value.replace(",", " ").split()]


def _str_list(value: str) -> List[str]:
    return [v for v in value.replace(",", " ").split() if v]


def _bool(value: str) -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def _opt_int(value: str) -> Optional[int]:
    return None if value.strip() in ("", "none", "auto") else int(value)


def _opt_str(value: str) -> Optional[str]:
    return value.strip() or None


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: str
    help: str


SCHEMA: Dict[str, Dict[str, Key]] = {
    "paths": {
        "ratings": Key(_opt_str, "", "ratings file (user::item::stars::timestamp)"),
        "movies": Key(_opt_str, "", "movies file with pipe-separated genres"),
        "mapping": Key(_opt_str, "", "item<TAB>title<TAB>IRI mapping file"),
        "triples": Key(_opt_str, "", "N-Triples dump (.nt, .nt.gz, .nt.bz2)"),
        "endpoint": Key(_opt_str, "", "SPARQL endpoint URL, used when no dump is given"),
        "feature_map": Key(_opt_str, "", "feature map file (default <output_dir>/features.tsv)"),
        "profiles": Key(_opt_str, "", "profile file (default <output_dir>/profiles.tsv)"),
        "output_dir": Key(str, "out", "directory for artifacts"),
    },
    "ingest": {
        "separator": Key(str, "::", "field separator of ratings and movies files"),
    },
    "kg": {
        "predicates": Key(_str_list, " ".join(sorted(DEFAULT_PREDICATES)), "feature predicates (space or comma separated)"),
        "type_namespace": Key(_opt_str, "", "keep only rdf:type objects with this IRI prefix"),
        "batch_size": Key(int, "50", "entities per SPARQL request"),
        "max_workers": Key(int, "4", "concurrent SPARQL requests"),
        "retries": Key(int, "3", "SPARQL retries per batch"),
        "cache_dir": Key(_opt_str, "", "SPARQL response cache directory"),
    },
    "train": {
        "init_weight": Key(float, "0.001", "constant initial weight"),
        "learning_rate": Key(float, "0.1", "gradient descent step"),
        "max_epochs": Key(int, "5000", "epoch limit per user"),
        "rmse_target": Key(float, "0.001", "stop when RMSE falls to this value"),
        "min_improvement": Key(float, "1e-8", "stop when RMSE improves less than this"),
        "epsilon": Key(float, "0.01", "rating normalization clamp"),
        "include_decoder": Key(_bool, "false", "add decoder weights to feature sums"),
    },
    "protocol": {
        "train_fraction": Key(float, "0.8", "hold-out training fraction"),
        "cold_fraction": Key(float, "0.25", "share of candidates made cold"),
        "min_test_ratings": Key(int, "10", "test ratings needed to be a cold candidate"),
        "n_values": Key(_int_list, "2 5 10", "ratings given back to cold users"),
        "k_values": Key(_int_list, "10 100", "neighbourhood sizes"),
        "top_n": Key(int, "10", "recommendation list length N"),
        "relevance_threshold": Key(int, "4", "minimum stars of a relevant test item"),
        "divide_by": Key(str, "k", "completion denominator: k or owners"),
        "baselines": Key(_str_list, f"{RANDOM} {POPULARITY}", "baseline rankers to report"),
        "seed": Key(_opt_int, "", "protocol seed (generated and logged when empty)"),
    },
    "run": {
        "n_jobs": Key(_opt_int, "", "worker processes (empty: all CPUs)"),
        "log_level": Key(str, "INFO", "logging level"),
    },
}


def all_keys() -> List[Tuple[str, str, Key]]:
    return [(s, k, spec) for s, keys in SCHEMA.items() for k, spec in keys.items()]


def flag_name(section: str, key: str) -> str:
    return f"--{section}-{key.replace('_', '-')}"


def env_name(section: str, key: str) -> str:
    return f"{ENV_PREFIX}{section.upper()}__{key.upper()}"


class AppConfig:
    """Resolved configuration values, ``cfg.section.key`` or ``cfg.get(section, key)``."""

    def __init__(self, raw: Mapping[str, Mapping[str, str]], sources: Mapping[Tuple[str, str], str]):
        self._values: Dict[str, Dict[str, Any]] = {}
        self.sources = dict(sources)
        for section, keys in SCHEMA.items():
            out = {}
            for key, spec in keys.items():
                text = raw[section][key]
                try:
                    out[key] = spec.parse(text)
                except (TypeError, ValueError) as exc:
                    raise ConfigError(f"{section}.{key}: invalid value {text!r} ({exc})") from None
            self._values[section] = out
        self._check()

    def _check(self):
        p = self._values["protocol"]
        if not p["n_values"] or not p["k_values"]:
            raise ConfigError("protocol.n_values and protocol.k_values must be non-empty")
        if p["divide_by"] not in ("k", "owners"):
            raise ConfigError("protocol.divide_by must be 'k' or 'owners'")
        if p["seed"] is None:
            p["seed"] = secrets.randbelow(2**31)
            self.sources[("protocol", "seed")] = "generated"
        try:
            self.train_config()
            self.experiment_config()
        except ContractError as exc:
            raise ConfigError(str(exc)) from None

    def get(self, section: str, key: str):
        return self._values[section][key]

    def __getattr__(self, section):
        try:
            values = self.__dict__["_values"][section]
        except KeyError:
            raise AttributeError(section) from None
        return _Section(values)

    def as_dict(self) -> Dict[str, Dict[str, Any]]:
        return {s: dict(v) for s, v in self._values.items()}

    @property
    def output_dir(self) -> Path:
        return Path(self.get("paths", "output_dir"))

    def path(self, key: str, default_name: Optional[str] = None) -> Optional[Path]:
        value = self.get("paths", key)
        if value:
            return Path(value)
        return self.output_dir / default_name if default_name else None

    def require(self, *keys: str) -> None:
        """Fail when a required input path is unset or missing."""
        for key in keys:
            value = self.get("paths", key)
            if not value:
                raise ConfigError(f"paths.{key} is required for this command")
            if not Path(value).exists():
                raise ConfigError(f"paths.{key}: {value} does not exist")

    def train_config(self) -> TrainConfig:
        t = self._values["train"]
        return TrainConfig(
            init_weight=t["init_weight"],
            learning_rate=t["learning_rate"],
            max_epochs=t["max_epochs"],
            rmse_target=t["rmse_target"],
            min_improvement=t["min_improvement"],
        )

    def n_jobs(self) -> int:
        return self.get("run", "n_jobs") or os.cpu_count() or 1

    def experiment_config(self) -> ExperimentConfig:
        p = self._values["protocol"]
        t = self._values["train"]
        seed = p["seed"] if p["seed"] is not None else 0
        return ExperimentConfig(
            n_values=tuple(p["n_values"]),
            k_values=tuple(p["k_values"]),
            top_n=p["top_n"],
            relevance_threshold=p["relevance_threshold"],
            train_fraction=p["train_fraction"],
            cold_fraction=p["cold_fraction"],
            min_test_ratings=p["min_test_ratings"],
            split_seed=seed,
            cold_seed=seed,
            restore_seed=seed,
            baseline_seed=seed,
            baselines=tuple(p["baselines"]),
            divide_by=p["divide_by"],
            epsilon=t["epsilon"],
            include_decoder=t["include_decoder"],
            train=self.train_config(),
            n_jobs=self.get("run", "n_jobs"),
        )


class _Section:
    def __init__(self, values):
        self.__dict__.update(values)


def load_config(
    path: Optional[str] = None,
    env: Optional[Mapping[str, str]] = None,
    overrides: Optional[Mapping[Tuple[str, str], str]] = None,
) -> AppConfig:
    raw = {s: {k: spec.default for k, spec in keys.items()} for s, keys in SCHEMA.items()}
    sources = {(s, k): "default" for s, k, _ in all_keys()}

    if path:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            with open(path, "r", encoding="utf-8") as fh:
                parser.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        for section in parser.sections():
            if section not in SCHEMA:
                raise ConfigError(f"{path}: unknown section [{section}]")
            for key, value in parser.items(section):
                if key not in SCHEMA[section]:
                    raise ConfigError(f"{path}: unknown key {section}.{key}")
                raw[section][key] = value
                sources[(section, key)] = str(path)

    env = os.environ if env is None else env
    for name, value in env.items():
        if not name.startswith(ENV_PREFIX):
            continue
        section, sep, key = name[len(ENV_PREFIX):].lower().partition("__")
        if not sep or section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(f"unknown configuration variable {name}")
        raw[section][key] = value
        sources[(section, key)] = f"env:{name}"

    for (section, key), value in (overrides or {}).items():
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(f"unknown configuration key {section}.{key}")
        raw[section][key] = value
        sources[(section, key)] = "flag"

    return AppConfig(raw, sources)


def render_default_config() -> str:
    lines = []
    for section, keys in SCHEMA.items():
        lines.append(f"[{section}]")
        for key, spec in keys.items():
            lines.append(f"# {spec.help}")
            lines.append(f"{key} = {spec.default}")
        lines.append("")
    return "\n".join(lines)

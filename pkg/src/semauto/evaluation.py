"""Cold-user experimental protocol and report generation.

Protocol, per fixed seeds:

1. per-user hold-out split of the ratings;
2. users with at least ``min_test_ratings`` test ratings are cold candidates;
3. a ``cold_fraction`` of them become cold: all their training ratings move
   to a frozen pool;
4. for each ``n``, ``n`` frozen ratings per cold user go back to training,
   every user is trained, and cold users are evaluated on their test split
   for every neighbourhood size ``k``.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from .autoencoder import TrainConfig
from .data import InteractionDataset, SplitPair, holdout_split
from .exceptions import ContractError
from .metrics import (
    err_ia_at,
    f1_at,
    ndcg_at,
    precision_at,
    recall_at,
    relevant_items,
    topic_distribution,
)
from .profiles import ProfileIndex, complete_profile
from .recommender import popularity_top_n, random_top_n, recommend_top_n, train_profiles
from .utils import id_key, rng_for, round_half_up

logger = logging.getLogger(__name__)

SEMAUTO = "SEM-AUTO"
RANDOM = "RANDOM"
POPULARITY = "POPULARITY"
METRIC_NAMES = ("f1", "precision", "recall", "nDCG", "ERR-IA")


@dataclass(frozen=True)
class ColdScenario:
    cold_users: Tuple
    frozen: InteractionDataset
    reduced_train: InteractionDataset
    seed: int


def select_cold_candidates(split: SplitPair, min_test_ratings: int = 10) -> List:
    """Users with at least ``min_test_ratings`` ratings in the test part, sorted by id."""
    if min_test_ratings < 1:
        raise ContractError(f"min_test_ratings must be >= 1, got {min_test_ratings}")
    return [u for u in split.test.users if split.test.count(u) >= min_test_ratings]


def make_cold_scenario(split: SplitPair, candidates, fraction: float = 0.25, seed: int = 0) -> ColdScenario:
    """Pick ``round(fraction * |candidates|)`` cold users and freeze their training ratings."""
    if not 0 < fraction <= 1:
        raise ContractError(f"fraction must lie in (0, 1], got {fraction}")
    pool = sorted(set(candidates), key=id_key)
    if not pool:
        raise ContractError("no cold-user candidates")
    size = round_half_up(fraction * len(pool))
    chosen = rng_for(seed, "cold-users").choice(len(pool), size=size, replace=False)
    cold = tuple(sorted((pool[i] for i in chosen), key=id_key))
    return ColdScenario(
        cold_users=cold,
        frozen=split.train.only_users(cold),
        reduced_train=split.train.without_users(cold),
        seed=seed,
    )


def restore_n_ratings(scenario: ColdScenario, n: int, seed: int = 0):
    """Choose ``n`` frozen ratings per cold user to move back into training.

    Returns ``(additions, dropped)``: the moved ratings and the cold users
    with fewer than ``n`` frozen ratings, who sit out this ``n``. The choice
    for a user depends only on ``(seed, n, user)``.
    """
    if n < 1:
        raise ContractError(f"n must be >= 1, got {n}")
    additions = []
    dropped = []
    for user in scenario.cold_users:
        records = sorted(scenario.frozen.user_records(user), key=lambda r: id_key(r.item_id))
        if len(records) < n:
            dropped.append(user)
            continue
        picks = rng_for(seed, "restore", n, user).choice(len(records), size=n, replace=False)
        additions.extend(records[i] for i in sorted(picks))
    return InteractionDataset(additions), dropped


def check_partition(original: InteractionDataset, *parts: InteractionDataset) -> bool:
    """True when ``parts`` are pairwise disjoint and their union is ``original``."""
    seen = set()
    for part in parts:
        keys = part.keys()
        if seen & keys:
            return False
        seen |= keys
    return seen == original.keys()


@dataclass
class ExperimentConfig:
    n_values: Sequence[int] = (2, 5, 10)
    k_values: Sequence[int] = (10, 100)
    top_n: int = 10
    relevance_threshold: int = 4
    train_fraction: float = 0.8
    cold_fraction: float = 0.25
    min_test_ratings: int = 10
    split_seed: int = 0
    cold_seed: int = 0
    restore_seed: int = 0
    baseline_seed: int = 0
    baselines: Sequence[str] = (RANDOM, POPULARITY)
    divide_by: str = "k"
    epsilon: float = 0.01
    include_decoder: bool = False
    train: TrainConfig = field(default_factory=TrainConfig)
    n_jobs: Optional[int] = None

    def __post_init__(self):
        if not self.n_values or not self.k_values:
            raise ContractError("n_values and k_values must be non-empty")
        if any(k < 1 for k in self.k_values) or any(n < 1 for n in self.n_values):
            raise ContractError("n_values and k_values must be positive")
        unknown = set(self.baselines) - {RANDOM, POPULARITY}
        if unknown:
            raise ContractError(f"unknown baselines {sorted(unknown)}")

    def as_dict(self) -> dict:
        d = asdict(self)
        d.pop("n_jobs")
        d["n_values"] = list(self.n_values)
        d["k_values"] = list(self.k_values)
        d["baselines"] = list(self.baselines)
        return d


@dataclass
class EvaluationReport:
    config: dict
    cells: List[dict]
    counts: dict
    per_user: Dict[str, dict]
    notes: List[str] = field(default_factory=list)
    timings: Dict[str, float] = field(default_factory=dict)

    def cell(self, method: str, n: int, k=None) -> dict:
        for c in self.cells:
            if c["method"] == method and c["n"] == n and c["k"] == k:
                return c
        raise KeyError((method, n, k))

    @property
    def failed(self) -> List[dict]:
        return [c for c in self.cells if c["status"] != "ok"]

    def body(self) -> dict:
        """Everything except wall-clock timings; identical for identical seeds."""
        return {
            "config": self.config,
            "cells": self.cells,
            "counts": self.counts,
            "per_user": self.per_user,
            "notes": self.notes,
        }

    def to_json(self, include_timings: bool = False) -> str:
        doc = self.body()
        if include_timings:
            doc = dict(doc, timings=self.timings)
        return json.dumps(doc, indent=2, sort_keys=True)

    def table_header(self) -> List[str]:
        top = self.config["top_n"]
        return ["method", "#ratings", "k"] + [f"{m}@{top}" for m in METRIC_NAMES] + ["users", "status"]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.table_header())
        for c in self.cells:
            k = "-" if c["k"] is None else c["k"]
            values = ["" if c["metrics"].get(m) is None else repr(c["metrics"][m]) for m in METRIC_NAMES]
            writer.writerow([c["method"], c["n"], k] + values + [c["users"], c["status"]])
        return buf.getvalue()

    def plot_data_csv(self) -> str:
        """F1@N against k, one series per ``n``, plus flat baseline rows."""
        top = self.config["top_n"]
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["method", "#ratings", "k", f"f1@{top}"])
        ks = self.config["k_values"]
        for c in self.cells:
            if c["status"] != "ok":
                continue
            f1 = repr(c["metrics"]["f1"])
            if c["k"] is None:
                for k in ks:
                    writer.writerow([c["method"], c["n"], k, f1])
            else:
                writer.writerow([c["method"], c["n"], c["k"], f1])
        return buf.getvalue()


def _user_metrics(ranked, test_ratings, train_items, genres, cfg, missing_genres):
    top = cfg.top_n
    rel = relevant_items(test_ratings, cfg.relevance_threshold)
    p = precision_at(ranked, rel, top) if rel else None
    r = recall_at(ranked, rel, top)
    return {
        "precision": p,
        "recall": r,
        "f1": None if p is None else f1_at(p, r),
        "nDCG": ndcg_at(ranked, test_ratings, top),
        "ERR-IA": err_ia_at(ranked, test_ratings, genres, topic_distribution(train_items, genres), top,
                            missing=missing_genres),
    }


def _average(per_user: Mapping[object, dict]) -> Tuple[dict, dict]:
    means, support = {}, {}
    for m in ("precision", "recall", "nDCG", "ERR-IA"):
        vals = [d[m] for d in per_user.values() if d[m] is not None]
        support[m] = len(vals)
        means[m] = sum(vals) / len(vals) if vals else None
    # F1 of the averaged precision and recall
    if means["precision"] is None or means["recall"] is None:
        means["f1"] = None
    else:
        means["f1"] = f1_at(means["precision"], means["recall"])
    f1s = [d["f1"] for d in per_user.values() if d["f1"] is not None]
    means["f1_user_mean"] = sum(f1s) / len(f1s) if f1s else None
    return means, support


def _cell(method, n, k, per_user, extra=None):
    means, support = _average(per_user)
    cell = {
        "method": method,
        "n": n,
        "k": k,
        "status": "ok",
        "users": len(per_user),
        "support": support,
        "metrics": means,
    }
    if extra:
        cell.update(extra)
    return cell


def _failed_cell(method, n, k, exc):
    logger.exception("cell %s n=%s k=%s failed", method, n, k)
    return {
        "method": method, "n": n, "k": k, "status": "failed",
        "error": f"{type(exc).__name__}: {exc}", "users": 0, "support": {}, "metrics": {},
    }


def prepare_protocol(dataset: InteractionDataset, cfg: ExperimentConfig):
    split = holdout_split(dataset, cfg.train_fraction, cfg.split_seed)
    candidates = select_cold_candidates(split, cfg.min_test_ratings)
    scenario = make_cold_scenario(split, candidates, cfg.cold_fraction, cfg.cold_seed)
    return split, candidates, scenario


def run_cold_experiment(
    dataset: InteractionDataset,
    feature_map: Mapping,
    genres: Mapping,
    cfg: Optional[ExperimentConfig] = None,
) -> EvaluationReport:
    """Run the whole protocol and return one report cell per (method, n, k)."""
    cfg = cfg or ExperimentConfig()
    timings: Dict[str, float] = {}
    t0 = time.perf_counter()
    split, candidates, scenario = prepare_protocol(dataset, cfg)
    timings["protocol"] = time.perf_counter() - t0
    cold = set(scenario.cold_users)
    original_cold = dataset.only_users(cold)
    test_cold = split.test.only_users(cold)
    if not check_partition(original_cold, scenario.frozen, test_cold):
        raise AssertionError("cold scenario does not partition the cold users' ratings")

    catalogue = sorted((i for i in dataset.items if i in feature_map), key=id_key)
    counts = {
        "ratings": len(dataset),
        "users": len(dataset.users),
        "items": len(dataset.items),
        "mapped_items": len(catalogue),
        "train_ratings": len(split.train),
        "test_ratings": len(split.test),
        "cold_candidates": len(candidates),
        "cold_users": len(scenario.cold_users),
        "per_n": {},
    }
    cells: List[dict] = []
    per_user_out: Dict[str, dict] = {}
    notes: List[str] = []
    stable_profiles: Dict = {}

    for n in cfg.n_values:
        n_counts: dict = {}
        counts["per_n"][str(n)] = n_counts
        t_n = time.perf_counter()
        try:
            additions, dropped = restore_n_ratings(scenario, n, cfg.restore_seed)
            remaining = InteractionDataset(r for r in scenario.frozen if r.key not in additions)
            if not check_partition(original_cold, additions, remaining, test_cold):
                raise AssertionError(f"partition law violated for n={n}")
            train_n = scenario.reduced_train.union(additions)

            # warm users train on identical data for every n; only cold users are refit
            todo = [u for u in train_n.users if u in cold or u not in stable_profiles]
            fresh, untrainable, _ = train_profiles(
                train_n, feature_map, cfg.train, cfg.epsilon, cfg.include_decoder, cfg.n_jobs, users=todo
            )
            for u, p in fresh.items():
                if u not in cold:
                    stable_profiles[u] = p
            profiles = {u: stable_profiles[u] for u in train_n.users if u in stable_profiles and u not in cold}
            profiles.update({u: p for u, p in fresh.items() if u in cold})
            index = ProfileIndex(profiles)
            evaluable = [u for u in scenario.cold_users if u in profiles]
            cold_untrainable = sorted((u for u in untrainable if u in cold), key=id_key)
            n_counts.update({
                "restored_ratings": len(additions),
                "dropped_users": len(dropped),
                "untrainable_cold_users": len(cold_untrainable),
                "untrainable_users": len(untrainable),
                "evaluable_users": len(evaluable),
            })
            popularity = train_n.item_popularity()
        except Exception as exc:
            for k in cfg.k_values:
                cells.append(_failed_cell(SEMAUTO, n, k, exc))
            for b in cfg.baselines:
                cells.append(_failed_cell(b, n, None, exc))
            continue
        timings[f"train_n{n}"] = time.perf_counter() - t_n

        def user_context(u):
            train_items = train_n.user_ratings(u)
            return train_items, split.test.user_ratings(u), [i for i in catalogue if i not in train_items]

        for k in cfg.k_values:
            t_k = time.perf_counter()
            try:
                missing: list = []
                per_user = {}
                for u in evaluable:
                    train_items, test_ratings, pool = user_context(u)
                    nbrs = index.neighbors(u, k)
                    completed = complete_profile(profiles[u], nbrs, profiles, k, cfg.divide_by)
                    ranked = recommend_top_n(completed, pool, feature_map, cfg.top_n)
                    per_user[u] = _user_metrics(ranked, test_ratings, train_items, genres, cfg, missing)
                cells.append(_cell(SEMAUTO, n, k, per_user, {"items_without_genres": len(missing)}))
                per_user_out[f"{SEMAUTO}|n={n}|k={k}"] = {str(u): v for u, v in per_user.items()}
            except Exception as exc:
                cells.append(_failed_cell(SEMAUTO, n, k, exc))
            timings[f"eval_n{n}_k{k}"] = time.perf_counter() - t_k

        for method in cfg.baselines:
            try:
                missing = []
                per_user = {}
                for u in evaluable:
                    train_items, test_ratings, pool = user_context(u)
                    if method == RANDOM:
                        ranked = random_top_n(u, pool, cfg.top_n, seed=cfg.baseline_seed)
                    else:
                        ranked = popularity_top_n(u, pool, popularity, cfg.top_n)
                    per_user[u] = _user_metrics(ranked, test_ratings, train_items, genres, cfg, missing)
                cells.append(_cell(method, n, None, per_user))
                per_user_out[f"{method}|n={n}"] = {str(u): v for u, v in per_user.items()}
            except Exception as exc:
                cells.append(_failed_cell(method, n, None, exc))

    timings["total"] = time.perf_counter() - t0
    if any(c["status"] != "ok" for c in cells):
        notes.append("some cells failed; see their 'error' field")
    return EvaluationReport(
        config=cfg.as_dict(),
        cells=cells,
        counts=counts,
        per_user=per_user_out,
        notes=notes,
        timings=timings,
    )

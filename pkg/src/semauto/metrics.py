"""Top-N accuracy and intent-aware diversity metrics."""

from __future__ import annotations

import math
from typing import Iterable, Mapping, Optional, Sequence

from .exceptions import ContractError

GRADE_MAX = 5


def _top(ranked: Sequence, n: int) -> list:
    if n < 1:
        raise ContractError(f"N must be >= 1, got {n}")
    if hasattr(ranked, "entries"):
        return [i for i, _ in ranked.entries[:n]]
    return list(ranked)[:n]


def relevant_items(test_ratings: Mapping, threshold: int = 4) -> frozenset:
    return frozenset(i for i, stars in test_ratings.items() if stars >= threshold)


def precision_at(ranked, relevant: Iterable, n: int) -> float:
    """Hits in the first ``n`` positions divided by ``n`` (even for shorter lists)."""
    top = _top(ranked, n)
    rel = set(relevant)
    return sum(1 for i in top if i in rel) / n


def recall_at(ranked, relevant: Iterable, n: int) -> Optional[float]:
    """Hits in the first ``n`` positions over the number of relevant items; ``None`` if there are none."""
    rel = set(relevant)
    top = _top(ranked, n)
    if not rel:
        return None
    return sum(1 for i in top if i in rel) / len(rel)


def f1_at(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2.0 * p * r / (p + r)


def dcg(gains: Iterable[float]) -> float:
    return sum((2.0 ** g - 1.0) / math.log2(1.0 + pos) for pos, g in enumerate(gains, start=1))


def ndcg_at(ranked, test_ratings: Mapping, n: int) -> float:
    """nDCG with gain ``2**stars - 1``; the ideal list is the user's test ratings sorted."""
    top = _top(ranked, n)
    actual = dcg(test_ratings.get(i, 0) for i in top)
    ideal = dcg(sorted(test_ratings.values(), reverse=True)[:n])
    return 0.0 if ideal == 0 else actual / ideal


def grade_probability(stars: float, grade_max: int = GRADE_MAX) -> float:
    return (2.0 ** stars - 1.0) / 2.0 ** grade_max


def topic_distribution(items: Iterable, genres: Mapping) -> dict:
    """Genre frequencies over ``items``; uniform over all genres if none carry one."""
    counts: dict = {}
    for i in items:
        for g in genres.get(i, ()):
            counts[g] = counts.get(g, 0) + 1
    if not counts:
        universe = sorted(set().union(*genres.values())) if genres else []
        return {g: 1.0 / len(universe) for g in universe}
    total = sum(counts.values())
    return {g: c / total for g, c in sorted(counts.items())}


def err_ia_at(ranked, test_ratings: Mapping, genres: Mapping, topic_dist: Mapping, n: int,
              missing: Optional[list] = None) -> float:
    """Intent-aware expected reciprocal rank over the first ``n`` positions.

    An item is relevant to topic ``t`` with probability ``(2**g - 1) / 2**5``
    when it carries genre ``t`` (``g`` is its test rating, 0 if untested).
    Items missing from ``genres`` count as irrelevant to every topic and are
    appended to ``missing`` when given.
    """
    total = sum(topic_dist.values())
    if topic_dist and abs(total - 1.0) > 1e-9:
        raise ContractError(f"topic distribution must sum to 1, got {total}")
    top = _top(ranked, n)
    score = 0.0
    for t, p_t in topic_dist.items():
        if p_t == 0:
            continue
        not_yet = 1.0
        for rank, item in enumerate(top, start=1):
            item_genres = genres.get(item)
            if item_genres is None:
                if missing is not None and item not in missing:
                    missing.append(item)
                continue
            if t not in item_genres:
                continue
            r = grade_probability(test_ratings.get(item, 0))
            score += p_t * not_yet * r / rank
            not_yet *= 1.0 - r
    return score

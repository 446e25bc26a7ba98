"""MovieLens-style ratings and genre files, rating normalization and hold-out splits."""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, Iterator, List, Mapping, Optional, Tuple, Union

import numpy as np

from .exceptions import ContractError, ParseError
from .utils import id_key, parse_id, rng_for, round_half_up

logger = logging.getLogger(__name__)

ItemId = Union[int, str]
UserId = Union[int, str]

MIN_STARS = 1
MAX_STARS = 5
DEFAULT_EPSILON = 0.01


@dataclass(frozen=True, order=True)
class Rating:
    user_id: UserId
    item_id: ItemId
    stars: int
    timestamp: Optional[int] = None

    @property
    def key(self) -> Tuple[UserId, ItemId]:
        return (self.user_id, self.item_id)


class InteractionDataset:
    """Immutable set of ratings with per-user and per-item indexes.

    Duplicate (user, item) pairs are resolved at construction: the last one
    wins and the number of overwrites is kept in ``duplicates``.
    """

    def __init__(self, ratings: Iterable[Rating] = ()):
        by_key: Dict[Tuple[UserId, ItemId], Rating] = {}
        duplicates = 0
        for r in ratings:
            if r.key in by_key:
                duplicates += 1
            by_key[r.key] = r
        self._ratings: Tuple[Rating, ...] = tuple(
            sorted(by_key.values(), key=lambda r: (id_key(r.user_id), id_key(r.item_id)))
        )
        self.duplicates = duplicates
        by_user: Dict[UserId, Dict[ItemId, Rating]] = defaultdict(dict)
        for r in self._ratings:
            by_user[r.user_id][r.item_id] = r
        self._by_user = dict(by_user)
        self._items = frozenset(r.item_id for r in self._ratings)

    def __len__(self) -> int:
        return len(self._ratings)

    def __iter__(self) -> Iterator[Rating]:
        return iter(self._ratings)

    def __contains__(self, key) -> bool:
        user, item = key
        return item in self._by_user.get(user, ())

    def __eq__(self, other) -> bool:
        if not isinstance(other, InteractionDataset):
            return NotImplemented
        return self._ratings == other._ratings

    def __repr__(self) -> str:
        return (
            f"InteractionDataset(ratings={len(self)}, users={len(self._by_user)}, "
            f"items={len(self._items)})"
        )

    @property
    def ratings(self) -> Tuple[Rating, ...]:
        return self._ratings

    @property
    def users(self) -> List[UserId]:
        return sorted(self._by_user, key=id_key)

    @property
    def items(self) -> FrozenSet[ItemId]:
        return self._items

    def keys(self) -> FrozenSet[Tuple[UserId, ItemId]]:
        return frozenset(r.key for r in self._ratings)

    def user_ratings(self, user: UserId) -> Dict[ItemId, int]:
        """Item -> stars for one user (empty for unknown users)."""
        return {item: r.stars for item, r in self._by_user.get(user, {}).items()}

    def user_records(self, user: UserId) -> List[Rating]:
        return list(self._by_user.get(user, {}).values())

    def count(self, user: UserId) -> int:
        return len(self._by_user.get(user, ()))

    def item_popularity(self) -> Dict[ItemId, int]:
        counts: Dict[ItemId, int] = defaultdict(int)
        for r in self._ratings:
            counts[r.item_id] += 1
        return dict(counts)

    def union(self, *others: "InteractionDataset") -> "InteractionDataset":
        merged = list(self._ratings)
        for o in others:
            merged.extend(o.ratings)
        return InteractionDataset(merged)

    def without_users(self, users: Iterable[UserId]) -> "InteractionDataset":
        drop = set(users)
        return InteractionDataset(r for r in self._ratings if r.user_id not in drop)

    def only_users(self, users: Iterable[UserId]) -> "InteractionDataset":
        keep = set(users)
        return InteractionDataset(r for r in self._ratings if r.user_id in keep)

    @classmethod
    def from_tuples(cls, rows: Iterable[tuple]) -> "InteractionDataset":
        """Build from ``(user, item, stars[, timestamp])`` tuples."""
        out = []
        for row in rows:
            user, item, stars = row[0], row[1], int(row[2])
            ts = int(row[3]) if len(row) > 3 and row[3] is not None else None
            if not MIN_STARS <= stars <= MAX_STARS:
                raise ContractError(f"stars out of range for ({user}, {item}): {stars}")
            out.append(Rating(user, item, stars, ts))
        return cls(out)


@dataclass
class ParseStats:
    lines: int = 0
    accepted: int = 0
    malformed: int = 0
    out_of_range: int = 0
    duplicates: int = 0
    empty_genres: int = 0
    errors: List[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "lines": self.lines,
            "accepted": self.accepted,
            "malformed": self.malformed,
            "out_of_range": self.out_of_range,
            "duplicates": self.duplicates,
            "empty_genres": self.empty_genres,
        }


@dataclass(frozen=True)
class SplitPair:
    train: InteractionDataset
    test: InteractionDataset


def _read_lines(path, encoding="latin-1"):
    # MovieLens 1M ships Latin-1 titles
    with open(path, "r", encoding=encoding, newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            yield lineno, line.rstrip("\r\n")


def parse_movielens(
    ratings_path: Union[str, Path],
    separator: str = "::",
    strict: bool = False,
    stats: Optional[ParseStats] = None,
) -> InteractionDataset:
    """Parse a ``user<sep>item<sep>stars[<sep>timestamp]`` ratings file.

    Malformed lines and out-of-range stars are skipped and counted in
    ``stats``; with ``strict=True`` the first malformed line raises
    :class:`ParseError` carrying its line number.
    """
    stats = stats if stats is not None else ParseStats()
    ratings: List[Rating] = []
    for lineno, line in _read_lines(ratings_path):
        if not line.strip():
            continue
        stats.lines += 1
        parts = line.split(separator)
        try:
            if len(parts) < 3:
                raise ValueError(f"expected >=3 fields, got {len(parts)}")
            stars = int(parts[2])
            ts = int(parts[3]) if len(parts) > 3 and parts[3].strip() else None
        except ValueError as exc:
            stats.malformed += 1
            msg = f"{ratings_path}:{lineno}: {exc}"
            if strict:
                raise ParseError(msg, lineno=lineno) from exc
            stats.errors.append(msg)
            continue
        if not MIN_STARS <= stars <= MAX_STARS:
            stats.out_of_range += 1
            continue
        ratings.append(Rating(parse_id(parts[0]), parse_id(parts[1]), stars, ts))
    dataset = InteractionDataset(ratings)
    stats.duplicates += dataset.duplicates
    stats.accepted = len(dataset)
    if dataset.duplicates:
        logger.warning("%s: %d duplicate ratings, last occurrence kept", ratings_path, dataset.duplicates)
    logger.info(
        "parsed %s: %d ratings, %d users, %d items (%d malformed, %d out of range)",
        ratings_path, len(dataset), len(dataset.users), len(dataset.items),
        stats.malformed, stats.out_of_range,
    )
    return dataset


GenreMap = Dict[ItemId, FrozenSet[str]]


def parse_genres(
    movies_path: Union[str, Path],
    separator: str = "::",
    stats: Optional[ParseStats] = None,
) -> GenreMap:
    """Parse ``id<sep>title<sep>Genre|Genre`` lines into item -> genre set."""
    stats = stats if stats is not None else ParseStats()
    genres: GenreMap = {}
    for lineno, line in _read_lines(movies_path):
        if not line.strip():
            continue
        stats.lines += 1
        parts = line.split(separator)
        if len(parts) < 3:
            stats.malformed += 1
            stats.errors.append(f"{movies_path}:{lineno}: expected 3 fields")
            continue
        # titles may themselves contain the separator; genres are always last
        item = parse_id(parts[0])
        labels = frozenset(g.strip() for g in parts[-1].split("|") if g.strip())
        if not labels:
            stats.empty_genres += 1
            genres.pop(item, None)
            continue
        if item in genres:
            stats.duplicates += 1
        genres[item] = labels
        stats.accepted += 1
    if stats.empty_genres or stats.duplicates:
        logger.warning(
            "%s: %d items without genres, %d duplicate ids",
            movies_path, stats.empty_genres, stats.duplicates,
        )
    return genres


def normalize_rating(stars, epsilon: float = DEFAULT_EPSILON):
    """Map 1..5 stars to ``[epsilon, 1 - epsilon]`` via (stars - 1) / 4.

    Accepts a scalar or an array; scalars come back as ``float``.
    """
    arr = np.asarray(stars, dtype=float)
    if np.any(arr < MIN_STARS) or np.any(arr > MAX_STARS) or np.any(np.isnan(arr)):
        raise ContractError(f"stars must lie in [{MIN_STARS}, {MAX_STARS}], got {stars!r}")
    if not 0 <= epsilon < 0.5:
        raise ContractError(f"epsilon must lie in [0, 0.5), got {epsilon}")
    out = np.clip((arr - MIN_STARS) / (MAX_STARS - MIN_STARS), epsilon, 1.0 - epsilon)
    return float(out) if out.ndim == 0 else out


def holdout_split(dataset: InteractionDataset, train_fraction: float = 0.8, seed: int = 0) -> SplitPair:
    """Per-user random hold-out.

    Each user keeps ``round_half_up(train_fraction * count)`` ratings in the
    training part, and never fewer than one. The permutation of a user's ratings depends only on
    ``(seed, user)``.
    """
    if not 0 < train_fraction < 1:
        raise ContractError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    train: List[Rating] = []
    test: List[Rating] = []
    for user in dataset.users:
        records = sorted(dataset.user_records(user), key=lambda r: id_key(r.item_id))
        n_train = max(1, round_half_up(train_fraction * len(records)))
        order = rng_for(seed, user).permutation(len(records))
        for rank, idx in enumerate(order):
            (train if rank < n_train else test).append(records[idx])
    return SplitPair(InteractionDataset(train), InteractionDataset(test))


__all__ = [
    "Rating",
    "InteractionDataset",
    "ParseStats",
    "SplitPair",
    "GenreMap",
    "parse_movielens",
    "parse_genres",
    "normalize_rating",
    "holdout_split",
]

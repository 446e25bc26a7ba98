"""Synthetic catalogues whose ratings depend only on item features.

Users fall into taste groups; each group likes a few features. An item's
rating is a fixed function of how many liked features it carries, so a
recommender that recovers the feature preferences can beat chance.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, FrozenSet, List, Optional

import numpy as np

from .data import GenreMap, InteractionDataset, Rating
from .kg import ItemFeatureMap

FEATURE_PREFIX = "http://example.org/category/F"


@dataclass
class SyntheticData:
    dataset: InteractionDataset
    feature_map: ItemFeatureMap
    genres: GenreMap
    liked: Dict[int, FrozenSet[str]]


def stars_for(overlap: int) -> int:
    """1 star for no liked feature, 4 for one, 5 for two or more."""
    return 1 if overlap == 0 else min(5, 1 + 3 * overlap)


def make_synthetic(
    n_users: int = 100,
    n_items: int = 50,
    n_features: int = 12,
    n_groups: int = 4,
    features_per_item: int = 1,
    min_rated: int = 20,
    max_rated: Optional[int] = 30,
    selection_bias: float = 6.0,
    seed: int = 0,
) -> SyntheticData:
    """Generate ratings, item features and genres (genres mirror the features).

    ``selection_bias`` makes items carrying a liked feature that many times
    more likely to be among the rated ones; star values do not depend on it.
    """
    rng = np.random.default_rng(seed)
    features = [f"{FEATURE_PREFIX}{j:02d}" for j in range(n_features)]
    item_feats = {}
    for item in range(1, n_items + 1):
        picks = rng.choice(n_features, size=features_per_item, replace=False)
        item_feats[item] = frozenset(features[j] for j in picks)

    # each group likes a disjoint slice of the feature vocabulary
    per_group = max(1, n_features // n_groups)
    groups = [frozenset(features[g * per_group:(g + 1) * per_group]) for g in range(n_groups)]

    ratings: List[Rating] = []
    liked = {}
    for user in range(1, n_users + 1):
        taste = groups[int(rng.integers(n_groups))]
        liked[user] = taste
        n_rated = int(rng.integers(min_rated, (max_rated or n_items) + 1))
        odds = np.array([selection_bias if item_feats[i] & taste else 1.0 for i in range(1, n_items + 1)])
        chosen = rng.choice(np.arange(1, n_items + 1), size=n_rated, replace=False, p=odds / odds.sum())
        for item in sorted(chosen.tolist()):
            ratings.append(Rating(user, item, stars_for(len(item_feats[item] & taste))))

    genres: GenreMap = {i: frozenset(f.rsplit("/", 1)[-1] for f in fs) for i, fs in item_feats.items()}
    return SyntheticData(InteractionDataset(ratings), ItemFeatureMap(item_feats), genres, liked)


def write_files(data: SyntheticData, directory) -> Dict[str, str]:
    """Write ``data`` as MovieLens-style files, a mapping and an N-Triples dump."""
    from pathlib import Path

    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    paths = {name: str(out / name) for name in ("ratings.dat", "movies.dat", "mapping.tsv", "kg.nt")}
    with open(paths["ratings.dat"], "w", encoding="latin-1") as fh:
        for r in data.dataset:
            fh.write(f"{r.user_id}::{r.item_id}::{r.stars}::{978300000 + r.item_id}\n")
    with open(paths["movies.dat"], "w", encoding="latin-1") as fh:
        for item, gs in sorted(data.genres.items()):
            fh.write(f"{item}::Movie {item} (2000)::{'|'.join(sorted(gs))}\n")
    with open(paths["mapping.tsv"], "w", encoding="utf-8") as fh, open(paths["kg.nt"], "w", encoding="utf-8") as nt:
        for item, feats in data.feature_map.items():
            entity = f"http://example.org/resource/Movie_{item}"
            fh.write(f"{item}\tMovie {item}\t{entity}\n")
            for f in sorted(feats):
                nt.write(f"<{entity}> <http://purl.org/dc/terms/subject> <{f}> .\n")
            nt.write(f'<{entity}> <http://www.w3.org/2000/01/rdf-schema#label> "Movie {item}"@en .\n')
    return paths

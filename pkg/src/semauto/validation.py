"""Input coercion for the estimators, in the spirit of ``sklearn.utils.validation``."""

from __future__ import annotations

from collections.abc import Mapping

from .data import MAX_STARS, MIN_STARS, InteractionDataset, Rating
from .exceptions import ContractError
from .kg import ItemFeatureMap


def check_feature_map(feature_map) -> ItemFeatureMap:
    if feature_map is None:
        raise ContractError("feature_map is required")
    if isinstance(feature_map, ItemFeatureMap):
        return feature_map
    if not isinstance(feature_map, Mapping):
        raise ContractError(f"feature_map must be a mapping item -> features, got {type(feature_map).__name__}")
    return ItemFeatureMap(feature_map)


def _check_stars(stars, where):
    try:
        value = int(stars)
    except (TypeError, ValueError):
        raise ContractError(f"non-integer stars {stars!r} for {where}") from None
    if value != stars or not MIN_STARS <= value <= MAX_STARS:
        raise ContractError(f"stars must be an integer in [{MIN_STARS}, {MAX_STARS}], got {stars!r} for {where}")
    return value


def check_user_ratings(X) -> dict:
    """Accept ``{item: stars}`` or ``[(item, stars), ...]``; return a validated dict."""
    pairs = X.items() if isinstance(X, Mapping) else X
    out = {}
    try:
        for item, stars in pairs:
            out[item] = _check_stars(stars, f"item {item!r}")
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ContractError):
            raise
        raise ContractError("user ratings must be a mapping item -> stars or (item, stars) pairs") from exc
    return out


def check_interactions(X) -> InteractionDataset:
    """Accept an :class:`InteractionDataset`, a DataFrame or ``(user, item, stars)`` rows."""
    if isinstance(X, InteractionDataset):
        return X
    if hasattr(X, "itertuples") and hasattr(X, "columns"):
        cols = list(X.columns)
        wanted = [c for c in ("user_id", "item_id", "stars") if c in cols]
        frame = X[wanted] if len(wanted) == 3 else X.iloc[:, :3]
        rows = frame.itertuples(index=False, name=None)
    else:
        rows = X
    ratings = []
    for row in rows:
        if len(row) < 3:
            raise ContractError(f"expected (user, item, stars) rows, got {row!r}")
        user, item, stars = row[0], row[1], row[2]
        ratings.append(Rating(user, item, _check_stars(stars, f"({user!r}, {item!r})")))
    return InteractionDataset(ratings)

"""Additive feature scoring, top-N lists and the end-to-end recommender estimator."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Tuple

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .autoencoder import TrainConfig, train_user
from .exceptions import ContractError, UserNotTrainable
from .profiles import FeatureProfile, ProfileIndex, build_profile, complete_profile
from .utils import id_key, rng_for
from .validation import check_feature_map, check_interactions

logger = logging.getLogger(__name__)


@dataclass
class RankedList:
    user_id: object
    entries: List[Tuple[object, float]]

    @property
    def items(self) -> List:
        return [i for i, _ in self.entries]

    def __len__(self) -> int:
        return len(self.entries)

    def write_csv(self, fh) -> None:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["rank", "item_id", "score"])
        for rank, (item, score) in enumerate(self.entries, start=1):
            writer.writerow([rank, item, repr(float(score))])


def score_item(profile: FeatureProfile, item_features: Iterable[str]) -> float:
    """Sum of profile weights over the item's features (missing ones add 0)."""
    weights = profile.weights
    return float(sum(weights.get(f, 0.0) for f in item_features))


def _rank(scores: Iterable[Tuple[object, float]], n: int) -> List[Tuple[object, float]]:
    return sorted(scores, key=lambda s: (-s[1], id_key(s[0])))[:n]


def recommend_top_n(profile: FeatureProfile, candidate_items: Iterable, feature_map: Mapping, n: int) -> RankedList:
    """Top ``n`` candidates by :func:`score_item`; ties by ascending item id.

    Candidates missing from ``feature_map`` are ignored.
    """
    if n < 0:
        raise ContractError(f"n must be >= 0, got {n}")
    scored = ((i, score_item(profile, feature_map[i])) for i in candidate_items if i in feature_map)
    return RankedList(profile.user_id, _rank(scored, n))


def random_top_n(user, candidate_items: Iterable, n: int, seed: int = 0) -> RankedList:
    """Uniform random ranking, reproducible per ``(seed, user)``."""
    pool = sorted(set(candidate_items), key=id_key)
    order = rng_for(seed, "random-ranker", user).permutation(len(pool))[:n]
    return RankedList(user, [(pool[o], 0.0) for o in order])


def popularity_top_n(user, candidate_items: Iterable, popularity: Mapping, n: int) -> RankedList:
    """Most-rated candidates first."""
    scored = ((i, float(popularity.get(i, 0))) for i in candidate_items)
    return RankedList(user, _rank(scored, n))


def _fit_one(user, ratings, fmap, config, epsilon, include_decoder):
    try:
        raw, trace = train_user(ratings, fmap, config, epsilon, include_decoder, user_id=user)
    except UserNotTrainable as exc:
        return user, None, exc.n_mapped, None
    return user, build_profile(raw, user), None, trace


def train_profiles(dataset, feature_map, config: TrainConfig, epsilon=0.01, include_decoder=False,
                   n_jobs=None, users=None):
    """Train every user's autoencoder and return normalized profiles.

    Returns ``(profiles, untrainable, traces)`` where ``untrainable`` maps
    user -> number of mapped rated items.
    """
    users = dataset.users if users is None else list(users)
    jobs = (
        delayed(_fit_one)(u, dataset.user_ratings(u), feature_map, config, epsilon, include_decoder)
        for u in users
    )
    if n_jobs in (None, 1):
        results = [f(*a, **kw) for f, a, kw in jobs]
    else:
        results = Parallel(n_jobs=n_jobs)(jobs)
    profiles, untrainable, traces = {}, {}, {}
    for user, profile, n_mapped, trace in results:
        if profile is None:
            untrainable[user] = n_mapped
        else:
            profiles[user] = profile
            traces[user] = trace
    return profiles, untrainable, traces


class SemAutoRecommender(BaseEstimator):
    """Knowledge-graph autoencoder recommender.

    ``fit`` trains one autoencoder per user, turns the encoder weights into
    min-max normalized feature profiles and indexes them for cosine
    neighbour search. ``recommend`` completes the user's profile from its
    ``k`` nearest neighbours and ranks the items it has not rated.

    Parameters
    ----------
    feature_map : mapping item -> feature IRIs
    k : int
        neighbourhood size used for profile completion.
    divide_by : {"k", "owners"}
        denominator when averaging neighbour weights.
    init_weight, learning_rate, max_epochs, rmse_target, min_improvement
        autoencoder training settings.
    epsilon : float
        rating normalization clamp.
    include_decoder : bool
        add decoder weights into the per-feature sums.
    n_jobs : int or None
        joblib workers for per-user training.
    """

    def __init__(
        self,
        feature_map=None,
        k=10,
        divide_by="k",
        init_weight=0.001,
        learning_rate=0.1,
        max_epochs=5000,
        rmse_target=1e-3,
        min_improvement=1e-8,
        epsilon=0.01,
        include_decoder=False,
        n_jobs=None,
    ):
        self.feature_map = feature_map
        self.k = k
        self.divide_by = divide_by
        self.init_weight = init_weight
        self.learning_rate = learning_rate
        self.max_epochs = max_epochs
        self.rmse_target = rmse_target
        self.min_improvement = min_improvement
        self.epsilon = epsilon
        self.include_decoder = include_decoder
        self.n_jobs = n_jobs

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            init_weight=self.init_weight,
            learning_rate=self.learning_rate,
            max_epochs=self.max_epochs,
            rmse_target=self.rmse_target,
            min_improvement=self.min_improvement,
        )

    def fit(self, X, y=None):
        """Train on ratings: an :class:`InteractionDataset`, a DataFrame or ``(user, item, stars)`` rows."""
        dataset = check_interactions(X)
        fmap = check_feature_map(self.feature_map)
        if self.k < 1:
            raise ContractError(f"k must be >= 1, got {self.k}")
        profiles, untrainable, traces = train_profiles(
            dataset, fmap, self.train_config(), self.epsilon, self.include_decoder, self.n_jobs
        )
        return self._set_profiles(dataset, fmap, profiles, untrainable, traces)

    def _set_profiles(self, dataset, fmap, profiles, untrainable, traces=None):
        self.dataset_ = dataset
        self.feature_map_ = fmap
        self.profiles_ = profiles
        self.untrainable_ = untrainable
        self.traces_ = traces or {}
        self.index_ = ProfileIndex(profiles)
        self._completed: Dict = {}
        logger.info("fitted %d profiles, %d untrainable users", len(profiles), len(untrainable))
        return self

    @classmethod
    def from_profiles(cls, dataset, feature_map, profiles, untrainable=None, **params):
        """Rebuild a fitted recommender from persisted profiles."""
        est = cls(feature_map=feature_map, **params)
        return est._set_profiles(check_interactions(dataset), check_feature_map(feature_map),
                                 dict(profiles), dict(untrainable or {}))

    def _profile(self, user) -> FeatureProfile:
        check_is_fitted(self, "profiles_")
        if user not in self.profiles_:
            n_mapped = sum(1 for i in self.dataset_.user_ratings(user) if i in self.feature_map_)
            raise UserNotTrainable(user, self.untrainable_.get(user, n_mapped))
        return self.profiles_[user]

    def neighbors(self, user, k: Optional[int] = None):
        return self.index_.neighbors(user, k or self.k)

    def completed_profile(self, user, k: Optional[int] = None) -> FeatureProfile:
        k = k or self.k
        key = (user, k)
        if key not in self._completed:
            profile = self._profile(user)
            nbrs = self.index_.neighbors(user, k)
            self._completed[key] = complete_profile(profile, nbrs, self.profiles_, k, self.divide_by)
        return self._completed[key]

    def candidates(self, user) -> List:
        rated = self.dataset_.user_ratings(user)
        return [i for i in self.feature_map_ if i not in rated]

    def recommend(self, user, n: int = 10, k: Optional[int] = None, candidates=None) -> RankedList:
        profile = self.completed_profile(user, k)
        pool = self.candidates(user) if candidates is None else candidates
        return recommend_top_n(profile, pool, self.feature_map_, n)

    def predict(self, X, k: Optional[int] = None) -> np.ndarray:
        """Scores for ``(user, item)`` pairs; unmapped items score 0."""
        out = []
        for user, item in X:
            feats = self.feature_map_.get(item, ())
            out.append(score_item(self.completed_profile(user, k), feats))
        return np.asarray(out, dtype=float)

"""Semantic user profiles: normalization, cosine neighbours and neighbour completion."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp

from .exceptions import ContractError, FormatError
from .utils import atomic_write, id_key, parse_id

TRAINED = "trained"
NEIGHBOR_ESTIMATED = "neighbor_estimated"

PROFILE_HEADER = "#semauto-profiles"
PROFILE_VERSION = 1
_PROV_CODE = {TRAINED: "T", NEIGHBOR_ESTIMATED: "N"}
_PROV_NAME = {v: k for k, v in _PROV_CODE.items()}


@dataclass
class FeatureProfile:
    user_id: object
    weights: Dict[str, float]
    provenance: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        for f in self.weights:
            self.provenance.setdefault(f, TRAINED)

    def __len__(self) -> int:
        return len(self.weights)

    def get(self, feature: str, default: float = 0.0) -> float:
        return self.weights.get(feature, default)

    @property
    def trained_features(self) -> frozenset:
        return frozenset(f for f, p in self.provenance.items() if p == TRAINED)

    def norm(self) -> float:
        return math.sqrt(math.fsum(w * w for w in self.weights.values()))


@dataclass
class NeighborSet:
    user_id: object
    neighbors: List[Tuple[object, float]]

    @property
    def users(self) -> List:
        return [u for u, _ in self.neighbors]


def build_profile(raw: Mapping[str, float], user_id=None) -> FeatureProfile:
    """Min-max normalize raw feature weights into [0, 1].

    When every raw weight is equal the profile gets 0.5 everywhere.
    """
    if not raw:
        raise ContractError(f"user {user_id!r} has no trained features")
    lo = min(raw.values())
    hi = max(raw.values())
    if hi > lo:
        span = hi - lo
        weights = {f: (w - lo) / span for f, w in raw.items()}
    else:
        weights = {f: 0.5 for f in raw}
    return FeatureProfile(user_id, weights, {f: TRAINED for f in weights})


def cosine_similarity(p1: FeatureProfile, p2: FeatureProfile) -> float:
    """Cosine over the union of features; 0 when either profile is all zeros."""
    n1, n2 = p1.norm(), p2.norm()
    if n1 == 0.0 or n2 == 0.0:
        return 0.0
    small, large = (p1, p2) if len(p1) <= len(p2) else (p2, p1)
    # fsum is exactly rounded, so the result does not depend on summation order
    dot = math.fsum(w * large.weights.get(f, 0.0) for f, w in small.weights.items())
    return min(1.0, max(0.0, dot / (n1 * n2)))


def _select_top(sims: Iterable[Tuple[object, float]], k: int) -> List[Tuple[object, float]]:
    ranked = sorted(sims, key=lambda us: (-us[1], id_key(us[0])))
    return ranked[:k]


def top_k_neighbors(user, all_profiles, k: int) -> NeighborSet:
    """The ``k`` most cosine-similar other users, ties by ascending user id.

    ``all_profiles`` is a mapping ``user -> FeatureProfile`` or a sequence of
    profiles; it must contain ``user`` itself.
    """
    if k < 1:
        raise ContractError(f"k must be >= 1, got {k}")
    profiles = _as_mapping(all_profiles)
    me = profiles[user]
    sims = ((u, cosine_similarity(me, p)) for u, p in profiles.items() if u != user)
    return NeighborSet(user, _select_top(sims, k))


def _as_mapping(all_profiles) -> Dict:
    if isinstance(all_profiles, Mapping):
        return dict(all_profiles)
    return {p.user_id: p for p in all_profiles}


class ProfileIndex:
    """Cosine neighbours screened with one sparse matrix product.

    The matrix product is only used to find the users that can make the top
    ``k``; their similarities are then recomputed with
    :func:`cosine_similarity`, so results equal :func:`top_k_neighbors`
    exactly, ties included.
    """

    SCREEN_MARGIN = 1e-9

    def __init__(self, profiles):
        self.profiles = _as_mapping(profiles)
        self.users = sorted(self.profiles, key=id_key)
        self._row = {u: r for r, u in enumerate(self.users)}
        vocab = sorted(set().union(*(p.weights for p in self.profiles.values()))) if self.profiles else []
        col = {f: j for j, f in enumerate(vocab)}
        rows, cols, vals = [], [], []
        for r, u in enumerate(self.users):
            for f, w in self.profiles[u].weights.items():
                rows.append(r)
                cols.append(col[f])
                vals.append(w)
        mat = sp.csr_matrix((vals, (rows, cols)), shape=(len(self.users), len(vocab)), dtype=np.float64)
        norms = np.sqrt(np.asarray(mat.multiply(mat).sum(axis=1)).ravel())
        inv = np.divide(1.0, norms, out=np.zeros_like(norms), where=norms > 0)
        self._unit = sp.diags(inv) @ mat

    def neighbors(self, user, k: int, candidates: Optional[Iterable] = None) -> NeighborSet:
        if k < 1:
            raise ContractError(f"k must be >= 1, got {k}")
        r = self._row[user]
        sims = np.asarray((self._unit @ self._unit[r].T).todense()).ravel()
        np.clip(sims, 0.0, 1.0, out=sims)
        pool = self.users if candidates is None else sorted(set(candidates) & self._row.keys(), key=id_key)
        idx = np.array([self._row[u] for u in pool if u != user], dtype=np.int64)
        if idx.size == 0:
            return NeighborSet(user, [])
        approx = sims[idx]
        if k < idx.size:
            kth = np.partition(-approx, k - 1)[k - 1]
            idx = idx[-approx <= kth + self.SCREEN_MARGIN]
        me = self.profiles[user]
        exact = [(self.users[r], cosine_similarity(me, self.profiles[self.users[r]])) for r in idx]
        return NeighborSet(user, _select_top(exact, k))


def complete_profile(
    p: FeatureProfile,
    neighbors: NeighborSet,
    neighbor_profiles: Mapping,
    k: int,
    divide_by: str = "k",
) -> FeatureProfile:
    """Add features missing from ``p`` as the neighbours' average weight.

    Each candidate feature (owned by at least one neighbour) gets the sum of
    neighbour weights divided by ``k``, neighbours lacking it counting as 0.
    ``divide_by="owners"`` divides by the number of neighbours that have the
    feature instead. Features already in ``p`` are left untouched.
    """
    if k < 1:
        raise ContractError(f"k must be >= 1, got {k}")
    if divide_by not in ("k", "owners"):
        raise ContractError(f"divide_by must be 'k' or 'owners', got {divide_by!r}")
    totals: Dict[str, float] = {}
    owners: Dict[str, int] = {}
    for u in neighbors.users:
        for f, w in neighbor_profiles[u].weights.items():
            if f in p.weights:
                continue
            totals[f] = totals.get(f, 0.0) + w
            owners[f] = owners.get(f, 0) + 1
    weights = dict(p.weights)
    provenance = dict(p.provenance)
    for f in sorted(totals):
        denom = k if divide_by == "k" else owners[f]
        weights[f] = totals[f] / denom
        provenance[f] = NEIGHBOR_ESTIMATED
    return FeatureProfile(p.user_id, weights, provenance)


def save_profiles(profiles: Union[Mapping, Sequence[FeatureProfile]], path: Union[str, Path]) -> None:
    """``user<TAB>T:feature=weight<TAB>N:feature=weight ...`` under a versioned header."""
    profiles = _as_mapping(profiles)
    with atomic_write(path) as fh:
        fh.write(f"{PROFILE_HEADER}\tv{PROFILE_VERSION}\tusers={len(profiles)}\n")
        for user in sorted(profiles, key=id_key):
            p = profiles[user]
            fields = [f"{_PROV_CODE[p.provenance[f]]}:{f}={p.weights[f]!r}" for f in sorted(p.weights)]
            fh.write("\t".join([str(user)] + fields) + "\n")


def load_profiles(path: Union[str, Path]) -> Dict[object, FeatureProfile]:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if header[0] != PROFILE_HEADER or len(header) < 3 or header[1] != f"v{PROFILE_VERSION}":
            raise FormatError(f"{path}: missing or unsupported profile header")
        expected = int(header[2].partition("=")[2])
        out = {}
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            user, *fields = line.split("\t")
            weights, prov = {}, {}
            for fld in fields:
                code, _, rest = fld.partition(":")
                feat, eq, value = rest.rpartition("=")
                if code not in _PROV_NAME or not eq:
                    raise FormatError(f"{path}:{lineno}: malformed field {fld!r}")
                weights[feat] = float(value)
                prov[feat] = _PROV_NAME[code]
            uid = parse_id(user)
            out[uid] = FeatureProfile(uid, weights, prov)
    if len(out) != expected:
        raise FormatError(f"{path}: expected {expected} profiles, found {len(out)}")
    return out

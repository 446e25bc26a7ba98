"""Per-user sparse autoencoder whose hidden units are knowledge-graph features.

The network has three layers: the user's rated items, the union of their
categorical features, and the rated items again. An item is wired to a
feature only when the item carries that feature, in both the encoder and the
decoder. There are no bias units and all weights start at the same small
constant, so training is fully deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Tuple

import numba
import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .data import normalize_rating
from .exceptions import ContractError, TrainingDiverged, UserNotTrainable
from .utils import id_key

STOP_TARGET = "target_reached"
STOP_CONVERGED = "converged"
STOP_MAX_EPOCHS = "max_epochs"


@dataclass(frozen=True)
class SparseTopology:
    """Edge list of one user's network.

    Edge ``e`` joins ``items[edge_item[e]]`` and ``features[edge_feature[e]]``;
    the encoder and decoder share this edge list (one is the transpose of the
    other) but carry separate weights. Edges are sorted by item, then feature.
    """

    items: Tuple
    features: Tuple[str, ...]
    edge_item: np.ndarray
    edge_feature: np.ndarray

    @property
    def n_items(self) -> int:
        return len(self.items)

    @property
    def n_features(self) -> int:
        return len(self.features)

    @property
    def n_edges(self) -> int:
        return int(self.edge_item.size)

    @property
    def encoder_edges(self) -> List[Tuple[int, int]]:
        return list(zip(self.edge_item.tolist(), self.edge_feature.tolist()))

    @property
    def decoder_edges(self) -> List[Tuple[int, int]]:
        return list(zip(self.edge_feature.tolist(), self.edge_item.tolist()))

    def in_degree(self) -> np.ndarray:
        return np.bincount(self.edge_feature, minlength=self.n_features)


def build_topology(user_ratings, feature_map: Mapping, user_id=None) -> SparseTopology:
    """Wire the user's mapped items to their features.

    ``user_ratings`` is a mapping ``item -> stars`` or an iterable of items.
    Items absent from ``feature_map`` are dropped before counting; fewer than
    two remaining items raises :class:`UserNotTrainable`.
    """
    items = user_ratings.keys() if isinstance(user_ratings, Mapping) else user_ratings
    mapped = sorted((i for i in set(items) if i in feature_map and feature_map[i]), key=id_key)
    if len(mapped) < 2:
        raise UserNotTrainable(user_id, len(mapped))
    features = tuple(sorted(set().union(*(feature_map[i] for i in mapped))))
    index = {f: j for j, f in enumerate(features)}
    edge_item, edge_feature = [], []
    for i, item in enumerate(mapped):
        for j in sorted(index[f] for f in feature_map[item]):
            edge_item.append(i)
            edge_feature.append(j)
    return SparseTopology(
        items=tuple(mapped),
        features=features,
        edge_item=np.asarray(edge_item, dtype=np.int64),
        edge_feature=np.asarray(edge_feature, dtype=np.int64),
    )


@dataclass
class TrainConfig:
    init_weight: float = 0.001
    learning_rate: float = 0.1
    max_epochs: int = 5000
    rmse_target: float = 1e-3
    min_improvement: float = 1e-8

    def __post_init__(self):
        if not 0 < self.init_weight <= 0.01:
            raise ContractError(f"init_weight must lie in (0, 0.01], got {self.init_weight}")
        if not self.learning_rate > 0:
            raise ContractError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.max_epochs < 0:
            raise ContractError(f"max_epochs must be >= 0, got {self.max_epochs}")
        if self.rmse_target < 0 or self.min_improvement < 0:
            raise ContractError("rmse_target and min_improvement must be >= 0")


@dataclass
class TrainTrace:
    epochs_run: int
    rmse_per_epoch: List[float]
    stop_reason: str

    @property
    def initial_rmse(self) -> float:
        return self.rmse_per_epoch[0]

    @property
    def final_rmse(self) -> float:
        return self.rmse_per_epoch[-1]


@dataclass
class UserAutoencoder:
    topology: SparseTopology
    encoder_weights: np.ndarray
    decoder_weights: np.ndarray
    user_id: object = None
    trace: Optional[TrainTrace] = field(default=None, compare=False)

    @classmethod
    def constant(cls, topology: SparseTopology, value: float, user_id=None) -> "UserAutoencoder":
        n = topology.n_edges
        return cls(topology, np.full(n, value), np.full(n, value), user_id)


# --------------------------------------------------------------------------
# kernels
# --------------------------------------------------------------------------


@numba.njit(cache=True)
def _sigmoid(z):
    out = np.empty_like(z)
    for k in range(z.size):
        out[k] = 1.0 / (1.0 + math.exp(-z[k]))
    return out


@numba.njit(cache=True)
def _forward(edge_item, edge_feature, w, v, x, n_features):
    hidden_in = np.zeros(n_features)
    for e in range(edge_item.size):
        hidden_in[edge_feature[e]] += w[e] * x[edge_item[e]]
    hidden = _sigmoid(hidden_in)
    out_in = np.zeros(x.size)
    for e in range(edge_item.size):
        out_in[edge_item[e]] += v[e] * hidden[edge_feature[e]]
    return hidden, _sigmoid(out_in)


@numba.njit(cache=True)
def _gradients(edge_item, edge_feature, w, v, x, target, n_features):
    hidden, output = _forward(edge_item, edge_feature, w, v, x, n_features)
    loss = 0.0
    delta_out = np.empty(x.size)
    for j in range(x.size):
        r = output[j] - target[j]
        loss += 0.5 * r * r
        delta_out[j] = r * output[j] * (1.0 - output[j])
    grad_v = np.empty(edge_item.size)
    back = np.zeros(n_features)
    for e in range(edge_item.size):
        grad_v[e] = delta_out[edge_item[e]] * hidden[edge_feature[e]]
        back[edge_feature[e]] += v[e] * delta_out[edge_item[e]]
    grad_w = np.empty(edge_item.size)
    for e in range(edge_item.size):
        f = edge_feature[e]
        grad_w[e] = back[f] * hidden[f] * (1.0 - hidden[f]) * x[edge_item[e]]
    return grad_w, grad_v, loss, output


@numba.njit(cache=True)
def _train_loop(edge_item, edge_feature, w, v, target, n_features, lr, max_epochs, rmse_target, min_improvement):
    # in-place on w and v; returns (rmse path, epochs run, stop code)
    # stop code -1 means a non-finite loss or weight
    m = target.size
    path = np.empty(max_epochs + 1)
    prev = np.inf
    epoch = 0
    while True:
        grad_w, grad_v, loss, _ = _gradients(edge_item, edge_feature, w, v, target, target, n_features)
        rmse = math.sqrt(2.0 * loss / m)
        path[epoch] = rmse
        if not math.isfinite(loss):
            return path[: epoch + 1], epoch, -1
        if rmse <= rmse_target:
            return path[: epoch + 1], epoch, 0
        if epoch > 0 and prev - rmse < min_improvement:
            return path[: epoch + 1], epoch, 1
        if epoch >= max_epochs:
            return path[: epoch + 1], epoch, 2
        finite = True
        for e in range(edge_item.size):
            w[e] -= lr * grad_w[e]
            v[e] -= lr * grad_v[e]
            if not (math.isfinite(w[e]) and math.isfinite(v[e])):
                finite = False
        if not finite:
            return path[: epoch + 1], epoch + 1, -1
        prev = rmse
        epoch += 1


_STOP_CODES = {0: STOP_TARGET, 1: STOP_CONVERGED, 2: STOP_MAX_EPOCHS}


def _check_vector(values, n: int, name: str) -> np.ndarray:
    arr = np.ascontiguousarray(values, dtype=np.float64)
    if arr.shape != (n,):
        raise ContractError(f"{name} must have length {n}, got shape {arr.shape}")
    return arr


def forward(net: UserAutoencoder, x) -> Tuple[np.ndarray, np.ndarray]:
    """Hidden activations (one per feature) and reconstructions (one per item)."""
    topo = net.topology
    x = _check_vector(x, topo.n_items, "input")
    return _forward(topo.edge_item, topo.edge_feature, net.encoder_weights, net.decoder_weights, x, topo.n_features)


def compute_gradients(net: UserAutoencoder, target) -> Tuple[np.ndarray, np.ndarray, float]:
    """Exact gradients of ``0.5 * sum((output - target) ** 2)`` with the target as input.

    Returns ``(encoder_grad, decoder_grad, loss)`` aligned with the edge list.
    """
    topo = net.topology
    t = _check_vector(target, topo.n_items, "target")
    gw, gv, loss, _ = _gradients(
        topo.edge_item, topo.edge_feature, net.encoder_weights, net.decoder_weights, t, t, topo.n_features
    )
    return gw, gv, float(loss)


def loss_value(net: UserAutoencoder, target) -> float:
    _, out = forward(net, target)
    t = np.asarray(target, dtype=float)
    return float(0.5 * np.sum((out - t) ** 2))


def train(topology: SparseTopology, target, config: Optional[TrainConfig] = None, user_id=None):
    """Full-batch gradient descent on the single ``(target, target)`` pair.

    Returns ``(UserAutoencoder, TrainTrace)``. ``rmse_per_epoch[0]`` is the
    RMSE of the untrained network and the last entry that of the returned
    weights.
    """
    config = config or TrainConfig()
    t = _check_vector(target, topology.n_items, "target")
    w = np.full(topology.n_edges, float(config.init_weight))
    v = np.full(topology.n_edges, float(config.init_weight))
    path, epochs, code = _train_loop(
        topology.edge_item, topology.edge_feature, w, v, t, topology.n_features,
        float(config.learning_rate), int(config.max_epochs),
        float(config.rmse_target), float(config.min_improvement),
    )
    if code == -1:
        raise TrainingDiverged(epochs, config.learning_rate)
    trace = TrainTrace(int(epochs), path.tolist(), _STOP_CODES[int(code)])
    return UserAutoencoder(topology, w, v, user_id, trace), trace


def aggregate_feature_weights(net: UserAutoencoder, include_decoder: bool = False) -> Dict[str, float]:
    """Per feature, the sum of encoder weights on its incoming edges."""
    topo = net.topology
    sums = np.bincount(topo.edge_feature, weights=net.encoder_weights, minlength=topo.n_features)
    if include_decoder:
        sums = sums + np.bincount(topo.edge_feature, weights=net.decoder_weights, minlength=topo.n_features)
    return {f: float(s) for f, s in zip(topo.features, sums)}


def dump_network(net: UserAutoencoder, fh) -> None:
    """Debug dump: one ``item<TAB>feature<TAB>encoder<TAB>decoder`` line per edge."""
    topo = net.topology
    fh.write(f"#semauto-network\tv1\tuser={net.user_id}\tedges={topo.n_edges}\n")
    for e in range(topo.n_edges):
        fh.write(
            f"{topo.items[topo.edge_item[e]]}\t{topo.features[topo.edge_feature[e]]}\t"
            f"{net.encoder_weights[e]!r}\t{net.decoder_weights[e]!r}\n"
        )


# --------------------------------------------------------------------------
# gradient check
# --------------------------------------------------------------------------


def random_network(rng: np.random.Generator, max_items: int = 10, max_features: int = 15, scale: float = 1.0):
    """Random topology (every item has >=1 feature) with random weights and target."""
    n_items = int(rng.integers(2, max_items + 1))
    n_features = int(rng.integers(1, max_features + 1))
    fmap = {}
    for i in range(n_items):
        k = int(rng.integers(1, n_features + 1))
        fmap[i] = {f"f{j}" for j in rng.choice(n_features, size=k, replace=False)}
    topo = build_topology({i: 1 for i in fmap}, fmap)
    net = UserAutoencoder(
        topo,
        rng.normal(0.0, scale, topo.n_edges),
        rng.normal(0.0, scale, topo.n_edges),
    )
    return net, rng.uniform(0.01, 0.99, topo.n_items)


def finite_difference_gradients(net: UserAutoencoder, target, h: float = 1e-5):
    """Central differences of the loss, one edge weight at a time."""
    grads = []
    for weights in (net.encoder_weights, net.decoder_weights):
        g = np.empty_like(weights)
        for e in range(weights.size):
            orig = weights[e]
            weights[e] = orig + h
            up = loss_value(net, target)
            weights[e] = orig - h
            down = loss_value(net, target)
            weights[e] = orig
            g[e] = (up - down) / (2 * h)
        grads.append(g)
    return grads[0], grads[1]


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def gradcheck(n_nets: int = 100, seed: int = 0, max_items: int = 10, max_features: int = 15, h: float = 1e-5) -> float:
    """Largest analytic vs central-difference relative error over random networks."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_nets):
        net, target = random_network(rng, max_items, max_features)
        gw, gv, _ = compute_gradients(net, target)
        nw, nv = finite_difference_gradients(net, target, h)
        worst = max(worst, relative_error(gw, nw), relative_error(gv, nv))
    return worst


# --------------------------------------------------------------------------
# estimator
# --------------------------------------------------------------------------


class SemanticAutoencoder(TransformerMixin, BaseEstimator, auto_wrap_output_keys=None):
    """Train one user's semantic autoencoder and expose its feature weights.

    Parameters
    ----------
    feature_map : mapping item -> set of feature IRIs
    init_weight, learning_rate, max_epochs, rmse_target, min_improvement :
        see :class:`TrainConfig`.
    epsilon : float
        clamp used by :func:`normalize_rating`.
    include_decoder : bool
        also add decoder weights when aggregating per feature.

    ``fit`` takes a mapping ``item -> stars`` (1..5). After fitting,
    ``feature_weights_`` holds the raw per-feature sums and ``transform``
    returns them again.
    """

    def __init__(
        self,
        feature_map=None,
        init_weight=0.001,
        learning_rate=0.1,
        max_epochs=5000,
        rmse_target=1e-3,
        min_improvement=1e-8,
        epsilon=0.01,
        include_decoder=False,
    ):
        self.feature_map = feature_map
        self.init_weight = init_weight
        self.learning_rate = learning_rate
        self.max_epochs = max_epochs
        self.rmse_target = rmse_target
        self.min_improvement = min_improvement
        self.epsilon = epsilon
        self.include_decoder = include_decoder

    def _config(self) -> TrainConfig:
        return TrainConfig(
            init_weight=self.init_weight,
            learning_rate=self.learning_rate,
            max_epochs=self.max_epochs,
            rmse_target=self.rmse_target,
            min_improvement=self.min_improvement,
        )

    def fit(self, X, y=None, user_id=None):
        from .validation import check_feature_map, check_user_ratings

        fmap = check_feature_map(self.feature_map)
        ratings = check_user_ratings(X)
        topo = build_topology(ratings, fmap, user_id=user_id)
        target = normalize_rating([ratings[i] for i in topo.items], epsilon=self.epsilon)
        net, trace = train(topo, target, self._config(), user_id=user_id)
        self.network_ = net
        self.fit_ratings_ = ratings
        self.topology_ = topo
        self.trace_ = trace
        self.feature_weights_ = aggregate_feature_weights(net, self.include_decoder)
        self.n_features_ = topo.n_features
        return self

    def transform(self, X=None):
        check_is_fitted(self, "feature_weights_")
        return dict(self.feature_weights_)

    def reconstruct(self, X=None) -> Dict:
        """Network output for the training items, back on the unit interval."""
        check_is_fitted(self, "network_")
        x = normalize_rating(
            [self.fit_ratings_[i] for i in self.topology_.items], epsilon=self.epsilon
        ) if X is None else np.asarray(X, dtype=float)
        _, out = forward(self.network_, x)
        return dict(zip(self.topology_.items, out.tolist()))

    def fit_transform(self, X, y=None, **fit_params):
        return self.fit(X, y, **fit_params).transform()


def train_user(ratings: Mapping, feature_map: Mapping, config: TrainConfig, epsilon: float = 0.01,
               include_decoder: bool = False, user_id=None):
    """Train one user from ``item -> stars`` and return ``(raw feature weights, trace)``."""
    topo = build_topology(ratings, feature_map, user_id=user_id)
    target = normalize_rating([ratings[i] for i in topo.items], epsilon=epsilon)
    net, trace = train(topo, target, config, user_id=user_id)
    return aggregate_feature_weights(net, include_decoder), trace


__all__ = [
    "SparseTopology",
    "TrainConfig",
    "TrainTrace",
    "UserAutoencoder",
    "SemanticAutoencoder",
    "build_topology",
    "forward",
    "compute_gradients",
    "train",
    "train_user",
    "aggregate_feature_weights",
    "finite_difference_gradients",
    "gradcheck",
    "random_network",
]

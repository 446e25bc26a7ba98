import io
import time

import numpy as np
import pytest

from semauto.autoencoder import (
    SemanticAutoencoder,
    TrainConfig,
    UserAutoencoder,
    aggregate_feature_weights,
    build_topology,
    compute_gradients,
    dump_network,
    forward,
    gradcheck,
    random_network,
    train,
    train_user,
)
from semauto.data import normalize_rating
from semauto.exceptions import ContractError, TrainingDiverged, UserNotTrainable

from conftest import FIXTURES, TWO_ITEM_MAP
from oracle import central_differences, dense_forward, dense_loss, scalar_forward


def _fixture_net(name, value=0.001):
    fmap, ratings = FIXTURES[name]
    topo = build_topology(ratings, fmap)
    target = normalize_rating(np.array([ratings[i] for i in topo.items]))
    return topo, target


# -- topology ---------------------------------------------------------------


def test_two_item_topology():
    topo = build_topology({"i1": 5, "i2": 1}, TWO_ITEM_MAP)
    assert topo.items == ("i1", "i2")
    assert topo.features == ("c1", "c2", "c3")
    named = {(topo.items[i], topo.features[f]) for i, f in topo.encoder_edges}
    assert named == {("i1", "c1"), ("i1", "c2"), ("i2", "c2"), ("i2", "c3")}
    assert set(topo.decoder_edges) == {(f, i) for i, f in topo.encoder_edges}


def test_shared_category_in_degree():
    fmap, ratings = FIXTURES["shared_category"]
    topo = build_topology(ratings, fmap)
    deg = dict(zip(topo.features, topo.in_degree()))
    assert deg["American_films"] == 2


def test_unmapped_items_excluded_before_count():
    fmap = {1: {"a"}, 2: {"b"}, 3: {"a", "c"}}
    topo = build_topology({1: 4, 2: 5, 3: 1, 8: 2, 9: 3}, fmap)
    assert topo.n_items == 3


@pytest.mark.parametrize("ratings", [{1: 5}, {1: 5, 8: 4}, {}])
def test_untrainable(ratings):
    with pytest.raises(UserNotTrainable) as err:
        build_topology(ratings, {1: {"a"}, 2: {"b"}}, user_id="u")
    assert err.value.user_id == "u"


# -- forward ----------------------------------------------------------------


def test_zero_weights_give_half():
    topo = build_topology({"i1": 5, "i2": 1}, TWO_ITEM_MAP)
    hidden, out = forward(UserAutoencoder.constant(topo, 0.0), [0.99, 0.01])
    assert np.all(hidden == 0.5) and np.all(out == 0.5)


def test_single_item_single_feature_zero_weights():
    topo = build_topology({1: 3, 2: 3}, {1: {"a"}, 2: {"b"}})
    for x in ([0.01, 0.99], [0.5, 0.2]):
        hidden, out = forward(UserAutoencoder.constant(topo, 0.0), x)
        assert list(hidden) == [0.5, 0.5] and list(out) == [0.5, 0.5]


def test_forward_matches_scalar_oracle():
    topo = build_topology({"i1": 5, "i2": 1}, TWO_ITEM_MAP)
    net = UserAutoencoder.constant(topo, 0.001)
    hidden, out = forward(net, [0.99, 0.01])
    edges = [(topo.items[i], topo.features[f]) for i, f in topo.encoder_edges]
    h_ref, o_ref = scalar_forward(list(topo.items), list(topo.features), edges,
                                  net.encoder_weights, net.decoder_weights, [0.99, 0.01])
    np.testing.assert_allclose(hidden, [h_ref[f] for f in topo.features], rtol=0, atol=1e-15)
    np.testing.assert_allclose(out, o_ref, rtol=0, atol=1e-15)


def test_forward_two_item_fixture_frozen():
    # computed once with 40-digit arithmetic (mpmath) from the two layer formulas
    topo = build_topology({"i1": 5, "i2": 1}, TWO_ITEM_MAP)
    hidden, out = forward(UserAutoencoder.constant(topo, 0.001), [0.99, 0.01])
    np.testing.assert_allclose(hidden, [0.50024749997978543948, 0.50024999997916666875, 0.50000249999999997917],
                               rtol=0, atol=1e-15)
    np.testing.assert_allclose(out, [0.50025012435412529756, 0.50025006310414567518], rtol=0, atol=1e-15)


def test_forward_matches_dense_oracle_on_random_nets(rng):
    for _ in range(30):
        net, target = random_network(rng)
        h, o = forward(net, target)
        h_ref, o_ref = dense_forward(net.topology, net.encoder_weights, net.decoder_weights, target)
        np.testing.assert_allclose(h, h_ref, rtol=1e-13, atol=1e-15)
        np.testing.assert_allclose(o, o_ref, rtol=1e-13, atol=1e-15)


def test_forward_rejects_wrong_length():
    topo = build_topology({"i1": 5, "i2": 1}, TWO_ITEM_MAP)
    with pytest.raises(ContractError):
        forward(UserAutoencoder.constant(topo, 0.001), [0.5])


# -- gradients --------------------------------------------------------------


def test_gradients_match_independent_finite_differences(rng):
    worst = 0.0
    for _ in range(40):
        net, target = random_network(rng)
        gw, gv, loss = compute_gradients(net, target)
        nw, nv = central_differences(net.topology, net.encoder_weights, net.decoder_weights, target)
        assert loss == pytest.approx(dense_loss(net.topology, net.encoder_weights, net.decoder_weights, target),
                                     rel=1e-12)
        for a, n in ((gw, nw), (gv, nv)):
            denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
            worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    assert worst < 1e-5


def test_gradients_vanish_at_fixed_point():
    # iterate x -> output(x) to a fixed point, then train towards it
    topo = build_topology({"i1": 5, "i2": 1}, TWO_ITEM_MAP)
    net = UserAutoencoder.constant(topo, 0.3)
    x = np.array([0.5, 0.5])
    for _ in range(200):
        x = forward(net, x)[1]
    gw, gv, loss = compute_gradients(net, x)
    assert loss < 1e-28
    assert np.max(np.abs(gw)) < 1e-13 and np.max(np.abs(gv)) < 1e-13


def test_loss_is_quadratic_in_residual():
    topo = build_topology({"i1": 5, "i2": 1}, TWO_ITEM_MAP)
    net = UserAutoencoder.constant(topo, 0.0)  # output is exactly 0.5
    t1 = np.array([0.6, 0.45])
    t2 = 0.5 + 2 * (t1 - 0.5)
    # the target also feeds the input, so use zero encoder weights to keep output fixed
    _, _, l1 = compute_gradients(net, t1)
    _, _, l2 = compute_gradients(net, t2)
    assert l2 == pytest.approx(4 * l1, rel=1e-12)


def test_gradcheck_helper():
    assert gradcheck(n_nets=20, seed=3) < 1e-5


# -- training ---------------------------------------------------------------


def test_half_target_converges_immediately():
    topo = build_topology({1: 3, 2: 3}, {1: {"a", "b"}, 2: {"b"}})
    net, trace = train(topo, [0.5, 0.5])
    assert trace.stop_reason == "target_reached"
    assert trace.epochs_run <= 5
    assert trace.initial_rmse < 1e-3


@pytest.mark.parametrize("name", sorted(FIXTURES))
def test_training_reduces_error_on_fixtures(name):
    topo, target = _fixture_net(name)
    _, trace = train(topo, target)
    assert trace.final_rmse <= trace.initial_rmse
    path = np.array(trace.rmse_per_epoch)
    assert np.all(np.diff(path) <= 0), f"{name}: RMSE went up"


def test_two_item_fixture_reaches_small_rmse():
    topo, target = _fixture_net("two_items")
    _, trace = train(topo, target, TrainConfig())
    assert trace.epochs_run <= 5000
    assert trace.final_rmse < 0.05


def test_training_is_deterministic():
    topo, target = _fixture_net("wide")
    a, _ = train(topo, target)
    b, _ = train(topo, target)
    assert np.array_equal(a.encoder_weights, b.encoder_weights)
    assert np.array_equal(a.decoder_weights, b.decoder_weights)


def test_twin_features_end_bit_equal():
    topo, target = _fixture_net("twin_features")
    net, _ = train(topo, target)
    w = aggregate_feature_weights(net)
    assert w["x"] == w["y"]


def test_divergence_reported():
    topo, target = _fixture_net("wide")
    with pytest.raises(TrainingDiverged):
        train(topo, target, TrainConfig(learning_rate=float("inf"), max_epochs=50))


def test_trace_records_stop_reason():
    topo, target = _fixture_net("wide")
    _, trace = train(topo, target, TrainConfig(max_epochs=3, min_improvement=0.0, rmse_target=0.0))
    assert trace.stop_reason == "max_epochs"
    assert trace.epochs_run == 3 and len(trace.rmse_per_epoch) == 4


@pytest.mark.parametrize("kwargs", [{"init_weight": 0.0}, {"init_weight": 0.02}, {"learning_rate": 0.0}])
def test_train_config_validation(kwargs):
    with pytest.raises(ContractError):
        TrainConfig(**kwargs)


def test_per_user_training_is_fast():
    topo, target = _fixture_net("wide")
    train(topo, target)  # compile
    t0 = time.perf_counter()
    for _ in range(10):
        train(topo, target)
    assert (time.perf_counter() - t0) / 10 < 0.1


# -- aggregation ------------------------------------------------------------


def test_aggregate_sums_incoming_encoder_edges():
    fmap, ratings = FIXTURES["shared_category"]
    topo = build_topology(ratings, fmap)
    enc = np.zeros(topo.n_edges)
    for e, (i, f) in enumerate(topo.encoder_edges):
        if topo.features[f] == "American_films":
            enc[e] = 0.2 if topo.items[i] == "m1" else 0.1
    net = UserAutoencoder(topo, enc, np.full(topo.n_edges, 5.0))
    assert aggregate_feature_weights(net)["American_films"] == pytest.approx(0.3, abs=1e-15)


def test_aggregate_constant_init():
    fmap = {1: {"a"}, 2: {"a"}, 3: {"a", "b"}}
    topo = build_topology({1: 1, 2: 2, 3: 3}, fmap)
    w = aggregate_feature_weights(UserAutoencoder.constant(topo, 0.001))
    assert w["a"] == pytest.approx(0.003, abs=1e-15)
    assert w["b"] == pytest.approx(0.001, abs=1e-15)


def test_aggregate_with_decoder():
    topo = build_topology({1: 1, 2: 2}, {1: {"a"}, 2: {"a"}})
    net = UserAutoencoder(topo, np.array([0.1, 0.2]), np.array([1.0, 2.0]))
    assert aggregate_feature_weights(net, include_decoder=True)["a"] == pytest.approx(3.3)


def test_dump_network():
    topo = build_topology({"i1": 5, "i2": 1}, TWO_ITEM_MAP)
    buf = io.StringIO()
    dump_network(UserAutoencoder.constant(topo, 0.001, user_id=4), buf)
    lines = buf.getvalue().splitlines()
    assert lines[0].startswith("#semauto-network\tv1\tuser=4\tedges=4")
    assert len(lines) == 5


# -- estimator --------------------------------------------------------------


def test_estimator_api():
    fmap, ratings = FIXTURES["shared_category"]
    est = SemanticAutoencoder(feature_map=fmap)
    assert est.get_params()["learning_rate"] == 0.1
    weights = est.fit_transform(ratings)
    assert set(weights) == {"American_films", "Drama", "Comedy"}
    raw, _ = train_user(ratings, fmap, TrainConfig())
    assert weights == raw
    recon = est.reconstruct()
    assert set(recon) == {"m1", "m2", "m3"}
    clone = SemanticAutoencoder(**est.get_params())
    assert clone.fit(ratings).transform() == weights


def test_estimator_set_params_and_validation():
    fmap, ratings = FIXTURES["two_items"]
    est = SemanticAutoencoder(feature_map=fmap).set_params(max_epochs=1)
    est.fit(list(ratings.items()))
    assert est.trace_.epochs_run == 1
    with pytest.raises(ContractError):
        SemanticAutoencoder(feature_map=fmap).fit({"i1": 7, "i2": 1})

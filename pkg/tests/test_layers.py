import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meshunet.layers import (
    AggregationLayer,
    Partition,
    PoolLayer,
    UnpoolLayer,
    concat,
    concat_backward,
    gpool_avg_backward,
    gpool_avg_forward,
    gpool_backward,
    gpool_forward,
    gunpool_backward,
    gunpool_forward,
    leaky_relu,
)

from _oracles import central_difference, random_connected_adjacency, reference_aggregation_forward, relative_error


def make_layer(adj, c_in, c_out, seed, **kwargs):
    layer = AggregationLayer.from_adjacency(adj, c_in, c_out, **kwargs)
    layer.init_params(np.random.default_rng(seed))
    return layer


def test_leaky_relu_values():
    x = np.array([-2.0, -0.5, 0.0, 0.5, 3.0])
    assert np.allclose(leaky_relu(x), [-0.6, -0.15, 0.0, 0.5, 3.0])
    assert np.allclose(leaky_relu(x, slope=0.1), [-0.2, -0.05, 0.0, 0.5, 3.0])


def test_identity_configuration():
    # 1 node, self-loop only, unit weight, zero bias, linear activation
    layer = AggregationLayer(
        indptr=[0, 1],
        sources=[0],
        c_in=1,
        c_out=1,
        activation="linear",
        weights=np.ones((1, 1, 1)),
        biases=np.zeros((1, 1)),
    )
    x = np.array([[3.25]])
    out, _ = layer.forward(x)
    assert np.array_equal(out, x)


def test_zero_parameters_give_zero_output(rng):
    adj = random_connected_adjacency(6, rng)
    layer = AggregationLayer.from_adjacency(adj, 3, 2)
    out, _ = layer.forward(rng.normal(size=(6, 3)))
    assert np.array_equal(out, np.zeros((6, 2)))


def test_bias_only_layer_applies_activation(rng):
    adj = random_connected_adjacency(4, rng)
    layer = AggregationLayer.from_adjacency(adj, 2, 2)
    layer.biases[...] = -1.0
    out, _ = layer.forward(np.zeros((4, 2)))
    assert np.allclose(out, -0.3)


@settings(max_examples=40)
@given(
    n=st.integers(2, 9),
    c_in=st.integers(1, 4),
    c_out=st.integers(1, 4),
    seed=st.integers(0, 2**31),
)
def test_forward_matches_loop_reference(n, c_in, c_out, seed):
    rng = np.random.default_rng(seed)
    adj = random_connected_adjacency(n, rng)
    layer = make_layer(adj, c_in, c_out, seed)
    x = rng.normal(size=(n, c_in))
    out, _ = layer.forward(x)
    assert relative_error(out, reference_aggregation_forward(layer, x)) < 1e-12


def test_parameter_count_formula(rng):
    adj = random_connected_adjacency(8, rng)
    c_in, c_out = 3, 5
    layer = AggregationLayer.from_adjacency(adj, c_in, c_out)
    windows = adj.row_counts()
    assert layer.param_count == int(windows.sum()) * c_in * c_out + adj.n * c_out


def test_init_params_respects_per_node_bound(rng):
    adj = random_connected_adjacency(12, rng)
    c_in, c_out = 3, 4
    layer = AggregationLayer.from_adjacency(adj, c_in, c_out)
    layer.init_params(rng)
    assert np.array_equal(layer.biases, np.zeros((12, c_out)))
    sizes = layer.window_sizes()
    for i in range(adj.n):
        bound = np.sqrt(6.0 / (sizes[i] * c_in + c_out))
        block = layer.weights[layer.indptr[i] : layer.indptr[i + 1]]
        assert np.abs(block).max() <= bound
        assert np.abs(block).max() > 0.1 * bound  # actually filled, not left at zero


def test_init_params_deterministic(rng):
    adj = random_connected_adjacency(7, rng)
    a = make_layer(adj, 2, 3, seed=5)
    b = make_layer(adj, 2, 3, seed=5)
    assert np.array_equal(a.weights, b.weights)


def test_batched_forward_equals_per_sample(rng):
    adj = random_connected_adjacency(8, rng)
    layer = make_layer(adj, 3, 2, seed=1)
    x = rng.normal(size=(5, 8, 3))
    batched, _ = layer.forward(x)
    for b in range(5):
        single, _ = layer.forward(x[b])
        assert np.allclose(batched[b], single, atol=1e-14)


def test_window_must_cover_every_source():
    # node 1 never appears as a source: invalid window table
    with pytest.raises(ValueError, match="cover"):
        AggregationLayer(indptr=[0, 1, 2], sources=[0, 0], c_in=1, c_out=1)


def _layer_loss_setup(seed, activation="leaky_relu", batch=1):
    rng = np.random.default_rng(seed)
    adj = random_connected_adjacency(int(rng.integers(2, 9)), rng)
    c_in, c_out = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    layer = make_layer(adj, c_in, c_out, seed, activation=activation)
    shape = (adj.n, c_in) if batch == 1 else (batch, adj.n, c_in)
    x = rng.normal(size=shape)
    proj = rng.normal(size=(batch, adj.n, c_out) if batch > 1 else (adj.n, c_out))
    return layer, x, proj


@pytest.mark.parametrize("activation", ["leaky_relu", "linear"])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_aggregation_gradients_match_central_differences(activation, seed):
    layer, x, proj = _layer_loss_setup(seed, activation)
    _, cache = layer.forward(x)
    grads = layer.backward(cache, proj)

    def loss_of_weights(w):
        saved = layer.weights
        layer.weights = w
        out, _ = layer.forward(x)
        layer.weights = saved
        return float(np.sum(out * proj))

    def loss_of_biases(b):
        saved = layer.biases
        layer.biases = b
        out, _ = layer.forward(x)
        layer.biases = saved
        return float(np.sum(out * proj))

    def loss_of_input(xi):
        out, _ = layer.forward(xi)
        return float(np.sum(out * proj))

    rng = np.random.default_rng(seed + 77)
    for analytic, arg, fn in (
        (grads.d_weights, layer.weights.copy(), loss_of_weights),
        (grads.d_biases, layer.biases.copy(), loss_of_biases),
        (grads.d_input, x.copy(), loss_of_input),
    ):
        count = min(arg.size, 25)
        idx = rng.choice(arg.size, size=count, replace=False)
        _, numeric = central_difference(fn, arg, indices=idx)
        assert relative_error(analytic.ravel()[idx], numeric, floor=1e-6) < 1e-6


def test_batched_parameter_gradients_sum_over_batch(rng):
    layer, x, proj = _layer_loss_setup(seed=9, batch=4)
    _, cache = layer.forward(x)
    grads = layer.backward(cache, proj)
    dw = np.zeros_like(layer.weights)
    db = np.zeros_like(layer.biases)
    for b in range(4):
        _, c1 = layer.forward(x[b])
        g = layer.backward(c1, proj[b])
        dw += g.d_weights
        db += g.d_biases
        assert np.allclose(g.d_input, grads.d_input[b], atol=1e-13)
    assert np.allclose(dw, grads.d_weights, atol=1e-13)
    assert np.allclose(db, grads.d_biases, atol=1e-13)


def test_partition_validation():
    with pytest.raises(ValueError):
        Partition([[0, 1], [1, 2]])  # overlap
    with pytest.raises(ValueError):
        Partition([[0, 1], [3]])  # node 2 missing
    with pytest.raises(ValueError):
        Partition([[0, 0, 1]])  # repeated member
    with pytest.raises(ValueError):
        Partition([[0], []])  # empty subgraph


def test_gpool_max_values_and_ties():
    part = Partition([[0, 2], [1, 3]])
    x = np.array([[1.0, 5.0], [4.0, 0.0], [1.0, -2.0], [4.0, 7.0]])
    pooled, argmax = gpool_forward(part, x)
    assert np.array_equal(pooled, [[1.0, 5.0], [4.0, 7.0]])
    # channel 0 of subgraph {0, 2} ties at 1.0: the lower parent index wins
    assert np.array_equal(argmax, [[0, 0], [1, 3]])


def test_gpool_backward_routes_to_winners():
    part = Partition([[0, 2], [1, 3]])
    x = np.array([[1.0, 5.0], [4.0, 0.0], [0.5, -2.0], [4.5, 7.0]])
    _, argmax = gpool_forward(part, x)
    up = np.array([[10.0, 20.0], [30.0, 40.0]])
    d = gpool_backward(argmax, up, n_parent=4)
    expect = np.zeros((4, 2))
    expect[0, 0] = 10.0
    expect[0, 1] = 20.0
    expect[3, 0] = 30.0
    expect[3, 1] = 40.0
    assert np.array_equal(d, expect)


def test_gpool_avg_and_unpool_roundtrip(rng):
    part = Partition([[0, 1, 4], [2], [3, 5]])
    x = rng.normal(size=(6, 3))
    avg = gpool_avg_forward(part, x)
    assert np.allclose(avg[0], x[[0, 1, 4]].mean(axis=0))
    assert np.allclose(avg[1], x[2])
    un = gunpool_forward(part, avg)
    assert un.shape == x.shape
    assert np.allclose(un[0], un[1])
    assert np.allclose(un[0], avg[0])


@pytest.mark.parametrize("aggregator", ["max", "avg"])
def test_pool_layers_gradients_match_central_differences(aggregator, rng):
    part = Partition([[0, 3], [1], [2, 4, 5]])
    x = rng.normal(size=(2, 6, 3))
    proj = rng.normal(size=(2, 3, 3))
    pool = PoolLayer(part, aggregator)
    pooled, cache = pool.forward(x)
    analytic = pool.backward(cache, proj)

    def loss(xi):
        y, _ = pool.forward(xi)
        return float(np.sum(y * proj))

    idx = rng.choice(x.size, size=20, replace=False)
    _, numeric = central_difference(loss, x.copy(), indices=idx)
    assert relative_error(analytic.ravel()[idx], numeric, floor=1e-6) < 1e-6


def test_unpool_gradients_match_central_differences(rng):
    part = Partition([[0, 3], [1], [2, 4, 5]])
    unpool = UnpoolLayer(part)
    x = rng.normal(size=(3, 2))
    proj = rng.normal(size=(6, 2))
    analytic = unpool.backward(proj)

    def loss(xi):
        return float(np.sum(unpool.forward(xi) * proj))

    _, numeric = central_difference(loss, x.copy())
    assert relative_error(analytic.ravel(), numeric, floor=1e-6) < 1e-6


def test_gunpool_replicates_members():
    part = Partition([[0, 2], [1]])
    x = np.array([[1.0], [2.0]])
    out = gunpool_forward(part, x)
    assert np.array_equal(out, [[1.0], [2.0], [1.0]])


def test_concat_puts_unpooled_channels_first(rng):
    a = rng.normal(size=(5, 2))
    b = rng.normal(size=(5, 3))
    joined = concat(a, b)
    assert joined.shape == (5, 5)
    assert np.array_equal(joined[:, :2], a)
    assert np.array_equal(joined[:, 2:], b)
    da, db = concat_backward(joined, 2)
    assert np.array_equal(da, a)
    assert np.array_equal(db, b)


def test_concat_shape_mismatch_rejected(rng):
    with pytest.raises(ValueError):
        concat(rng.normal(size=(5, 2)), rng.normal(size=(4, 2)))

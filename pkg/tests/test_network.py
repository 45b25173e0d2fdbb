import numpy as np
import pytest

from meshunet.graph import adjacency_from_mesh, adjacency_power, build_pool_plan
from meshunet.mesh import l_shape_quad_mesh, rect_quad_mesh
from meshunet.network import (
    ModelConfig,
    build_model,
    count_parameters,
    load_model,
    model_backward,
    model_forward,
    save_model,
)

from _oracles import central_difference, random_connected_adjacency, relative_error


def small_setup(seed=0, num_poolings=1, aggs=1, channels=(3, 4), power=2, n=7, **kwargs):
    rng = np.random.default_rng(seed)
    adj = random_connected_adjacency(n, rng)
    config = ModelConfig(
        num_poolings=num_poolings,
        aggs_per_level=aggs,
        window_power=power,
        channels_per_level=channels,
        in_channels=2,
        out_channels=2,
        **kwargs,
    )
    model = build_model(config, adj, seed=seed, pool_trials=10)
    return model, adj, rng


def test_model_config_validation():
    with pytest.raises(ValueError, match="channels_per_level"):
        ModelConfig(2, 1, 2, (4, 8), 2, 2)
    with pytest.raises(ValueError, match="aggregator"):
        ModelConfig(1, 1, 2, (4, 8), 2, 2, aggregator="median")
    with pytest.raises(ValueError, match="num_poolings"):
        ModelConfig(0, 1, 2, (4,), 2, 2)


def test_layer_sequence_single_level():
    model, _, _ = small_setup()
    kinds = [op.kind for op in model.ops]
    # encoder agg, pool, bottleneck agg, unpool+concat, decoder agg, final agg
    assert kinds == ["agg", "pool", "agg", "unpool_concat", "agg", "agg"]
    aggs = model.agg_layers()
    assert len(aggs) == 4
    assert (aggs[0].c_in, aggs[0].c_out) == (2, 3)
    assert (aggs[1].c_in, aggs[1].c_out) == (3, 4)
    # decoder input: unpooled bottleneck channels then the skip channels
    assert (aggs[2].c_in, aggs[2].c_out) == (4 + 3, 3)
    assert (aggs[3].c_in, aggs[3].c_out) == (3, 2)
    assert aggs[3].activation == "linear"
    assert all(layer.activation == "leaky_relu" for layer in aggs[:3])


def test_layer_sequence_depth_two():
    model, _, _ = small_setup(num_poolings=2, aggs=2, channels=(3, 4, 5), n=12)
    kinds = [op.kind for op in model.ops]
    assert kinds == (
        ["agg", "agg", "pool"] * 2
        + ["agg", "agg"]
        + ["unpool_concat", "agg", "agg"] * 2
        + ["agg"]
    )
    chans = [(layer.c_in, layer.c_out) for layer in model.agg_layers()]
    assert chans == [
        (2, 3),
        (3, 3),
        (3, 4),
        (4, 4),
        (4, 5),
        (5, 5),
        (5 + 4, 4),
        (4, 4),
        (4 + 3, 3),
        (3, 3),
        (3, 2),
    ]


def test_windows_use_powered_adjacency():
    model, adj, _ = small_setup(power=2)
    powered = adjacency_power(adj, 2)
    first = model.agg_layers()[0]
    assert np.array_equal(first.indptr, powered.indptr)
    assert np.array_equal(first.sources, powered.indices)
    # pooling still partitions the un-powered graph
    part = model.ops[1].layer.partition
    assert part.n_parent == adj.n


def test_parameter_vector_is_the_layer_storage():
    model, _, _ = small_setup()
    total = sum(layer.param_count for layer in model.agg_layers())
    assert count_parameters(model) == total
    model.theta[...] = 0.0
    for layer in model.agg_layers():
        assert not layer.weights.any()
        assert not layer.biases.any()


def test_build_is_deterministic_per_seed():
    m1, _, _ = small_setup(seed=3)
    m2, _, _ = small_setup(seed=3)
    m3, _, _ = small_setup(seed=4)
    assert np.array_equal(m1.theta, m2.theta)
    assert not np.array_equal(m1.theta, m3.theta)


def test_forward_shapes_and_batching():
    model, adj, rng = small_setup(num_poolings=2, channels=(3, 4, 5), n=11)
    x1 = rng.normal(size=(adj.n, 2))
    y1, _ = model_forward(model, x1)
    assert y1.shape == (adj.n, 2)
    xb = np.stack([x1, 2.0 * x1, -x1])
    yb, _ = model_forward(model, xb)
    assert yb.shape == (3, adj.n, 2)
    assert np.allclose(yb[0], y1, atol=1e-14)


def test_forward_rejects_wrong_node_count():
    model, adj, rng = small_setup()
    with pytest.raises(ValueError, match="expected input"):
        model_forward(model, rng.normal(size=(adj.n + 1, 2)))


def test_plan_level_mismatch_rejected():
    rng = np.random.default_rng(0)
    adj = random_connected_adjacency(9, rng)
    plan = build_pool_plan(adj, 1, trials=5)
    config = ModelConfig(2, 1, 2, (3, 4, 5), 2, 2)
    with pytest.raises(ValueError, match="level count"):
        build_model(config, adj, seed=0, pool_plan=plan)


def test_plan_graph_mismatch_rejected():
    rng = np.random.default_rng(0)
    adj = random_connected_adjacency(9, rng)
    other = random_connected_adjacency(9, np.random.default_rng(5))
    plan = build_pool_plan(other, 1, trials=5)
    config = ModelConfig(1, 1, 2, (3, 4), 2, 2)
    with pytest.raises(ValueError, match="different graph"):
        build_model(config, adj, seed=0, pool_plan=plan)


@pytest.mark.parametrize("aggregator", ["max", "avg"])
@pytest.mark.parametrize("seed", [0, 1])
def test_model_gradient_matches_central_differences(aggregator, seed):
    model, adj, rng = small_setup(
        seed=seed, num_poolings=2, aggs=2, channels=(2, 3, 4), n=9, aggregator=aggregator
    )
    x = rng.normal(size=(3, adj.n, 2))
    proj = rng.normal(size=(3, adj.n, 2))
    _, cache = model_forward(model, x)
    analytic = model_backward(model, cache, proj)

    def loss(theta):
        saved = model.theta.copy()
        model.theta[...] = theta
        out, _ = model_forward(model, x)
        model.theta[...] = saved
        return float(np.sum(out * proj))

    idx = rng.choice(model.theta.size, size=40, replace=False)
    _, numeric = central_difference(loss, model.theta.copy(), indices=idx)
    assert relative_error(analytic[idx], numeric, floor=1e-6) < 1e-6


def test_input_gradient_flows_through_skips(rng):
    # with max pooling, zeroing the input must change the output: the skip
    # path keeps level-0 features in play after all poolings
    model, adj, rng = small_setup(seed=2)
    x = rng.normal(size=(adj.n, 2))
    y, _ = model_forward(model, x)
    y0, _ = model_forward(model, np.zeros_like(x))
    assert not np.allclose(y, y0)


def test_save_load_roundtrip(tmp_path):
    mesh = rect_quad_mesh(4, 4)
    adj = adjacency_from_mesh(mesh)
    plan = build_pool_plan(adj, 2, trials=10, mesh_digest=mesh.digest())
    config = ModelConfig(2, 1, 2, (3, 4, 5), 2, 2)
    model = build_model(config, adj, seed=8, pool_plan=plan, mesh_digest=mesh.digest())
    path = tmp_path / "model.bin"
    save_model(model, path)
    loaded, trainer = load_model(path, plan)
    assert trainer is None
    assert loaded.config == config
    assert loaded.mesh_digest == mesh.digest()
    assert np.array_equal(loaded.theta, model.theta)
    x = np.random.default_rng(1).normal(size=(adj.n, 2))
    assert np.array_equal(model.predict(x), loaded.predict(x))


def test_save_load_preserves_trainer_state(tmp_path):
    model, adj, rng = small_setup(seed=1)
    m = rng.normal(size=model.theta.size)
    v = np.abs(rng.normal(size=model.theta.size))
    path = tmp_path / "ck.bin"
    save_model(model, path, trainer={"m": m, "v": v, "t": 17, "note": 4.5})
    _, trainer = load_model(path, model.pool_plan)
    assert trainer["t"] == 17
    assert trainer["note"] == 4.5
    assert np.array_equal(trainer["m"], m)
    assert np.array_equal(trainer["v"], v)


def test_load_rejects_wrong_plan(tmp_path):
    model, adj, _ = small_setup(seed=1)
    other_plan = build_pool_plan(adj, 1, trials=3, seed_base=1234)
    path = tmp_path / "model.bin"
    save_model(model, path)
    if other_plan.digest() == model.pool_plan.digest():
        pytest.skip("alternate seed produced the identical plan")
    with pytest.raises(ValueError, match="different pool plan"):
        load_model(path, other_plan)


def test_load_rejects_garbage(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"definitely not a model")
    model, _, _ = small_setup()
    with pytest.raises(ValueError, match="magic"):
        load_model(path, model.pool_plan)


def test_reference_architecture_parameter_scale():
    # 3 poolings, 2 aggregations per level, squared windows, channels
    # 16/32/64/128 on the 65-node L-shape: about 4e6 parameters
    mesh = l_shape_quad_mesh()
    adj = adjacency_from_mesh(mesh)
    config = ModelConfig(3, 2, 2, (16, 32, 64, 128), 2, 2)
    model = build_model(config, adj, seed=0, pool_trials=50)
    assert 1e6 < count_parameters(model) < 1e7

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings

from cascl.encoder import (
    CascadeModel,
    ModelConfig,
    NodeFeatureSpec,
    encode,
    heat_kernel,
    laplacian,
    make_batch,
    node_features,
    pad_batch,
    project,
)
from cascl.errors import ConfigError, ShapeMismatch
from cascl.graph import Adoption, build_graph

from conftest import cascades, tree

WAVELET = NodeFeatureSpec(mode="wavelet", wavelet_scale=0.7, wavelet_samples=5, wavelet_t_max=6.0)


def small_config(**kw):
    base = dict(features=NodeFeatureSpec(), embedding_dim=6, hidden_dim=8, head_depth=2, finetune_layer=1)
    base.update(kw)
    return ModelConfig(**base)


def test_single_node_wavelet():
    f = node_features(tree([-1]), WAVELET)
    ts = np.linspace(0, 6.0, 5)
    expected = np.column_stack([np.cos(ts), np.sin(ts)]).reshape(1, -1)
    assert np.allclose(f[0, :-1], expected[0], atol=1e-12)
    assert f[0, -1] == 0.0


@pytest.mark.parametrize("s", [0.1, 0.7, 2.0])
def test_two_node_heat_trace(s):
    psi, evals = heat_kernel(tree([-1, 0]), s)
    assert np.allclose(evals, [0.0, 2.0])
    assert np.trace(psi) == pytest.approx(1 + np.exp(-2 * s), abs=1e-12)


@settings(max_examples=30)
@given(cascades(min_nodes=2, max_nodes=25))
def test_heat_kernel_matches_expm(g):
    psi, _ = heat_kernel(g, 0.7)
    assert np.allclose(psi, scipy.linalg.expm(-0.7 * laplacian(g)), atol=1e-10)


def test_structural_root_row(path3):
    f = node_features(path3, NodeFeatureSpec(t_o=10.0))
    assert f[0, 0] == 0.0 and f[0, 2] == 0.0
    assert np.allclose(f[:, 1], np.log1p([1, 2, 1]))
    assert np.allclose(f[:, 2], [0, 0.5, 1])
    assert list(f[:, 3]) == [0, 0, 1]
    assert np.allclose(f[:, 0], [0, 0.1, 0.2])


def test_feature_dims():
    assert NodeFeatureSpec().dim == 4
    assert WAVELET.dim == 11
    assert node_features(tree([-1, 0, 0]), WAVELET).shape == (3, 11)
    with pytest.raises(ConfigError):
        NodeFeatureSpec(mode="wavelet", wavelet_samples=1)


def test_zero_parameters_give_zero_state(star3):
    model = CascadeModel(small_config(), zero=True)
    assert np.array_equal(encode(star3, model), np.zeros(8))
    assert np.array_equal(project(encode(star3, model), model), np.zeros(8))


def _relabelled(g):
    """Same tree and times with fresh ids and a shuffled input order."""
    names = {u: f"x{u}" for u in g.users}
    adoptions = [Adoption(names[u], float(t), names[g.users[p]] if p >= 0 else None)
                 for u, t, p in zip(g.users, g.times, g.parents)]
    return build_graph(adoptions[::-1], id="other")


@settings(max_examples=25, deadline=None)
@given(cascades(max_nodes=20))
def test_isomorphic_graphs_encode_identically(g):
    h = _relabelled(g)
    model = CascadeModel(small_config(), seed=1)
    assert np.array_equal(encode(g, model), encode(h, model))
    for spec in (NodeFeatureSpec(), WAVELET):
        assert np.allclose(node_features(g, spec), node_features(h, spec), atol=1e-12)


def test_row_order_matters():
    model = CascadeModel(small_config(), seed=2)
    f = node_features(tree([-1, 0, 1, 1]), NodeFeatureSpec())
    a = model.encode(pad_batch([f])).data
    b = model.encode(pad_batch([f[[0, 2, 1, 3]]])).data
    assert not np.allclose(a, b)


def test_batching_is_length_independent():
    model = CascadeModel(small_config(), seed=3)
    graphs = [tree([-1, 0]), tree([-1, 0, 1, 1, 0, 4])]
    together = model.encode(make_batch(graphs, NodeFeatureSpec())).data
    for k, g in enumerate(graphs):
        assert np.allclose(together[k], encode(g, model), atol=1e-14)


def test_head_depth_zero_is_identity(star3):
    model = CascadeModel(small_config(head_depth=0, finetune_layer=0), seed=0)
    h = encode(star3, model)
    assert np.array_equal(project(h, model), h)


@pytest.mark.parametrize("j, width", [(0, 8), (1, 8), (2, 3)])
def test_task_head_reads_layer(j, width):
    model = CascadeModel(small_config(finetune_layer=j, projection_dim=3), seed=0)
    model.attach_task_head(seed=1, bias=2.5)
    assert model.params["task.1.w"].shape[0] == width
    batch = make_batch([tree([-1, 0, 0])], NodeFeatureSpec())
    acts = model.head_activations(model.encode(batch), j)
    assert np.allclose(model.task_output(acts[-1]).data, model.predict(batch).data)


def test_predict_needs_task_head(star3):
    with pytest.raises(ConfigError):
        CascadeModel(small_config()).predict(make_batch([star3], NodeFeatureSpec()))


def test_feature_width_mismatch(star3):
    model = CascadeModel(small_config())
    with pytest.raises(ShapeMismatch):
        model.encode(make_batch([star3], WAVELET))
    with pytest.raises(ShapeMismatch):
        pad_batch([])


@pytest.mark.parametrize("kw", [{"hidden_dim": 7}, {"head_depth": 5}, {"finetune_layer": 3}])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        small_config(**kw)


def test_checkpoint_round_trip(tmp_path, star3):
    model = CascadeModel(small_config(features=WAVELET), seed=4)
    model.attach_task_head(seed=5, bias=1.0)
    model.save(tmp_path / "m.npz")
    back = CascadeModel.load(tmp_path / "m.npz")
    assert back.config == model.config
    assert back.params.keys() == model.params.keys()
    batch = make_batch([star3], WAVELET)
    assert np.array_equal(back.predict(batch).data, model.predict(batch).data)
    with np.load(tmp_path / "m.npz") as data:
        assert data["emb.w"].dtype == np.dtype("<f8")


def test_with_finetune_layer_drops_task_head():
    model = CascadeModel(small_config(), seed=0)
    model.attach_task_head(seed=0)
    moved = model.with_finetune_layer(2)
    assert not moved.has_task_head and model.has_task_head
    assert moved.config.finetune_layer == 2


def test_same_seed_same_weights():
    a, b = CascadeModel(small_config(), seed=9), CascadeModel(small_config(), seed=9)
    assert all(np.array_equal(a.params[k].data, b.params[k].data) for k in a.params)

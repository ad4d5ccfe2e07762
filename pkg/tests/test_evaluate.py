import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cascl.encoder import CascadeModel, ModelConfig, NodeFeatureSpec
from cascl.errors import EmptyTestSplit, TooFewPositives
from cascl.evaluate import (
    MetricsReport,
    aggregate,
    build_outbreak_dataset,
    evaluate_outbreak,
    evaluate_popularity,
)
from cascl.ingest import CascadeDataset, LabeledCascade

from conftest import tree

CFG = ModelConfig(NodeFeatureSpec(), embedding_dim=4, hidden_dim=4, head_depth=1, finetune_layer=1)


def _dataset(labels_by_split):
    labeled = []
    for split, labels in labels_by_split.items():
        for k, y in enumerate(labels):
            labeled.append(LabeledCascade(tree([-1, 0], id=f"{split}{k}"), float(y), split))
    return CascadeDataset(labeled, [])


def constant_model(value: float) -> CascadeModel:
    model = CascadeModel(CFG, zero=True)
    model.attach_task_head(seed=0, bias=value)
    model.params["task.2.w"].data[:] = 0.0
    return model


def test_constant_predictor_msle_is_variance():
    rng = np.random.default_rng(0)
    y = np.round(2 ** rng.uniform(3, 10, 200))
    ds = _dataset({"test": y})
    report = evaluate_popularity(constant_model(np.log2(y).mean()), ds)
    assert report.values[0] == pytest.approx(np.log2(y).var(), rel=1e-12)


def test_oracle_predictor_scores_zero():
    ds = _dataset({"test": [16.0] * 5})
    assert evaluate_popularity(constant_model(4.0), ds).values[0] == 0.0


def test_empty_test_split():
    with pytest.raises(EmptyTestSplit):
        evaluate_popularity(constant_model(1.0), _dataset({"train": [2.0]}))


def test_report_formatting():
    r = MetricsReport("msle", [2.0, 4.0], [0, 1])
    assert r.mean == 3.0 and r.std == 1.0
    assert r.format() == "3.00±1.00"
    assert MetricsReport("msle", [1.5]).std == 0.0
    merged = aggregate([MetricsReport("msle", [1.0], [0]), MetricsReport("msle", [3.0], [1])])
    assert merged.values == [1.0, 3.0] and merged.seeds == [0, 1]
    assert merged.to_dict()["mean"] == 2.0


def test_outbreak_decile():
    ds = _dataset({"train": np.arange(1, 1001), "val": np.arange(1, 101), "test": np.arange(1, 101)})
    out = build_outbreak_dataset(ds, seed=0)
    train = out.split("train")
    pos = [c for c in train if c.label == 1.0]
    assert len(pos) == 100 and len(train) == 200
    # positives are exactly the strict top decile of the original labels
    assert {c.graph.id for c in pos} == {f"train{k}" for k in range(900, 1000)}


@settings(max_examples=25, deadline=None)
@given(st.integers(20, 300), st.integers(0, 10**6))
def test_outbreak_balanced_per_split(n, seed):
    rng = np.random.default_rng(seed)
    labels = {s: rng.integers(1, 10**4, size=n) for s in ("train", "val", "test")}
    out = build_outbreak_dataset(_dataset(labels), seed=seed)
    for split in ("train", "val", "test"):
        y = np.array([c.label for c in out.split(split)])
        assert (y == 1).sum() == (y == 0).sum() > 0


def test_outbreak_seeded_negatives():
    ds = _dataset({s: np.arange(1, 301) for s in ("train", "val", "test")})
    ids = lambda d: [c.graph.id for c in d.labeled]
    assert ids(build_outbreak_dataset(ds, seed=3)) == ids(build_outbreak_dataset(ds, seed=3))
    assert ids(build_outbreak_dataset(ds, seed=3)) != ids(build_outbreak_dataset(ds, seed=4))


def test_outbreak_degenerate_labels():
    with pytest.raises(TooFewPositives):
        build_outbreak_dataset(_dataset({s: [5.0] * 50 for s in ("train", "val", "test")}))


def test_random_predictor_accuracy_near_half():
    n = 2000
    labels = np.r_[np.ones(n // 2), np.zeros(n // 2)]
    ds = CascadeDataset([LabeledCascade(tree([-1, 0], id=f"c{k}"), y, "test") for k, y in enumerate(labels)], [])
    rng = np.random.default_rng(0)
    # relabel at random so a fixed model becomes a coin flip
    ds = CascadeDataset([LabeledCascade(c.graph, float(rng.integers(2)), "test") for c in ds.labeled], [])
    acc = evaluate_outbreak(constant_model(1.0), ds).values[0]
    assert abs(acc - 0.5) < 3 * np.sqrt(0.25 / n)


def test_oracle_outbreak_accuracy():
    ds = _dataset({"test": [1.0] * 10})
    assert evaluate_outbreak(constant_model(5.0), ds).values[0] == 1.0

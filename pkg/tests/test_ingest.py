import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cascl.errors import ConfigError, EmptyDataset, FractionOutOfRange, InconsistentCount, MalformedLine
from cascl.graph import check_tree
from cascl.ingest import (
    CascadeDataset,
    DatasetConfig,
    LabeledCascade,
    SyntheticParams,
    assemble_dataset,
    generate_synthetic,
    label_fraction,
    load_dataset,
    parse_line,
    read_cascades,
    read_manifest,
    serialize_graph,
    split_sizes,
    write_cascades,
    write_manifest,
)

from conftest import cascades, tree


def test_parse_path():
    g = parse_line("c1\tA\t1000\t2\tA:0 A/B:1.5 A/B/C:2.0")
    assert g.users == ("A", "B", "C")
    assert list(g.times) == [0.0, 1.5, 2.0]
    assert g.edges == [("A", "B"), ("B", "C")]
    assert g.pub_time == 1000.0


def test_parse_count_mismatch():
    with pytest.raises(InconsistentCount):
        parse_line("c2\tA\t1000\t1\tA:0")


def test_parse_two_nodes():
    g = parse_line("c3\tA\t1000\t1\tA:0 A/B:0.5")
    assert len(g) == 2


@pytest.mark.parametrize("line", [
    "c\tA\t1000\t1",
    "c\tA\tnope\t1\tA/B:1",
    "c\tA\t0\t1\tX/B:1",
    "c\tA\t0\t1\tA/B",
    "c\tA\t0\t1\tA/B:soon",
    "c\tA\t0\t0\tA:3",
])
def test_parse_malformed(line):
    with pytest.raises(MalformedLine):
        parse_line(line)


@given(cascades())
def test_serialize_round_trip(g):
    assert parse_line(serialize_graph(g)) == g


def test_file_round_trip_gzip(tmp_path):
    rng = np.random.default_rng(1)
    graphs = [tree([-1] + [int(rng.integers(k)) for k in range(1, 6)], id=f"c{i}") for i in range(5)]
    for name in ("a.txt", "a.txt.gz"):
        write_cascades(tmp_path / name, graphs)
        assert list(read_cascades(tmp_path / name)) == graphs


def test_reader_skips_comments_and_reports_line(tmp_path):
    p = tmp_path / "x.txt"
    p.write_text("# header\n\nc3\tA\t0\t1\tA:0 A/B:0.5\nbroken\n")
    with pytest.raises(MalformedLine, match=":4:"):
        list(read_cascades(p))


def test_manifest_round_trip(tmp_path):
    write_manifest(tmp_path / "m", {"b": 2, "a": "x"})
    assert read_manifest(tmp_path / "m") == {"a": "x", "b": "2"}


def _star(cid, n, pub=0.0, late=0):
    """Star with ``n`` nodes inside the first hour and ``late`` nodes at t=10."""
    times = [0.0] + list(np.linspace(0.1, 0.9, n - 1)) + [10.0] * late
    return tree([-1] + [0] * (n - 1 + late), times, id=cid, pub_time=pub)


def test_protocol_filters_truncates_and_labels():
    cfg = DatasetConfig(dataset_end_time=100.0, train_frac=1.0, val_frac=0.0, test_frac=0.0)
    ds = assemble_dataset([_star("small", 4), _star("big", 120, late=5), _star("late", 12, pub=90.0)], cfg)
    assert [c.graph.id for c in ds.labeled] == ["big"]
    big = ds.labeled[0]
    assert len(big.graph) == 100
    assert big.label == 125
    assert [g.id for g in ds.unlabeled] == ["late"]


@given(st.integers(1, 3000))
def test_split_sizes(n):
    tr, va, te = split_sizes(n, DatasetConfig())
    assert tr + va + te == n
    assert abs(tr - 0.5 * n) <= 1
    assert abs(va - 0.1 * n) <= 1
    assert abs(te - 0.4 * n) <= 1


def _fake_dataset(n_train):
    g = tree([-1, 0])
    labeled = [LabeledCascade(g, 1.0, "train") for _ in range(n_train)]
    labeled += [LabeledCascade(g, 1.0, "test") for _ in range(3)]
    return CascadeDataset(labeled, [])


def test_label_fraction_ceiling():
    ds = _fake_dataset(1000)
    small = label_fraction(ds, 0.01, seed=0)
    assert len(small.split("train")) == 10
    assert len(small.unlabeled) == 990
    assert len(small.split("test")) == 3
    assert len(label_fraction(ds, 1.0).split("train")) == 1000


@given(st.integers(1, 500), st.sampled_from([0.01, 0.1, 0.37, 1.0]))
def test_label_fraction_size(n, f):
    assert len(label_fraction(_fake_dataset(n), f).split("train")) == math.ceil(f * n)


def test_label_fraction_deterministic():
    ds = generate_synthetic(300, seed=2)
    a = label_fraction(ds, 0.1, seed=7)
    b = label_fraction(ds, 0.1, seed=7)
    assert [c.graph.id for c in a.split("train")] == [c.graph.id for c in b.split("train")]


@pytest.mark.parametrize("f", [0.0, -0.1, 1.5])
def test_label_fraction_range(f):
    with pytest.raises(FractionOutOfRange):
        label_fraction(_fake_dataset(5), f)


def test_config_validation():
    with pytest.raises(ConfigError):
        DatasetConfig(t_o=30.0, t_p=24.0)
    with pytest.raises(ConfigError):
        DatasetConfig(train_frac=0.9)


def test_synthetic_deterministic(tmp_path):
    a = generate_synthetic(200, seed=3)
    b = generate_synthetic(200, seed=3)
    write_cascades(tmp_path / "a", [c.graph for c in a.labeled] + a.unlabeled)
    write_cascades(tmp_path / "b", [c.graph for c in b.labeled] + b.unlabeled)
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()
    assert [c.label for c in a.labeled] == [c.label for c in b.labeled]


def test_synthetic_degenerate_is_empty():
    with pytest.raises(EmptyDataset):
        generate_synthetic(50, gen_params=SyntheticParams(branching_mean=0.0, max_size=1))


@pytest.fixture(scope="module")
def synthetic_2000():
    return generate_synthetic(2000, seed=0)


def test_synthetic_default_pools(synthetic_2000):
    counts = synthetic_2000.counts()
    assert counts["train"] > 0 and counts["unlabeled"] > 0
    # frozen regression fixture
    assert counts == {"train": 626, "val": 125, "test": 500, "unlabeled": 620}


@settings(max_examples=20, deadline=None)
@given(st.data())
def test_synthetic_protocol(synthetic_2000, data):
    c = synthetic_2000.labeled[data.draw(st.integers(0, len(synthetic_2000.labeled) - 1))]
    check_tree(c.graph)
    assert 10 <= len(c.graph) <= 100
    assert np.all(c.graph.times < 1.0)
    assert c.label >= len(c.graph) or len(c.graph) == 100


def test_load_dataset(tmp_path):
    graphs = [_star(f"c{i}", 12, pub=float(i)) for i in range(20)]
    write_cascades(tmp_path / "d.txt", graphs)
    ds = load_dataset(tmp_path / "d.txt", DatasetConfig(dataset_end_time=40.0))
    assert ds.counts() == {"train": 8, "val": 2, "test": 7, "unlabeled": 3}

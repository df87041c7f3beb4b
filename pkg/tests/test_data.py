import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.linear_model import LogisticRegression

from anarchic_fl.data import (
    Dataset,
    PartitionPlan,
    gen_synthetic_logreg,
    load_idx,
    partition_by_label,
)
from anarchic_fl.exceptions import ConfigurationError, FormatError, PartitionError
from anarchic_fl.numerics import LogReg, full_gradient


def _balanced(n_per=10, C=10, d=2):
    labels = np.repeat(np.arange(C), n_per)
    return Dataset(np.arange(len(labels) * d, dtype=float).reshape(-1, d), labels, C)


# -- gen_synthetic_logreg ---------------------------------------------------------------


def test_all_classes_present():
    ds = gen_synthetic_logreg(100, 5, 10, seed=3)
    counts = np.bincount(ds.labels, minlength=10)
    assert len(counts) == 10 and counts.min() >= 1


def test_same_seed_byte_identical():
    a = gen_synthetic_logreg(200, 4, 3, 2.0, seed=11)
    b = gen_synthetic_logreg(200, 4, 3, 2.0, seed=11)
    assert a.features.tobytes() == b.features.tobytes()
    assert a.labels.tobytes() == b.labels.tobytes()


def test_n_below_C_rejected():
    with pytest.raises(ConfigurationError):
        gen_synthetic_logreg(5, 2, 10)


def test_cluster_means_have_separation_norm():
    # with many samples the empirical class means approach the true means
    ds = gen_synthetic_logreg(40_000, 6, 4, separation=5.0, seed=0)
    for c in range(4):
        mu = ds.features[ds.labels == c].mean(axis=0)
        assert np.linalg.norm(mu) == pytest.approx(5.0, abs=0.1)


def test_well_separated_data_is_learnable_by_gd():
    ds = gen_synthetic_logreg(1000, 2, 10, separation=10.0, seed=0)

    class Whole:
        features = ds.features
        labels = ds.labels

    model = LogReg(2, 10)
    x = np.zeros(model.dim)
    for _ in range(1500):
        x -= 0.5 * full_gradient(model, Whole, x)
    W, b = model.unpack(x)
    acc = np.mean(np.argmax(ds.features @ W.T + b, axis=1) == ds.labels)
    assert acc > 0.95
    # independent cross-check with a reference solver
    ref = LogisticRegression(C=1e4, max_iter=2000).fit(ds.features, ds.labels)
    assert ref.score(ds.features, ds.labels) > 0.95


# -- partition_by_label -------------------------------------------------------------------


def test_p_equals_C_disjoint():
    ds = gen_synthetic_logreg(500, 3, 5, seed=1)
    parts = partition_by_label(ds, PartitionPlan(5, 5, seed=0, per_worker=100))
    allidx = np.concatenate([p.indices for p in parts])
    assert len(allidx) == len(set(allidx.tolist())) == 500


def test_p1_one_class_each_full_coverage():
    ds = _balanced()
    parts = partition_by_label(ds, PartitionPlan(10, 1, seed=4))
    assert all(len(p.classes_present) == 1 for p in parts)
    assert set().union(*(p.classes_present for p in parts)) == set(range(10))
    for p in parts:
        assert set(p.labels.tolist()) == set(p.classes_present)


def test_same_seed_same_partitions():
    ds = gen_synthetic_logreg(400, 3, 10, seed=1)
    plan = PartitionPlan(8, 2, seed=7, per_worker=20)
    a = partition_by_label(ds, plan)
    b = partition_by_label(ds, plan)
    for pa, pb in zip(a, b):
        np.testing.assert_array_equal(pa.indices, pb.indices)
        assert pa.classes_present == pb.classes_present


def test_infeasible_plan_names_worker():
    ds = _balanced(n_per=10, C=2)
    with pytest.raises(PartitionError) as ei:
        partition_by_label(ds, PartitionPlan(3, 1, seed=0, per_worker=10))
    assert ei.value.worker == 2


def test_pinned_classes():
    ds = gen_synthetic_logreg(300, 3, 5, seed=2)
    pins = [frozenset({0, 1}), frozenset({3, 4})]
    parts = partition_by_label(ds, PartitionPlan(2, 2, seed=1, per_worker=20), classes=pins)
    assert [p.classes_present for p in parts] == pins
    assert set(parts[1].labels.tolist()) == {3, 4}


@settings(max_examples=40, deadline=None)
@given(
    M=st.integers(1, 8),
    p=st.integers(1, 6),
    C=st.integers(2, 6),
    per=st.integers(1, 20),
    seed=st.integers(0, 2**16),
)
def test_partition_invariants(M, p, C, per, seed):
    ds = gen_synthetic_logreg(max(C, 300), 2, C, seed=seed % 7)
    plan = PartitionPlan(M, p, seed, per)
    try:
        parts = partition_by_label(ds, plan)
    except PartitionError:
        return
    sizes = {len(q) for q in parts}
    allidx = np.concatenate([q.indices for q in parts])
    assert sizes == {per}
    assert len(allidx) <= len(ds)
    assert np.bincount(allidx).max() <= 1
    for q in parts:
        assert len(q.classes_present) <= p
        assert len(q.classes_present) == min(p, C)
        assert set(q.labels.tolist()) <= set(q.classes_present)
    again = partition_by_label(ds, plan)
    assert all(np.array_equal(a.indices, b.indices) for a, b in zip(parts, again))


# -- load_idx ----------------------------------------------------------------------------------


def _write_idx(tmp_path, images, labels, img_magic=0x803, lbl_magic=0x801):
    n, r, c = images.shape
    ip = tmp_path / "img.idx"
    lp = tmp_path / "lbl.idx"
    ip.write_bytes(struct.pack(">IIII", img_magic, n, r, c) + images.astype(np.uint8).tobytes())
    lp.write_bytes(struct.pack(">II", lbl_magic, len(labels)) + bytes(labels))
    return ip, lp


def test_hand_built_fixture(tmp_path):
    # two 2x2 images, bytes written by hand
    ip = tmp_path / "i"
    lp = tmp_path / "l"
    ip.write_bytes(
        b"\x00\x00\x08\x03" b"\x00\x00\x00\x02" b"\x00\x00\x00\x02" b"\x00\x00\x00\x02"
        b"\x00\xff\x33\x66" b"\x99\xcc\x00\xff"
    )
    lp.write_bytes(b"\x00\x00\x08\x01" b"\x00\x00\x00\x02" b"\x07\x01")
    ds = load_idx(ip, lp)
    assert len(ds) == 2 and ds.n_features == 4
    np.testing.assert_allclose(ds.features[0], [0.0, 1.0, 0.2, 0.4])
    np.testing.assert_array_equal(ds.labels, [7, 1])
    assert ds.features.min() >= 0.0 and ds.features.max() <= 1.0


def test_labels_with_images_magic_rejected(tmp_path):
    ip, lp = _write_idx(tmp_path, np.zeros((2, 2, 2)), [0, 1], lbl_magic=0x803)
    with pytest.raises(FormatError):
        load_idx(ip, lp)


def test_empty_file_rejected(tmp_path):
    ip, _ = _write_idx(tmp_path, np.zeros((2, 2, 2)), [0, 1])
    empty = tmp_path / "empty"
    empty.write_bytes(b"")
    with pytest.raises(FormatError):
        load_idx(ip, empty)


def test_truncated_images_rejected(tmp_path):
    ip, lp = _write_idx(tmp_path, np.zeros((2, 2, 2)), [0, 1])
    ip.write_bytes(ip.read_bytes()[:-1])
    with pytest.raises(FormatError):
        load_idx(ip, lp)


def test_count_mismatch_rejected(tmp_path):
    ip, lp = _write_idx(tmp_path, np.zeros((3, 2, 2)), [0, 1])
    with pytest.raises(FormatError):
        load_idx(ip, lp)

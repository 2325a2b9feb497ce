import gzip
import struct

import numpy as np
import pytest

from fedsim import data
from fedsim.data import (CaseSpec, ClientDataset, PartitionPlan, load_cifar10_binary, load_idx,
                         realize_round, synth_dataset)
from fedsim.labelstats import label_variance


def _idx_fixture():
    # Four 2x2 images written byte by byte, independent of the encoder under test.
    pixels = [0, 255, 128, 64,
              1, 2, 3, 4,
              255, 255, 0, 0,
              10, 20, 30, 40]
    images = struct.pack(">IIII", 0x00000803, 4, 2, 2) + bytes(pixels)
    labels = struct.pack(">II", 0x00000801, 4) + bytes([7, 2, 1, 0])
    return images, labels, pixels


def test_load_idx_fixture():
    images, labels, pixels = _idx_fixture()
    ds = load_idx(images, labels)
    assert len(ds) == 4
    assert ds.labels.tolist() == [7, 2, 1, 0]
    assert ds.feature_dim == 4
    np.testing.assert_allclose(ds.features.ravel(), np.array(pixels) / 255.0)


def test_load_idx_gzip_and_path(tmp_path):
    images, labels, _ = _idx_fixture()
    (tmp_path / "i.gz").write_bytes(gzip.compress(images))
    (tmp_path / "l").write_bytes(labels)
    ds = load_idx(tmp_path / "i.gz", tmp_path / "l")
    assert ds.labels.tolist() == [7, 2, 1, 0]


def test_load_idx_errors():
    images, labels, _ = _idx_fixture()
    with pytest.raises(data.TruncatedStreamError, match="truncated stream"):
        load_idx(b"", labels)
    with pytest.raises(data.TruncatedStreamError, match="truncated stream"):
        load_idx(images[:-1], labels)
    with pytest.raises(data.MagicMismatchError, match="magic mismatch"):
        load_idx(images, images)
    with pytest.raises(data.MagicMismatchError, match="magic mismatch"):
        load_idx(labels, labels)
    short_labels = struct.pack(">II", 0x00000801, 3) + bytes([7, 2, 1])
    with pytest.raises(data.CountMismatchError):
        load_idx(images, short_labels)


def test_idx_roundtrip():
    rng = np.random.default_rng(3)
    imgs = rng.integers(0, 256, size=(5, 3, 4), dtype=np.uint8)
    labs = rng.integers(0, 10, size=5)
    ds = load_idx(data.encode_idx_images(imgs), data.encode_idx_labels(labs))
    np.testing.assert_array_equal(np.rint(ds.features * 255).astype(np.uint8).reshape(imgs.shape), imgs)
    np.testing.assert_array_equal(ds.labels, labs)


def test_cifar_binary():
    record = bytes([5]) + bytes(range(256)) * 12
    ds = load_cifar10_binary(record)
    assert len(ds) == 1 and ds.labels.tolist() == [5]
    assert ds.feature_dim == 3072
    assert ds.features[0, 255] == 1.0 and ds.features[0, 256] == 0.0
    with pytest.raises(data.EmptyDatasetError, match="empty"):
        load_cifar10_binary(b"")
    with pytest.raises(data.RecordLengthError, match="record length"):
        load_cifar10_binary(bytes(3072))


def test_synth_dataset():
    ds = synth_dataset(10, 100, 16, 0.1, seed=1)
    assert len(ds) == 1000
    assert ds.class_counts().tolist() == [100] * 10
    again = synth_dataset(10, 100, 16, 0.1, seed=1)
    assert ds.features.tobytes() == again.features.tobytes()
    assert ds.labels.tobytes() == again.labels.tobytes()
    assert ds.features.min() >= 0.0 and ds.features.max() <= 1.0

    flat = synth_dataset(3, 5, 4, 0.0, seed=2)
    for k in range(3):
        rows = flat.features[flat.labels == k]
        assert np.all(rows == rows[0])

    with pytest.raises(ValueError):
        synth_dataset(1, 10, 4, 0.1, seed=0)
    with pytest.raises(ValueError):
        synth_dataset(3, 0, 4, 0.1, seed=0)


def test_csv_roundtrip(tmp_path):
    ds = synth_dataset(3, 4, 5, 0.2, seed=4)
    data.dataset_to_csv(ds, tmp_path / "d.csv")
    back = data.dataset_from_csv(tmp_path / "d.csv", num_classes=3)
    np.testing.assert_array_equal(back.features, ds.features)
    np.testing.assert_array_equal(back.labels, ds.labels)


@pytest.fixture(scope="module")
def pool():
    return synth_dataset(10, 60, 8, 0.2, seed=0)


def _plan(case, n=20, rounds=12, **kw):
    return PartitionPlan(CaseSpec(case, **kw), n, rounds, seed=7)


def test_case_1a(pool):
    shards = realize_round(_plan("1A", n=3), pool, 1)
    assert [len(s) for s in shards] == [290, 290, 290]
    assert all(label_variance(s.labels) == 0.0 for s in shards)
    assert [s.client_id for s in shards] == [0, 1, 2]


@pytest.mark.parametrize("case", ["1B", "2B", "3B"])
def test_b_cases_major_minor_counts(pool, case):
    for T in (1, 2, 5):
        for s in realize_round(_plan(case), pool, T):
            counts = np.bincount(s.labels, minlength=10)
            major = int(np.argmax(counts))
            assert counts[major] == 200
            assert counts.sum() - counts[major] == 90


def test_case_2a_shared_label_and_coverage(pool):
    plan = _plan("2A", n=5, rounds=10)
    seen = set()
    for T in range(1, 11):
        shards = realize_round(plan, pool, T)
        labels = {int(l) for s in shards for l in s.labels}
        assert len(labels) == 1
        seen |= labels
    assert seen == set(range(10))


def test_case_2b_shares_major(pool):
    shards = realize_round(_plan("2B"), pool, 3)
    majors = {int(np.argmax(np.bincount(s.labels, minlength=10))) for s in shards}
    assert len(majors) == 1


def test_case_3a_rerandomized(pool):
    plan = _plan("3A", n=40)
    r1 = realize_round(plan, pool, 1)
    r2 = realize_round(plan, pool, 2)
    assert all(label_variance(s.labels) == 0.0 for s in r1 + r2)
    assert [s.labels[0] for s in r1] != [s.labels[0] for s in r2]
    assert r1[0].round == 1 and r2[0].round == 2


def test_static_cases_ignore_round(pool):
    plan = _plan("1B")
    a = realize_round(plan, pool, 1)
    b = realize_round(plan, pool, 7)
    assert all(np.array_equal(x.indices, y.indices) for x, y in zip(a, b))
    assert a[0].round is None


def test_iid_sizes_and_balance(pool):
    plan = _plan("IID", n=50)
    for s in realize_round(plan, pool, 1):
        assert 30 <= len(s) <= 270
        counts = np.bincount(s.labels, minlength=10)
        assert counts.max() - counts.min() <= 1


def test_mixed_extremes(pool):
    biased = realize_round(_plan("MIXED", n=50, p_biased=1.0), pool, 1)
    assert all(label_variance(s.labels) == 0.0 for s in biased)
    iid = realize_round(_plan("MIXED", n=50, p_biased=0.0), pool, 1)
    for s in iid:
        counts = np.bincount(s.labels, minlength=10)
        assert counts.max() - counts.min() <= 1


def test_mixed_fraction(pool):
    shards = realize_round(PartitionPlan(CaseSpec("MIXED", p_biased=0.3), 2000, 1, seed=1), pool, 1)
    frac = np.mean([label_variance(s.labels) == 0.0 for s in shards])
    assert abs(frac - 0.3) < 0.04


def test_determinism(pool):
    for case in data.CASE_IDS:
        plan = _plan(case, p_biased=0.5)
        a = realize_round(plan, pool, 4)
        b = realize_round(plan, pool, 4)
        assert all(np.array_equal(x.indices, y.indices) for x, y in zip(a, b))


def test_round_bounds(pool):
    plan = _plan("1A", rounds=3)
    with pytest.raises(ValueError):
        realize_round(plan, pool, 0)
    with pytest.raises(ValueError):
        realize_round(plan, pool, 4)


def test_without_replacement_insufficient():
    small = synth_dataset(10, 20, 4, 0.1, seed=0)
    plan = PartitionPlan(CaseSpec("1A"), 3, 1, seed=0, with_replacement=False)
    with pytest.raises(data.InsufficientClassExamplesError, match="insufficient class examples"):
        realize_round(plan, small, 1)
    ok = PartitionPlan(CaseSpec("1A", per_client_total=5), 3, 1, seed=0, with_replacement=False)
    shards = realize_round(ok, small, 1)
    used = np.concatenate([s.indices for s in shards])
    assert len(np.unique(used)) == used.size


def test_case_spec_validation():
    with pytest.raises(ValueError):
        CaseSpec("4A")
    with pytest.raises(ValueError):
        CaseSpec("1B", major_count=100)
    with pytest.raises(ValueError):
        CaseSpec("MIXED", p_biased=1.5)


def test_client_dataset_views(pool):
    shard = ClientDataset(4, pool, np.array([0, 60, 61]), 2)
    assert len(shard) == 3
    assert shard.labels.tolist() == [0, 1, 1]
    np.testing.assert_array_equal(shard.features, pool.features[[0, 60, 61]])


def test_shards_to_csv(pool, tmp_path):
    shards = realize_round(_plan("1A", n=2, per_client_total=3), pool, 1)
    data.shards_to_csv(shards, tmp_path / "s.csv")
    rows = (tmp_path / "s.csv").read_text().splitlines()
    assert len(rows) == 7
    assert rows[0].startswith("client_id,round,label,f0,")
    assert rows[1].startswith("0,static,")


def test_stratified_split(pool):
    tr, te = data.stratified_split(pool, 100, seed=0)
    assert len(te) == 100 and len(tr) == 500
    assert te.class_counts().tolist() == [10] * 10

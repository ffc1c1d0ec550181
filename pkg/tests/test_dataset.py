import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crosscbr.dataset import (BundleDataset, DatasetError, community, generate_synthetic,
                              load_dataset, load_split, split, split_sizes, write_dataset,
                              write_split)


def _write(path, name, text):
    (path / name).write_text(text, encoding="utf-8")


def _minimal_dir(path, ui=""):
    _write(path, "size.txt", "2\t2\t5\n")
    _write(path, "user_bundle.txt", "0\t0\n1\t1\n")
    _write(path, "user_item.txt", ui)
    _write(path, "bundle_item.txt", "0\t0\n1\t3\n")


def test_load_empty_user_item(tmp_path):
    _minimal_dir(tmp_path)
    ds = load_dataset(str(tmp_path))
    assert ds.num_items == 5
    assert len(ds.user_item) == 0


def test_load_deduplicates(tmp_path):
    _minimal_dir(tmp_path)
    _write(tmp_path, "user_bundle.txt", "0\t0\n0\t0\n1\t1\n")
    ds = load_dataset(str(tmp_path))
    assert len(ds.user_bundle) == 2


def test_load_missing_file(tmp_path):
    _minimal_dir(tmp_path)
    (tmp_path / "bundle_item.txt").unlink()
    with pytest.raises(DatasetError, match="bundle_item.txt"):
        load_dataset(str(tmp_path))


def test_load_id_out_of_range(tmp_path):
    _minimal_dir(tmp_path)
    _write(tmp_path, "user_item.txt", "0\t5\n")
    with pytest.raises(DatasetError, match="out of range"):
        load_dataset(str(tmp_path))


def test_bundle_without_items_rejected():
    with pytest.raises(DatasetError, match="no items"):
        BundleDataset(1, 2, 2, [(0, 1)], [], [(0, 0)])


def test_round_trip(tmp_path):
    ds = generate_synthetic(20, 10, 40, 2, 0.2, seed=3)
    write_dataset(ds, str(tmp_path / "a"))
    again = load_dataset(str(tmp_path / "a"))
    assert again == ds
    write_dataset(again, str(tmp_path / "b"))
    for f in ("size.txt", "user_bundle.txt", "user_item.txt", "bundle_item.txt"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_split_round_trip(tmp_path):
    ds = generate_synthetic(20, 10, 40, 2, 0.2, seed=3)
    sp = split(ds, seed=5)
    write_split(sp, str(tmp_path))
    again = load_split(str(tmp_path))
    for part in ("train", "validation", "test"):
        assert np.array_equal(again.part(part), sp.part(part))


def test_split_ten_pairs():
    ds = BundleDataset(10, 1, 1, [(u, 0) for u in range(10)], [], [(0, 0)])
    sp = split(ds, (0.7, 0.1, 0.2), seed=1)
    assert (len(sp.train), len(sp.validation), len(sp.test)) == (7, 1, 2)
    again = split(ds, (0.7, 0.1, 0.2), seed=1)
    assert all(np.array_equal(sp.part(p), again.part(p)) for p in ("train", "validation", "test"))


def test_split_sizes_youshu_scale():
    # floor(51377 * 0.1) = 5137, floor(51377 * 0.2) = 10275, remainder to train
    assert split_sizes(51377, (0.7, 0.1, 0.2)) == (35965, 5137, 10275)


@pytest.mark.parametrize("ratios", [(0.8, 0.2, 0.0), (1.0, -0.1, 0.1), (0.5, 0.2, 0.2)])
def test_split_rejects_bad_ratios(ratios):
    ds = BundleDataset(2, 1, 1, [(0, 0), (1, 0)], [], [(0, 0)])
    with pytest.raises(ValueError):
        split(ds, ratios)


@settings(max_examples=40, deadline=None)
@given(n_users=st.integers(1, 12), n_bundles=st.integers(1, 6), seed=st.integers(0, 1000))
def test_split_is_partition(n_users, n_bundles, seed):
    rng = np.random.default_rng(seed)
    pairs = np.argwhere(rng.random((n_users, n_bundles)) < 0.5)
    ds = BundleDataset(n_users, n_bundles, 1, pairs, [], [(b, 0) for b in range(n_bundles)])
    sp = split(ds, seed=seed)
    parts = [set(map(tuple, sp.part(p))) for p in ("train", "validation", "test")]
    assert parts[0].isdisjoint(parts[1]) and parts[0].isdisjoint(parts[2])
    assert parts[1].isdisjoint(parts[2])
    assert set.union(*parts) == set(map(tuple, ds.user_bundle))


def test_synthetic_valid_and_deterministic():
    a = generate_synthetic(100, 50, 200, 5, 0.1, seed=7)
    b = generate_synthetic(100, 50, 200, 5, 0.1, seed=7)
    assert a == b
    a.validate()
    assert a.num_users == 100 and a.num_bundles == 50 and a.num_items == 200


@pytest.mark.parametrize("locality", [0.1, None])
def test_synthetic_noiseless_within_community(locality):
    ds = generate_synthetic(100, 50, 200, 5, 0.0, seed=7, locality=locality)
    ub = ds.user_bundle
    assert np.array_equal(community(ub[:, 0], 100, 5), community(ub[:, 1], 50, 5))


def test_synthetic_full_noise_rate():
    # every partner uniform over the catalogue -> P(same community) = 1/blocks
    ds = generate_synthetic(1000, 500, 1000, 5, 1.0, seed=11)
    ub = ds.user_bundle
    same = np.mean(community(ub[:, 0], 1000, 5) == community(ub[:, 1], 500, 5))
    assert abs(same - 0.2) < 0.02


def test_synthetic_rejects_bad_args():
    with pytest.raises(ValueError):
        generate_synthetic(10, 10, 10, 3, 0.1)
    with pytest.raises(ValueError):
        generate_synthetic(10, 10, 10, 5, 1.5)


@pytest.mark.parametrize("name", ["Youshu", "NetEase", "iFashion"])
def test_public_dataset_statistics(name):
    # point CROSSCBR_DATA_ROOT at a directory holding <name>/ with the released files
    import os

    from crosscbr.dataset import PUBLIC_STATS

    root = os.environ.get("CROSSCBR_DATA_ROOT")
    path = os.path.join(root, name) if root else ""
    if not root or not os.path.isdir(path):
        pytest.skip(f"{name} data not available")
    stats = load_dataset(path, name).stats()
    keys = ("users", "bundles", "items", "user_item", "user_bundle")
    assert tuple(stats[k] for k in keys) == tuple(PUBLIC_STATS[name])

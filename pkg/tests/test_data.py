import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from anfr.data import (Dataset, PartitionConfig, class_templates, client_palettes, gen_colorshift, largest_remainder,
                       partition, partition_dirichlet, partition_iid, partition_k_classes, partition_quantity_skew,
                       partition_stats, read_shard_index, shape_oracle, standardize_inputs, train_test_split,
                       validate_shards, write_shard_index)
from anfr.errors import ConfigError, PartitionError


def audit(shards, n):
    """Brute-force check: every index owned exactly once, no empty shard."""
    owners = {}
    for s in shards:
        assert s.size > 0
        for i in s.indices.tolist():
            assert i not in owners, f"index {i} owned twice"
            owners[i] = s.client_id
    assert sorted(owners) == list(range(n))


def plug_in_mi(a, b):
    joint = np.zeros((a.max() + 1, b.max() + 1))
    np.add.at(joint, (a, b), 1)
    joint /= joint.sum()
    pa, pb = joint.sum(axis=1, keepdims=True), joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    return float((joint[nz] * np.log(joint[nz] / (pa @ pb)[nz])).sum())


# -- colorshift generator -------------------------------------------------------------------

def _background_table(seed, per_client, image_size=16):
    ds, _ = gen_colorshift(4, 10, per_client, 0.0, image_size=image_size, seed=seed)
    table = np.zeros((4, 16))
    np.add.at(table, (ds.origin, ds.background), 1)
    return table


def test_no_shift_background_histograms_match():
    # one contingency table pooled over three seeds; a single seed rejects 1% of the time by chance
    table = sum(_background_table(seed, 400) for seed in (0, 1, 2))
    assert stats.chi2_contingency(table).pvalue > 0.01


def test_no_shift_chi2_pvalues_are_calibrated():
    pvals = [stats.chi2_contingency(_background_table(seed, 100, 8)).pvalue for seed in range(100)]
    assert stats.kstest(pvals, "uniform").pvalue > 0.01


def test_full_shift_palettes_disjoint():
    ds, shards = gen_colorshift(2, 10, 200, 1.0, seed=3)
    pal = client_palettes(2).reshape(-1, 3)
    used = [set(map(tuple, pal[ds.background[s.indices]])) for s in shards]
    assert used[0] and used[1] and not (used[0] & used[1])
    assert np.all(ds.background[ds.origin == 0] < 4) and np.all(ds.background[ds.origin == 1] >= 4)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_shape_decides_class_background_does_not(seed):
    ds, _ = gen_colorshift(4, 10, 150, 0.9, seed=seed)
    size = 16 // 2 + 16 // 4
    pred = shape_oracle(ds.images, class_templates(10, size, seed))
    assert np.mean(pred == ds.labels) == 1.0
    # background-only oracle: majority label per background, fitted on one half, scored on the other
    half = len(ds) // 2
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(ds))
    fit, held = perm[:half], perm[half:]
    table = np.zeros((16, 10))
    np.add.at(table, (ds.background[fit], ds.labels[fit]), 1)
    guess = table.argmax(axis=1)[ds.background[held]]
    assert np.mean(guess == ds.labels[held]) <= 0.1 + 0.1


def test_mutual_information_increases_with_shift():
    mis = []
    for s in (0.0, 0.25, 0.5, 0.75, 1.0):
        ds, _ = gen_colorshift(4, 10, 250, s, seed=5)
        mis.append(plug_in_mi(ds.origin, ds.background))
    assert all(b > a for a, b in zip(mis, mis[1:])), mis


def test_generator_determinism_and_range():
    a, _ = gen_colorshift(3, 5, 20, 0.5, seed=9)
    b, _ = gen_colorshift(3, 5, 20, 0.5, seed=9)
    assert a.images.tobytes() == b.images.tobytes()
    assert a.images.min() >= 0 and a.images.max() <= 1
    assert np.all(np.bincount(a.labels[a.origin == 0], minlength=5) == 4)
    z = standardize_inputs(a)
    np.testing.assert_allclose(z.images, (a.images - 0.5) / 0.25)


def test_generator_errors():
    with pytest.raises(ConfigError):
        gen_colorshift(2, 10, 20, 1.5)
    with pytest.raises(ConfigError):
        gen_colorshift(0, 10, 20, 0.5)
    with pytest.raises(ConfigError):
        Dataset(np.zeros((2, 1, 2, 2)), np.array([0, 3]), 3)


# -- Dirichlet -------------------------------------------------------------------------------

def test_dirichlet_concentrated_is_near_uniform():
    labels = np.repeat(np.arange(5), 200)
    shards = partition_dirichlet(labels, 4, 1e6, seed=0)
    glob = np.bincount(labels) / len(labels)
    for s in shards:
        assert np.max(np.abs(s.label_hist / s.size - glob)) < 0.05


def test_dirichlet_single_client():
    labels = np.arange(30) % 3
    (s,) = partition_dirichlet(labels, 1, 0.5)
    assert np.array_equal(s.indices, np.arange(30))


@pytest.mark.parametrize("seed", range(5))
def test_dirichlet_proportions_follow_dirichlet(seed):
    labels = np.repeat(np.arange(9), 100)
    shards = partition_dirichlet(labels, 3, 0.5, seed=seed)
    props = np.stack([s.label_hist for s in shards]) / 100.0   # [client, class]
    ref = np.random.default_rng(1000 + seed).dirichlet(np.full(3, 0.5), 10_000)
    assert stats.ks_2samp(props.reshape(-1), ref.reshape(-1)).pvalue > 0.01


def test_dirichlet_weighted_average_equals_global():
    labels = np.random.default_rng(0).integers(0, 6, 600)
    shards = partition_dirichlet(labels, 5, 0.5, seed=1)
    assert np.array_equal(sum(s.label_hist for s in shards), np.bincount(labels, minlength=6))


def test_dirichlet_unsatisfiable():
    with pytest.raises(PartitionError):
        partition_dirichlet(np.zeros(3, dtype=int), 5, 0.5)
    with pytest.raises(PartitionError):
        # one sample per client and a single class: some client always ends up empty at tiny alpha
        partition_dirichlet(np.zeros(4, dtype=int), 4, 1e-3, seed=0)


# -- k classes -------------------------------------------------------------------------------

def test_k_equal_class_count_sees_everything():
    labels = np.repeat(np.arange(4), 20)
    for s in partition_k_classes(labels, 3, 4, seed=0):
        assert np.all(s.label_hist > 0)


def test_k_two_of_ten_over_five_clients():
    labels = np.repeat(np.arange(10), 30)
    shards = partition_k_classes(labels, 5, 2, seed=4)
    owners = np.zeros(10, dtype=int)
    for s in shards:
        assert np.count_nonzero(s.label_hist) == 2
        owners += s.label_hist > 0
    assert np.all(owners == 1)


def test_k_four_of_ten_over_eight_clients_audit():
    labels = np.repeat(np.arange(10), 40)
    shards = partition_k_classes(labels, 8, 4, seed=2)
    audit(shards, len(labels))
    assert all(np.count_nonzero(s.label_hist) == 4 for s in shards)


def test_k_infeasible():
    labels = np.repeat(np.arange(5), 10)
    with pytest.raises(PartitionError):
        partition_k_classes(labels, 3, 6)
    with pytest.raises(PartitionError):
        partition_k_classes(labels, 2, 2)


# -- quantity skew -----------------------------------------------------------------------------

def test_quantity_skew_zero_exponent_equal():
    labels = np.arange(103) % 7
    sizes = [s.size for s in partition_quantity_skew(labels, 6, 0.0)]
    assert max(sizes) - min(sizes) <= 1 and sum(sizes) == 103


def test_quantity_skew_heavy_profile():
    labels = np.arange(2000) % 8
    shards = partition_quantity_skew(labels, 6, 1.6, seed=0)
    frac = np.array([s.size for s in shards]) / 2000
    assert frac.max() > 0.5
    assert 0.02 <= frac.min() <= 0.04
    # labels spread uniformly inside each shard
    for s in shards:
        assert np.max(np.abs(s.label_hist - s.size / 8)) <= 2.0


def test_quantity_skew_errors():
    with pytest.raises(PartitionError):
        partition_quantity_skew(np.arange(10) % 2, 1, 1.0)
    with pytest.raises(PartitionError):
        partition_quantity_skew(np.arange(10) % 2, 6, 8.0)


def test_largest_remainder_conserves():
    assert largest_remainder(10, np.array([1, 1, 1])).tolist() == [4, 3, 3]
    assert largest_remainder(7, np.array([0.5, 0.25, 0.25])).sum() == 7


# -- stats and audits --------------------------------------------------------------------------

def test_stats_iid_and_disjoint():
    labels = np.arange(8000) % 10
    rep = partition_stats(partition_iid(labels, 4, seed=0), labels)
    assert rep.tv_distance.max() < 0.05
    np.testing.assert_allclose(rep.size_fractions, 0.25)
    labels2 = np.repeat(np.arange(10), 10)
    rep2 = partition_stats(partition_k_classes(labels2, 5, 2, seed=0), labels2)
    off = rep2.tv_distance[~np.eye(5, dtype=bool)]
    np.testing.assert_allclose(off, 1.0)


def test_stats_tv_recomputed_from_raw():
    labels = np.random.default_rng(3).integers(0, 5, 500)
    shards = partition_dirichlet(labels, 4, 0.5, seed=3)
    rep = partition_stats(shards, labels)
    for i, a in enumerate(shards):
        for j, b in enumerate(shards):
            pa = np.array([np.sum(labels[a.indices] == c) for c in range(5)]) / a.size
            pb = np.array([np.sum(labels[b.indices] == c) for c in range(5)]) / b.size
            assert abs(rep.tv_distance[i, j] - 0.5 * np.abs(pa - pb).sum()) < 1e-12


@settings(max_examples=100, deadline=None)
@given(scheme=st.sampled_from(["dirichlet", "k_classes", "quantity_skew", "iid"]),
       clients=st.integers(2, 8), classes=st.integers(2, 10), per_class=st.integers(8, 30),
       alpha=st.floats(0.1, 5.0), exponent=st.floats(0.0, 1.5), seed=st.integers(0, 10_000))
def test_partitioners_disjoint_exhaustive_deterministic(scheme, clients, classes, per_class, alpha, exponent, seed):
    labels = np.repeat(np.arange(classes), per_class)
    ds = Dataset(np.zeros((len(labels), 1, 1, 1)), labels, classes)
    k = max(1, -(-classes // clients))
    cfg = PartitionConfig(scheme, alpha=alpha, k=k, skew_exponent=exponent, seed=seed)
    try:
        shards = partition(ds, clients, cfg)
    except PartitionError:
        return
    audit(shards, len(labels))
    validate_shards(shards, len(labels))
    again = partition(ds, clients, cfg)
    assert all(np.array_equal(a.indices, b.indices) for a, b in zip(shards, again))


def test_feature_shift_partition_is_natural_split():
    ds, natural = gen_colorshift(3, 4, 12, 0.5, seed=0)
    shards = partition(ds, 3, PartitionConfig("feature_shift"))
    assert all(np.array_equal(a.indices, b.indices) for a, b in zip(shards, natural))
    with pytest.raises(PartitionError):
        partition(ds, 4, PartitionConfig("feature_shift"))


def test_validate_shards_catches_problems():
    labels = np.arange(10) % 2
    shards = partition_iid(labels, 2)
    validate_shards(shards, 10)
    with pytest.raises(PartitionError):
        validate_shards(shards, 11)
    with pytest.raises(PartitionError):
        validate_shards(shards + shards[:1], 10)


def test_shard_index_roundtrip(tmp_path):
    labels = np.arange(50) % 5
    shards = partition_dirichlet(labels, 3, 0.5, seed=2)
    write_shard_index(shards, tmp_path / "idx.txt")
    back = read_shard_index(tmp_path / "idx.txt")
    assert sorted(back) == [0, 1, 2]
    for s in shards:
        assert np.array_equal(back[s.client_id], s.indices)
        assert np.all(np.diff(back[s.client_id]) > 0)
    (tmp_path / "bad.txt").write_text("0: 1 2\nx: 3\n")
    with pytest.raises(ConfigError) as exc:
        read_shard_index(tmp_path / "bad.txt")
    assert exc.value.line == 2


def test_train_test_split_stratified():
    labels = np.repeat(np.arange(4), 30)
    (shard,) = partition_iid(labels, 1)
    train, test = train_test_split(shard, 1 / 3, 0, labels)
    assert not set(train.indices) & set(test.indices)
    assert train.size + test.size == 120
    assert np.all(test.label_hist == 10)

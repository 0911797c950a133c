import numpy as np
import pytest

from fedbac.data import Dataset, PartitionConfig, partition_two_level, sample_dirichlet, synth_mixture
from fedbac.errors import InputError
from fedbac.rng import RngStream


def _pool(C=10, per_class=60, seed=0):
    return synth_mixture(C, 4, per_class, 2.0, RngStream(seed, "pool"))


def test_dirichlet_two_categories_normalized():
    for s in range(20):
        d = sample_dirichlet(0.3, 2, RngStream(s))
        assert d.shape == (2,) and abs(d.sum() - 1.0) < 1e-12


def test_dirichlet_concentration_monte_carlo():
    rng = RngStream(1, "dir")
    flat = np.mean([sample_dirichlet(100.0, 10, rng).max() for _ in range(1000)])
    skew = np.mean([sample_dirichlet(0.1, 10, rng).max() for _ in range(1000)])
    assert flat < 0.15
    assert skew > 0.5


def test_dirichlet_unit_alpha_mean():
    rng = RngStream(2, "dir")
    draws = np.stack([sample_dirichlet(1.0, 5, rng) for _ in range(10_000)])
    assert np.all(np.abs(draws.mean(axis=0) - 0.2) < 0.01)


def test_dirichlet_rejects_bad_alpha():
    with pytest.raises(InputError):
        sample_dirichlet(0.0, 3, RngStream(0))


def _check_conservation(pool, part):
    idx = np.concatenate([ix for row in part.client_index for ix in row] + part.test_index)
    assert idx.size == len(pool)
    assert np.array_equal(np.sort(idx), np.arange(len(pool)))
    # per-class totals are preserved exactly
    per_class = sum(d.class_counts(part.num_classes) for row in part.clients for d in row)
    per_class = per_class + sum(t.class_counts(part.num_classes) for t in part.tests)
    assert np.array_equal(per_class, pool.class_counts(part.num_classes))
    for row in part.clients:
        assert all(len(d) > 0 for d in row)
    assert all(len(t) > 0 for t in part.tests)


def test_partition_conservation_on_50_seeds():
    pool = _pool()
    for s in range(50):
        cfg = PartitionConfig(num_servers=4, clients_per_server=5, alpha_server=0.1, alpha_client=0.5)
        _check_conservation(pool, partition_two_level(pool, cfg, RngStream(s)))


def test_partition_guard_with_tiny_alpha():
    pool = _pool(C=3, per_class=20)
    cfg = PartitionConfig(num_servers=5, clients_per_server=4, alpha_server=0.01, alpha_client=0.01)
    for s in range(20):
        _check_conservation(pool, partition_two_level(pool, cfg, RngStream(s)))


def test_partition_large_alpha_matches_pool_distribution():
    pool = _pool(C=5, per_class=2000)
    cfg = PartitionConfig(num_servers=2, clients_per_server=2, alpha_server=1e6, alpha_client=1.0)
    for s in range(20):
        part = partition_two_level(pool, cfg, RngStream(s))
        for m in range(2):
            counts = part.server_train(m).class_counts(5) + part.tests[m].class_counts(5)
            assert np.all(np.abs(counts / counts.sum() - 0.2) < 0.02)


def test_partition_single_client_recovers_pool():
    pool = _pool(C=3, per_class=10)
    part = partition_two_level(pool, PartitionConfig(1, 1), RngStream(4))
    joined = np.sort(np.concatenate([part.client_index[0][0], part.test_index[0]]))
    assert np.array_equal(joined, np.arange(len(pool)))
    merged = Dataset.concat([part.clients[0][0], part.tests[0]])
    assert np.isclose(merged.X.sum(), pool.X.sum(), rtol=0, atol=1e-9)


def test_severe_setting_is_skewed():
    # 10 servers x 10 clients, the reference deployment topology
    pool = _pool()
    cfg = PartitionConfig(num_servers=10, clients_per_server=10, alpha_server=0.1, alpha_client=0.5)
    hits = 0
    for s in range(20):
        part = partition_two_level(pool, cfg, RngStream(s))
        shares = [
            (c := part.server_train(m).class_counts(10)).max() / c.sum() for m in range(10)
        ]
        hits += max(shares) > 0.5
    assert hits == 20


def test_partition_is_deterministic():
    pool = _pool()
    cfg = PartitionConfig()
    a = partition_two_level(pool, cfg, RngStream(7))
    b = partition_two_level(pool, cfg, RngStream(7))
    for ra, rb in zip(a.client_index, b.client_index):
        for x, y in zip(ra, rb):
            assert np.array_equal(x, y)
    assert a.manifest() == b.manifest()


def test_test_split_is_stratified():
    pool = _pool(C=4, per_class=100)
    part = partition_two_level(pool, PartitionConfig(2, 3, alpha_server=1.0), RngStream(3))
    for m in range(2):
        train = part.server_train(m).class_counts(4)
        test = part.tests[m].class_counts(4)
        alloc = train + test
        assert np.all(test == np.floor(0.2 * alloc + 0.5))


def test_partition_rejects_small_pool():
    pool = _pool(C=2, per_class=3)
    with pytest.raises(InputError):
        partition_two_level(pool, PartitionConfig(4, 5), RngStream(0))


def test_synth_mixture_sizes_and_separation():
    d = synth_mixture(4, 6, 50, 10.0, RngStream(0))
    assert len(d) == 200 and np.array_equal(d.class_counts(4), [50] * 4)
    # same stream -> same class means; hold out the second half
    big = synth_mixture(4, 6, 500, 10.0, RngStream(0))
    fit = big.subset(np.arange(1000))
    test = big.subset(np.arange(1000, 2000))
    centroids = np.stack([fit.X[fit.y == c].mean(axis=0) for c in range(4)])
    pred = np.argmin(((test.X[:, None, :] - centroids[None]) ** 2).sum(-1), axis=1)
    assert np.mean(pred == test.y) > 0.99


def test_synth_mixture_zero_separation_is_chance():
    train = synth_mixture(4, 6, 200, 0.0, RngStream(1))
    test = synth_mixture(4, 6, 2500, 0.0, RngStream(2))
    centroids = np.stack([train.X[train.y == c].mean(axis=0) for c in range(4)])
    pred = np.argmin(((test.X[:, None, :] - centroids[None]) ** 2).sum(-1), axis=1)
    assert abs(np.mean(pred == test.y) - 0.25) < 0.03

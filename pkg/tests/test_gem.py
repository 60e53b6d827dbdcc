import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gemmed.dataset import LabeledDataset, class_index
from gemmed.gem import (GemConfig, bipartite_partition, compute_gem_stats,
                        gamma_hat, gem_me_set, knn_distance_sum,
                        local_entropy, loo_scores, loo_threshold)


def test_knn_distance_sum_frozen():
    refs = np.array([[1.0, 0.0], [0.0, 2.0], [3.0, 0.0]])
    # distances from the origin are 1, 2, 3; the two smallest sum to 3
    assert knn_distance_sum([0.0, 0.0], refs, k=2) == pytest.approx(3.0)
    assert knn_distance_sum([0.0, 0.0], refs, k=1) == pytest.approx(1.0)


def test_knn_distance_sum_errors():
    refs = np.array([[1.0], [2.0]])
    with pytest.raises(ValueError, match="k must be"):
        knn_distance_sum([0.0], refs, k=0)
    with pytest.raises(ValueError, match="reference points"):
        knn_distance_sum([0.0], refs, k=3)


def test_knn_distance_sum_brute_force():
    rng = np.random.default_rng(7)
    for _ in range(20):
        refs = rng.normal(size=(9, 3))
        x = rng.normal(size=3)
        k = int(rng.integers(1, 9))
        expected = sorted(math.dist(x, r) for r in refs)
        assert knn_distance_sum(x, refs, k) == pytest.approx(sum(expected[:k]))


def test_local_entropy_frozen_values():
    # dim 1: unit ball volume 2, so h = -log((k-1)/(m*2)) at unit distance sum
    assert local_entropy(1.0, k=2, m_count=4, dim=1) == pytest.approx(math.log(8.0))
    # dim 2: unit ball volume pi
    assert local_entropy(2.0, k=3, m_count=5, dim=2) == pytest.approx(
        math.log(10.0 * math.pi))


def test_local_entropy_edge_cases():
    assert local_entropy(0.0, k=2, m_count=3, dim=2) == float("-inf")
    with pytest.raises(ValueError):
        local_entropy(1.0, k=1, m_count=3, dim=2)
    with pytest.raises(ValueError):
        local_entropy(-0.5, k=2, m_count=3, dim=2)
    with pytest.raises(ValueError):
        local_entropy(1.0, k=2, m_count=0, dim=2)


def test_gem_me_set_tie_breaks_to_lower_index():
    keep = gem_me_set(np.array([1.0, 1.0, 0.5]), 2)
    assert list(keep) == [2, 0]


def test_gem_me_set_bounds():
    with pytest.raises(ValueError):
        gem_me_set(np.array([1.0, 2.0]), 0)
    with pytest.raises(ValueError):
        gem_me_set(np.array([1.0, 2.0]), 3)


def test_gem_me_set_matches_subset_enumeration():
    """The k lowest-value indices must realize the minimal subset sum."""
    rng = np.random.default_rng(11)
    for _ in range(50):
        n = int(rng.integers(2, 11))
        d = np.round(rng.uniform(0, 4, size=n), 2)  # rounding forces ties
        k = int(rng.integers(1, n + 1))
        keep = gem_me_set(d, k)
        assert len(keep) == k and len(set(keep.tolist())) == k
        best = min(sum(d[list(c)]) for c in itertools.combinations(range(n), k))
        assert d[keep].sum() == pytest.approx(best, abs=1e-12)


def test_gamma_hat_frozen():
    d = np.array([0.5, 0.2, 0.9, 0.4])
    assert gamma_hat(d, k_keep=2, epsilon=1e-3, n_total=2) == pytest.approx(0.3005)
    with pytest.raises(ValueError):
        gamma_hat(d, 2, epsilon=0.0, n_total=2)
    with pytest.raises(ValueError):
        gamma_hat(d, 2, epsilon=1e-3, n_total=0)


def _toy_dataset(n_per_class=10, seed=0):
    rng = np.random.default_rng(seed)
    x = np.vstack([rng.normal(loc=-2.0, size=(n_per_class, 2)),
                   rng.normal(loc=2.0, size=(n_per_class, 2))])
    y = np.concatenate([np.full(n_per_class, -1), np.full(n_per_class, 1)])
    return LabeledDataset(x, y)


def test_bipartite_partition_properties():
    ds = _toy_dataset()
    ev, ref = bipartite_partition(ds, -1, ratio=0.3, seed=5)
    again_ev, again_ref = bipartite_partition(ds, -1, ratio=0.3, seed=5)
    assert np.array_equal(ev, again_ev) and np.array_equal(ref, again_ref)
    assert len(ref) == 3  # floor(0.3 * 10)
    assert set(ev) | set(ref) == set(ds.class_indices(-1))
    assert set(ev) & set(ref) == set()
    other_ev, _ = bipartite_partition(ds, -1, ratio=0.3, seed=6)
    assert not np.array_equal(ev, other_ev)  # the draw really is seeded


def test_bipartite_partition_small_class():
    ds = LabeledDataset(np.array([[0.0], [1.0], [2.0]]), np.array([-1, 1, 1]))
    with pytest.raises(ValueError, match="at least 2"):
        bipartite_partition(ds, -1, ratio=0.5, seed=0)
    ev, ref = bipartite_partition(ds, 1, ratio=0.9, seed=0)
    assert len(ref) == 1 and len(ev) == 1  # never swallows the whole class


def test_loo_scores_and_threshold_frozen():
    pts = np.array([[0.0], [1.0], [3.0], [7.0]])
    scores = loo_scores(pts, k=1)
    assert scores.tolist() == [1.0, 1.0, 2.0, 4.0]
    # 0.95 quantile of [1, 1, 2, 4] under linear interpolation
    assert loo_threshold(pts, k=1, alpha=0.05) == pytest.approx(3.7)


def test_loo_threshold_errors():
    pts = np.array([[0.0], [1.0]])
    with pytest.raises(ValueError, match="points"):
        loo_threshold(pts, k=2, alpha=0.05)
    with pytest.raises(ValueError, match="alpha"):
        loo_threshold(np.zeros((5, 1)) + np.arange(5)[:, None], k=1, alpha=0.0)


def test_compute_gem_stats_against_direct_recomputation():
    ds = _toy_dataset(n_per_class=12, seed=3)
    config = GemConfig(k=2, partition_ratio=0.3, target_coverage=0.75,
                       epsilon_gamma=1e-3, seed=9)
    stats = compute_gem_stats(ds, config)

    assert np.array_equal(stats.d_tilde, stats.d_raw / ds.n)
    assert stats.k == 2 and stats.target_coverage == 0.75

    for label in (-1, 1):
        slot = class_index(label)
        ev, ref = bipartite_partition(ds, label, 0.3, seed=9)
        assert np.array_equal(stats.eval_part[slot], ev)
        assert np.array_equal(stats.ref_part[slot], ref)
        # recompute the statistics sample by sample
        for i in ev:
            dists = sorted(math.dist(ds.x[i], ds.x[j]) for j in ref)
            assert stats.d_raw[i] == pytest.approx(sum(dists[:2]))
        for i in ref:
            dists = sorted(math.dist(ds.x[i], ds.x[j]) for j in ref if j != i)
            assert stats.d_raw[i] == pytest.approx(sum(dists[:2]))

        cls = ds.class_indices(label)
        kz = int(round(0.75 * cls.size))
        assert stats.k_set[slot] == kz
        lowest = np.sort(stats.d_raw[cls])[:kz]
        assert stats.gamma_hat[slot] == pytest.approx((lowest.sum() + 1e-3) / ds.n)
        assert stats.beta_hat[slot] == pytest.approx(0.75 * cls.size / ds.n)

    assert np.all(np.isfinite(stats.h))  # k >= 2 so the diagnostic exists


def test_compute_gem_stats_needs_reference_headroom():
    ds = _toy_dataset(n_per_class=8)
    with pytest.raises(ValueError, match="reference part"):
        compute_gem_stats(ds, GemConfig(k=5, partition_ratio=0.3))


def test_gem_config_validation():
    with pytest.raises(ValueError):
        GemConfig(k=0)
    with pytest.raises(ValueError):
        GemConfig(partition_ratio=1.0)
    with pytest.raises(ValueError):
        GemConfig(target_coverage=0.0)
    with pytest.raises(ValueError):
        GemConfig(epsilon_gamma=0.0)
    with pytest.raises(ValueError):
        GemConfig(alpha=1.0)
    with pytest.raises(ValueError):
        GemConfig(intrinsic_dim=0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6))
def test_loo_threshold_caps_false_alarm_on_itself(seed, k):
    """At level alpha, at most an alpha fraction of the calibration
    points score above their own threshold."""
    pts = np.random.default_rng(seed).normal(size=(40, 2))
    theta = loo_threshold(pts, k=k, alpha=0.1)
    frac_above = np.mean(loo_scores(pts, k=k) > theta)
    assert frac_above <= 0.1 + 1e-12

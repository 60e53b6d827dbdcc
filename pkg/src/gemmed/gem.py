"""Bipartite k-NN anomaly statistics.

Each class is split into an evaluation part and a reference part. A
sample's anomaly statistic d_n is the sum of its k smallest Euclidean
distances into the same-class reference part (reference members score
against the reference part minus themselves). Low d_n means the sample
sits in a high-density region of its class.

Per-class coverage targets turn these statistics into constraint
levels: keeping the K_z lowest-d_n samples of class z, where
K_z = round(coverage * |class z|), gives the minimal total statistic
L_z; gamma_z = (L_z + eps) / n is the budget the trainer holds the
eta-weighted statistic sum to, and beta_z = coverage * |class z| / n
is the matching floor on the eta-weighted sample fraction. All
quantities fed to the trainer are expressed in 1/n units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .dataset import CLASSES, LabeledDataset, class_index


@dataclass(frozen=True)
class GemConfig:
    """Knobs for the bipartite k-NN statistics and the detector.

    Attributes
    ----------
    k : int
        Neighbor count for distance sums (detector and statistics).
    partition_ratio : float
        Fraction of each class assigned to the reference part.
    target_coverage : float
        Expected nominal fraction per class; sets K_z, gamma_z, beta_z.
        Use 1 - (expected corruption rate).
    epsilon_gamma : float
        Slack added to the minimal statistic sum before normalization,
        so the all-nominal configuration is strictly feasible.
    intrinsic_dim : int or None
        Dimension used by the entropy diagnostic; None means ambient.
    alpha : float
        False-alarm level for the leave-one-out detection threshold.
    seed : int
        Seed for the per-class partition draws.
    """

    k: int = 5
    partition_ratio: float = 0.3
    target_coverage: float = 0.8
    epsilon_gamma: float = 1e-3
    intrinsic_dim: int | None = None
    alpha: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if not 0 < self.partition_ratio < 1:
            raise ValueError("partition_ratio must lie in (0, 1)")
        if not 0 < self.target_coverage <= 1:
            raise ValueError("target_coverage must lie in (0, 1]")
        if self.epsilon_gamma <= 0:
            raise ValueError("epsilon_gamma must be positive")
        if self.intrinsic_dim is not None and self.intrinsic_dim < 1:
            raise ValueError("intrinsic_dim must be positive")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")


@dataclass(frozen=True)
class GemStats:
    """Per-sample statistics plus per-class constraint levels.

    d_raw holds plain distance sums, d_tilde the same in 1/n units,
    h the local entropy diagnostic. gamma_hat, beta_hat and k_set are
    arrays indexed by class slot (0 for label -1, 1 for label +1), as
    are the partition index tuples.
    """

    d_raw: np.ndarray
    d_tilde: np.ndarray
    h: np.ndarray
    gamma_hat: np.ndarray
    beta_hat: np.ndarray
    k_set: np.ndarray
    eval_part: tuple
    ref_part: tuple
    k: int
    target_coverage: float


def bipartite_partition(dataset: LabeledDataset, label: int, ratio: float,
                        seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Split one class into (evaluation part, reference part).

    The reference part gets floor(ratio * class size) members, at least
    one; the draw is uniform without replacement and deterministic in
    (seed, label). Classes with fewer than two samples cannot be split.
    """
    idx = dataset.class_indices(label)
    size = idx.size
    if size < 2:
        raise ValueError(f"class {label} has {size} sample(s); need at least 2")
    m = max(1, int(math.floor(ratio * size)))
    if m >= size:
        m = size - 1
    rng = np.random.default_rng([seed, class_index(label)])
    perm = rng.permutation(size)
    ref = np.sort(idx[perm[:m]])
    ev = np.sort(idx[perm[m:]])
    return ev, ref


def knn_distance_sum(x, refs: np.ndarray, k: int) -> float:
    """Sum of the k smallest Euclidean distances from x to the rows of refs."""
    refs = np.atleast_2d(np.asarray(refs, dtype=float))
    x = np.asarray(x, dtype=float).ravel()
    if k < 1:
        raise ValueError("k must be at least 1")
    if refs.shape[0] < k:
        raise ValueError(f"need at least k={k} reference points, got {refs.shape[0]}")
    d = np.linalg.norm(refs - x[None, :], axis=1)
    return float(np.sort(d)[:k].sum())


def local_entropy(dk_sum: float, k: int, m_count: int, dim: int) -> float:
    """Local entropy diagnostic: dim*log(dk_sum) - log((k-1)/(m_count*c_d)).

    c_d is the volume of the unit ball in `dim` dimensions. A zero
    distance sum yields -inf (degenerate duplicate point).
    """
    if k < 2:
        raise ValueError("local entropy needs k >= 2")
    if m_count < 1 or dim < 1:
        raise ValueError("m_count and dim must be positive")
    if dk_sum < 0:
        raise ValueError("distance sum must be nonnegative")
    if dk_sum == 0:
        return float("-inf")
    c_d = math.pi ** (dim / 2.0) / math.gamma(dim / 2.0 + 1.0)
    return dim * math.log(dk_sum) - math.log((k - 1) / (m_count * c_d))


def gem_me_set(d_values: np.ndarray, k_keep: int) -> np.ndarray:
    """Indices of the k_keep smallest values; ties go to the lower index."""
    d_values = np.asarray(d_values, dtype=float)
    if not 0 < k_keep <= d_values.size:
        raise ValueError(f"k_keep must lie in [1, {d_values.size}]")
    order = np.argsort(d_values, kind="stable")
    return order[:k_keep]


def gamma_hat(d_values: np.ndarray, k_keep: int, epsilon: float, n_total: int) -> float:
    """(sum of the k_keep smallest values + epsilon) / n_total."""
    d_values = np.asarray(d_values, dtype=float)
    if n_total < 1:
        raise ValueError("n_total must be positive")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    keep = gem_me_set(d_values, k_keep)
    return float((d_values[keep].sum() + epsilon) / n_total)


def loo_threshold(points: np.ndarray, k: int, alpha: float) -> float:
    """(1 - alpha) quantile of leave-one-out k-NN distance sums.

    Each point is scored against the remaining points; the quantile is
    linearly interpolated. Needs at least k + 1 points.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    m = points.shape[0]
    if m < k + 1:
        raise ValueError(f"need at least k+1={k + 1} points, got {m}")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    d = cdist(points, points)
    np.fill_diagonal(d, np.inf)
    part = np.partition(d, k - 1, axis=1)[:, :k]
    scores = part.sum(axis=1)
    return float(np.quantile(scores, 1.0 - alpha, method="linear"))


def loo_scores(points: np.ndarray, k: int) -> np.ndarray:
    """Leave-one-out k-NN distance sums for each point."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[0] < k + 1:
        raise ValueError(f"need at least k+1={k + 1} points")
    d = cdist(points, points)
    np.fill_diagonal(d, np.inf)
    return np.partition(d, k - 1, axis=1)[:, :k].sum(axis=1)


def compute_gem_stats(dataset: LabeledDataset, config: GemConfig) -> GemStats:
    """Partition each class, score every sample, derive constraint levels.

    Evaluation-part members score against the full reference part;
    reference members score against the reference part minus
    themselves, so every training sample carries a statistic.
    """
    n = dataset.n
    dim = config.intrinsic_dim if config.intrinsic_dim is not None else dataset.dim
    d_raw = np.zeros(n)
    h = np.full(n, np.nan)
    eval_part: list[np.ndarray] = [None, None]
    ref_part: list[np.ndarray] = [None, None]
    gamma = np.zeros(2)
    beta = np.zeros(2)
    k_set = np.zeros(2, dtype=int)

    for label in CLASSES:
        slot = class_index(label)
        ev, ref = bipartite_partition(dataset, label, config.partition_ratio,
                                      config.seed)
        if ref.size <= config.k:
            raise ValueError(
                f"class {label}: reference part has {ref.size} points but k="
                f"{config.k}; raise partition_ratio or lower k"
            )
        eval_part[slot], ref_part[slot] = ev, ref
        refs = dataset.x[ref]

        d_ev = cdist(dataset.x[ev], refs)
        d_raw[ev] = np.sort(d_ev, axis=1)[:, : config.k].sum(axis=1)
        d_rr = cdist(refs, refs)
        np.fill_diagonal(d_rr, np.inf)
        d_raw[ref] = np.sort(d_rr, axis=1)[:, : config.k].sum(axis=1)

        if config.k >= 2:
            for i in ev:
                dk = max(d_raw[i], np.finfo(float).eps)
                h[i] = local_entropy(dk, config.k, ref.size, dim)
            for i in ref:
                dk = max(d_raw[i], np.finfo(float).eps)
                h[i] = local_entropy(dk, config.k, ref.size - 1, dim)

        cls_idx = dataset.class_indices(label)
        size = cls_idx.size
        kz = int(round(config.target_coverage * size))
        kz = min(max(kz, 1), size)
        k_set[slot] = kz
        gamma[slot] = gamma_hat(d_raw[cls_idx], kz, config.epsilon_gamma, n)
        beta[slot] = config.target_coverage * size / n

    return GemStats(
        d_raw=d_raw,
        d_tilde=d_raw / n,
        h=h,
        gamma_hat=gamma,
        beta_hat=beta,
        k_set=k_set,
        eval_part=tuple(eval_part),
        ref_part=tuple(ref_part),
        k=config.k,
        target_coverage=config.target_coverage,
    )

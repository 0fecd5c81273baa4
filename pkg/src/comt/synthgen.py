"""Synthetic data generation, corruption injection and federation splits.

All generators are pure functions of their seed. Every agent/purpose derives
an independent child stream by hashing (seed, purpose, agent) so repetitions
and agents can be processed in any order without changing the output.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .datamodel import LabeledShard, TaskKind, TrustedShard, as_matrix, as_vector
from .errors import InsufficientData, InvalidArgument


class CorruptionMode(Enum):
    GAUSSIAN_FEATURES_AND_TARGETS = "gaussian_features_and_targets"
    GAUSSIAN_FEATURES_ONLY = "gaussian_features_only"
    LABEL_FLIP_ONLY = "label_flip_only"


@dataclass(frozen=True)
class CorruptionSpec:
    """Systematic-noise settings applied to training shards only.

    ``theta_x``/``theta_y`` scale Gaussian noise relative to the mean absolute
    feature/target magnitude; ``flip_fraction`` is the share of class labels
    negated in LABEL_FLIP_ONLY mode.
    """

    theta_x: float = 0.0
    theta_y: float = 0.0
    flip_fraction: float = 0.0
    mode: CorruptionMode = CorruptionMode.GAUSSIAN_FEATURES_AND_TARGETS

    def __post_init__(self):
        if self.theta_x < 0 or self.theta_y < 0:
            raise InvalidArgument("noise magnitudes must be nonnegative")
        if not 0.0 <= self.flip_fraction <= 1.0:
            raise InvalidArgument("flip_fraction must be in [0, 1]")


@dataclass(frozen=True)
class SplitSpec:
    """Train/trusted/test partition across ``num_agents`` agents."""

    train_fraction: float = 0.40
    trusted_fraction: float = 0.005
    seed: int = 0
    num_agents: int = 5

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise InvalidArgument("train_fraction must be in (0, 1)")
        if not 0.0 < self.trusted_fraction < 1.0:
            raise InvalidArgument("trusted_fraction must be in (0, 1)")
        if self.train_fraction + self.trusted_fraction >= 1.0:
            raise InvalidArgument("train + trusted fractions must leave a test set")
        if self.num_agents < 1:
            raise InvalidArgument("num_agents must be >= 1")


def child_seed(seed: int, purpose: str, index: int = 0) -> int:
    """Stable 256-bit child seed derived from (seed, purpose, index)."""
    digest = hashlib.sha256(f"{seed}|{purpose}|{index}".encode()).digest()
    return int.from_bytes(digest, "little")


def child_rng(seed: int, purpose: str, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(child_seed(seed, purpose, index))


def _cluster_points(
    rng: np.random.Generator,
    counts: np.ndarray,
    d: int,
    cluster_sep: float,
    cluster_std: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Isotropic normal clusters with random means; returns (X, cluster_of_row).

    Means are drawn so the expected pairwise distance between cluster centers
    equals ``cluster_sep``.
    """
    n_clusters = len(counts)
    scale = cluster_sep / np.sqrt(2.0 * d)
    means = rng.standard_normal((n_clusters, d)) * scale
    rows = []
    owner = []
    for c, cnt in enumerate(counts):
        rows.append(means[c] + cluster_std * rng.standard_normal((cnt, d)))
        owner.append(np.full(cnt, c))
    return np.concatenate(rows, axis=0), np.concatenate(owner)


def _spread_counts(total: int, bins: int) -> np.ndarray:
    base, extra = divmod(total, bins)
    counts = np.full(bins, base, dtype=int)
    counts[:extra] += 1
    return counts


def gen_classification(
    seed: int,
    n: int,
    d: int,
    n_clusters: int,
    cluster_sep: float = 6.0,
    cluster_std: float = 1.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Balanced two-class cluster data; half the clusters positive, half negative.

    Class balance is within one instance of n/2 by construction. Deterministic
    in ``seed``.
    """
    if n_clusters < 2 or n_clusters % 2 != 0:
        raise InvalidArgument("n_clusters must be a positive even integer")
    if n < n_clusters:
        raise InvalidArgument("need at least one point per cluster")
    if d < 1:
        raise InvalidArgument("d must be >= 1")
    rng = child_rng(seed, "gen-classification")
    n_pos = n // 2 + (n % 2)
    half = n_clusters // 2
    counts = np.concatenate([_spread_counts(n_pos, half), _spread_counts(n - n_pos, half)])
    X, owner = _cluster_points(rng, counts, d, cluster_sep, cluster_std)
    y = np.where(owner < half, 1.0, -1.0)
    perm = rng.permutation(n)
    return X[perm], y[perm]


def gen_regression(
    seed: int,
    n: int,
    d: int,
    n_clusters: int = 4,
    cluster_sep: float = 6.0,
    cluster_std: float = 1.0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cluster-structured features with exact linear targets.

    Returns (X, y, true_w) with y = X @ true_w, noise-free, so downstream
    corruption fully controls the noise level. true_w is standard normal.
    """
    if n < 1 or d < 1:
        raise InvalidArgument("n and d must be >= 1")
    if n_clusters < 1:
        raise InvalidArgument("n_clusters must be >= 1")
    n_clusters = min(n_clusters, n)
    rng = child_rng(seed, "gen-regression")
    counts = _spread_counts(n, n_clusters)
    X, _ = _cluster_points(rng, counts, d, cluster_sep, cluster_std)
    true_w = rng.standard_normal(d)
    perm = rng.permutation(n)
    X = X[perm]
    return X, X @ true_w, true_w


def corrupt_gaussian(
    features: np.ndarray,
    targets: np.ndarray,
    spec: CorruptionSpec,
    seed: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Add entrywise Gaussian noise scaled by the mean absolute magnitudes.

    X' = X + zeta_x * eps_x * theta_x with eps_x the mean |entry| of X, and
    analogously for targets unless the mode leaves them untouched.
    """
    if spec.mode is CorruptionMode.LABEL_FLIP_ONLY:
        raise InvalidArgument("corrupt_gaussian requires a Gaussian corruption mode")
    X = as_matrix(features)
    y = as_vector(targets)
    rng = child_rng(seed, "corrupt-gaussian")
    eps_x = float(np.mean(np.abs(X))) if X.size else 0.0
    X_out = X + rng.standard_normal(X.shape) * (eps_x * spec.theta_x)
    if spec.mode is CorruptionMode.GAUSSIAN_FEATURES_AND_TARGETS:
        eps_y = float(np.mean(np.abs(y))) if y.size else 0.0
        y_out = y + rng.standard_normal(y.shape) * (eps_y * spec.theta_y)
    else:
        y_out = y.copy()
    return X_out, y_out


def flip_labels(labels: np.ndarray, fraction: float, seed: int) -> np.ndarray:
    """Negate exactly round(fraction * n) labels, chosen uniformly."""
    if not 0.0 <= fraction <= 1.0:
        raise InvalidArgument("fraction must be in [0, 1]")
    y = as_vector(labels).copy()
    n = y.shape[0]
    k = int(round(fraction * n))
    if k > 0:
        idx = child_rng(seed, "flip-labels").choice(n, size=k, replace=False)
        y[idx] = -y[idx]
    return y


def split_and_shard(
    features: np.ndarray,
    labels: np.ndarray,
    spec: SplitSpec,
    task: TaskKind,
) -> tuple[list, list, tuple[np.ndarray, np.ndarray]]:
    """Permute, then carve K equal training shards, K trusted shards and a test set.

    The first train_fraction mass becomes K equal shards (remainders dropped),
    the next trusted_fraction mass becomes K equal trusted shards; everything
    after those two blocks is the test set. Corruption is the caller's step
    and must touch only the returned training shards.
    """
    X = as_matrix(features)
    y = as_vector(labels)
    n = X.shape[0]
    if y.shape[0] != n:
        raise InvalidArgument("features and labels disagree on instance count")
    K = spec.num_agents
    perm = child_rng(spec.seed, "split").permutation(n)
    a = int(np.floor(spec.train_fraction * n))
    b = a + int(np.floor(spec.trusted_fraction * n))
    shard_size = a // K
    m = (b - a) // K
    if m < 1:
        raise InsufficientData("trusted fraction too small: empty trusted shard")
    if shard_size <= m:
        raise InsufficientData("training shards must be larger than trusted shards")
    shards = []
    trusted = []
    for k in range(K):
        idx = perm[k * shard_size : (k + 1) * shard_size]
        shards.append(LabeledShard(k, X[idx].copy(), y[idx].copy(), task))
        jdx = perm[a + k * m : a + (k + 1) * m]
        trusted.append(TrustedShard(k, X[jdx].copy(), y[jdx].copy(), task))
    test_idx = perm[b:]
    return shards, trusted, (X[test_idx].copy(), y[test_idx].copy())

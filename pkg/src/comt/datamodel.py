"""Core domain types and federation-level validation.

A federation is a list of :class:`LabeledShard` (one per agent, possibly
corrupted) paired with a list of :class:`TrustedShard` (small expert-verified
sets). All shards share the feature dimension and the task kind;
classification labels are encoded -1/+1 throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyTrustedSet,
    InvalidArgument,
    LabelDomainError,
)


class TaskKind(Enum):
    REGRESSION = "regression"
    BINARY_CLASSIFICATION = "binary_classification"


def as_matrix(values) -> np.ndarray:
    """Coerce to a 2-D float64 array without copying when possible."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    return arr


def as_vector(values) -> np.ndarray:
    return np.asarray(values, dtype=np.float64).reshape(-1)


@dataclass
class LabeledShard:
    """One agent's (possibly corrupted) training data."""

    agent_id: int
    features: np.ndarray  # (n_k, d)
    labels: np.ndarray  # (n_k,)
    task: TaskKind

    def __post_init__(self):
        self.features = as_matrix(self.features)
        self.labels = as_vector(self.labels)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]


@dataclass
class TrustedShard:
    """One agent's small expert-verified dataset."""

    agent_id: int
    features: np.ndarray  # (m_k, d)
    labels: np.ndarray  # (m_k,)
    task: TaskKind

    def __post_init__(self):
        self.features = as_matrix(self.features)
        self.labels = as_vector(self.labels)

    @property
    def m(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]


@dataclass
class DualState:
    """All per-agent dual variables plus the global consensus vectors.

    ``alpha[k]`` weights agent k's instances in the dual objective, ``beta[k]``
    holds the per-instance feature crafting. ``theta_tilde`` is the consensus
    model, ``tau`` the aggregated dual-to-primal image and ``u`` the scaled
    consensus dual. Mutated only by the round loop that owns it.
    """

    alpha: list
    beta: list
    theta_tilde: np.ndarray
    tau: np.ndarray
    u: np.ndarray

    @classmethod
    def zeros(cls, shards: Sequence[LabeledShard]) -> "DualState":
        d = shards[0].d
        return cls(
            alpha=[np.zeros(s.n) for s in shards],
            beta=[np.zeros((s.n, d)) for s in shards],
            theta_tilde=np.zeros(d),
            tau=np.zeros(d),
            u=np.zeros(d),
        )


@dataclass(frozen=True)
class HyperParams:
    """Regularization weights, consensus parameters and stopping controls.

    ``gamma`` is either a scalar applied to every agent or a per-agent
    sequence; each value must lie in [1, K] (updates are damped by gamma/K).
    ``lambda_alpha`` and ``lambda_trusted`` are data-scale sensitive; see
    :func:`comt.experiments.auto_hyperparams` for scale-aware defaults.
    """

    lambda_w: float = 1.0
    lambda_trusted: float = 1.0
    lambda_alpha: float = 0.1
    lambda_z: float = 1.0
    rho: float = 100.0
    gamma: float | tuple = 1.0
    max_rounds: int = 1500
    rel_tol: float = 1e-6
    select_frac_threshold: float = 1e-3
    epsilon_box: float = 1e-6
    inner_iters: int = 5

    def __post_init__(self):
        if not self.lambda_w > 0:
            raise InvalidArgument("lambda_w must be positive")
        for name in ("lambda_trusted", "lambda_alpha", "lambda_z"):
            if getattr(self, name) < 0:
                raise InvalidArgument(f"{name} must be nonnegative")
        if not self.rho > 0:
            raise InvalidArgument("rho must be positive")
        if self.max_rounds < 0:
            raise InvalidArgument("max_rounds must be nonnegative")
        if not self.rel_tol > 0:
            raise InvalidArgument("rel_tol must be positive")
        if not 0.0 < self.select_frac_threshold < 1.0:
            raise InvalidArgument("select_frac_threshold must be in (0, 1)")
        if not 0.0 < self.epsilon_box < 0.5:
            raise InvalidArgument("epsilon_box must be in (0, 0.5)")
        if self.inner_iters < 1:
            raise InvalidArgument("inner_iters must be positive")

    def gamma_for(self, num_agents: int) -> np.ndarray:
        """Per-agent step scalings, validated against 1 <= gamma_k <= K."""
        if np.isscalar(self.gamma):
            gammas = np.full(num_agents, float(self.gamma))
        else:
            gammas = np.asarray(self.gamma, dtype=np.float64)
            if gammas.shape != (num_agents,):
                raise DimensionMismatch(
                    f"gamma has {gammas.size} entries for {num_agents} agents"
                )
        if np.any(gammas < 1.0) or np.any(gammas > num_agents):
            raise InvalidArgument("each gamma_k must lie in [1, K]")
        return gammas

    @classmethod
    def for_task(cls, task: TaskKind, **overrides) -> "HyperParams":
        """Defaults with the task-dependent round budget."""
        if "max_rounds" not in overrides:
            overrides["max_rounds"] = (
                2000 if task is TaskKind.BINARY_CLASSIFICATION else 1500
            )
        return cls(**overrides)


@dataclass(frozen=True)
class ModelParams:
    """Extracted model: weights plus the retained-instance bookkeeping."""

    w: np.ndarray
    selected: tuple  # per-agent integer index arrays
    rho_fraction: float


@dataclass(frozen=True)
class RoundTrace:
    """Per-round record of progress and wire traffic."""

    round: int
    objective: float
    primal_residual: float
    bytes_up: int
    bytes_down: int


def _check_labels(labels: np.ndarray, task: TaskKind, who: str) -> None:
    if not np.all(np.isfinite(labels)):
        raise InvalidArgument(f"{who}: labels contain non-finite entries")
    if task is TaskKind.BINARY_CLASSIFICATION:
        if not np.all(np.isin(labels, (-1.0, 1.0))):
            raise LabelDomainError(f"{who}: classification labels must be -1/+1")


def validate_federation(
    shards: Sequence[LabeledShard], trusted: Sequence[TrustedShard]
) -> None:
    """Raise unless every federation invariant holds for all K agents.

    Checks pairing by agent_id, shared feature dimension and task, finite
    entries, -1/+1 classification labels, and that every trusted set is
    nonempty but smaller than its paired training shard.
    """
    if len(shards) == 0:
        raise DimensionMismatch("federation has no shards")
    if len(shards) != len(trusted):
        raise DimensionMismatch(
            f"{len(shards)} shards paired with {len(trusted)} trusted sets"
        )
    K = len(shards)
    ids = sorted(s.agent_id for s in shards)
    if ids != list(range(K)):
        raise DimensionMismatch("shard agent_ids must be exactly 0..K-1")
    if sorted(t.agent_id for t in trusted) != ids:
        raise DimensionMismatch("trusted agent_ids do not match shard agent_ids")

    task = shards[0].task
    d = shards[0].d
    by_id = {t.agent_id: t for t in trusted}
    for s in shards:
        who = f"shard {s.agent_id}"
        if s.task is not task:
            raise InvalidArgument(f"{who}: mixed task kinds in one federation")
        if s.features.ndim != 2:
            raise DimensionMismatch(f"{who}: features must be a matrix")
        if s.d != d:
            raise DimensionMismatch(f"{who}: feature dim {s.d} != {d}")
        if s.features.shape[0] != s.labels.shape[0]:
            raise DimensionMismatch(f"{who}: {s.features.shape[0]} rows vs {s.labels.shape[0]} labels")
        if not np.all(np.isfinite(s.features)):
            raise InvalidArgument(f"{who}: features contain non-finite entries")
        _check_labels(s.labels, task, who)

        t = by_id[s.agent_id]
        who_t = f"trusted set {t.agent_id}"
        if t.task is not task:
            raise InvalidArgument(f"{who_t}: mixed task kinds in one federation")
        if t.d != d:
            raise DimensionMismatch(f"{who_t}: feature dim {t.d} != {d}")
        if t.features.shape[0] != t.labels.shape[0]:
            raise DimensionMismatch(f"{who_t}: rows vs labels mismatch")
        if t.m == 0:
            raise EmptyTrustedSet(f"{who_t}: no trusted instances")
        if t.m >= s.n:
            raise InvalidArgument(
                f"{who_t}: trusted size {t.m} must be smaller than shard size {s.n}"
            )
        if not np.all(np.isfinite(t.features)):
            raise InvalidArgument(f"{who_t}: features contain non-finite entries")
        _check_labels(t.labels, task, who_t)

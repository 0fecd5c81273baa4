"""Dual-form learner primitives shared by the teaching solvers and baselines.

Shards store rows-as-instances, so the aggregated dual-to-primal image of
agent k is (X^k + beta^k)^T alpha^k (label-weighted for classification),
divided by the learner regularization lambda_w.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import xlogy
from scipy.stats import rankdata

from .datamodel import TaskKind, as_matrix, as_vector
from .errors import DegenerateInput, DimensionMismatch, DomainError


@dataclass(frozen=True)
class PrimalModel:
    w: np.ndarray
    task: TaskKind


def dual_weights(alpha: np.ndarray, labels: np.ndarray, task: TaskKind) -> np.ndarray:
    """Effective instance weights: alpha, or alpha*y for classification."""
    if task is TaskKind.BINARY_CLASSIFICATION:
        return alpha * labels
    return alpha


def primal_contribution(
    features: np.ndarray,
    beta: np.ndarray,
    alpha: np.ndarray,
    labels: np.ndarray,
    lambda_w: float,
    task: TaskKind,
) -> np.ndarray:
    """One agent's share of the primal model, (X+beta)^T weights / lambda_w."""
    wt = dual_weights(alpha, labels, task)
    return (features + beta).T @ wt / lambda_w


def dual_to_primal(
    alpha: Sequence[np.ndarray],
    beta: Sequence[np.ndarray],
    shards: Sequence,
    lambda_w: float,
    task: TaskKind,
) -> PrimalModel:
    """Map the federated dual state to the primal weight vector."""
    if not (len(alpha) == len(beta) == len(shards)):
        raise DimensionMismatch("alpha, beta and shards must have one entry per agent")
    d = shards[0].d
    w = np.zeros(d)
    for a, b, s in zip(alpha, beta, shards):
        a = as_vector(a)
        b = as_matrix(b)
        if a.shape[0] != s.n or b.shape != (s.n, d):
            raise DimensionMismatch(
                f"agent {s.agent_id}: state shapes do not match shard ({s.n}, {d})"
            )
        w += primal_contribution(s.features, b, a, s.labels, lambda_w, task)
    return PrimalModel(w=w, task=task)


def ridge_dual_objective(
    alpha: Sequence[np.ndarray],
    beta: Sequence[np.ndarray],
    shards: Sequence,
    lambda_w: float,
) -> float:
    """Dual ridge value: the quadratic term uses the cross-agent aggregate.

    (1/2 lambda_w) ||sum_k (X^k+beta^k)^T alpha^k||^2
      + 1/2 sum_k ||alpha^k||^2 - sum_k alpha^k . Y^k
    """
    if not (len(alpha) == len(beta) == len(shards)):
        raise DimensionMismatch("alpha, beta and shards must have one entry per agent")
    d = shards[0].d
    agg = np.zeros(d)
    sq = 0.0
    lin = 0.0
    for a, b, s in zip(alpha, beta, shards):
        a = as_vector(a)
        b = as_matrix(b)
        if a.shape[0] != s.n or b.shape != (s.n, d):
            raise DimensionMismatch(f"agent {s.agent_id}: state shapes mismatch")
        agg += (s.features + b).T @ a
        sq += float(a @ a)
        lin += float(a @ s.labels)
    return float(agg @ agg) / (2.0 * lambda_w) + 0.5 * sq - lin


def logistic_dual_entropy(alpha: np.ndarray) -> float:
    """sum_i alpha log alpha + (1-alpha) log(1-alpha), with 0 log 0 = 0."""
    a = as_vector(alpha)
    if np.any(a < 0.0) or np.any(a > 1.0):
        raise DomainError("logistic dual variables must lie in [0, 1]")
    return float(np.sum(xlogy(a, a) + xlogy(1.0 - a, 1.0 - a)))


def trusted_loss(w: np.ndarray, trusted: Sequence, task: TaskKind) -> float:
    """Unweighted trusted-set loss of a weight vector w."""
    total = 0.0
    for t in trusted:
        margin = t.features @ w
        if task is TaskKind.REGRESSION:
            r = margin - t.labels
            total += float(r @ r)
        else:
            total += float(np.sum(np.logaddexp(0.0, -t.labels * margin)))
    return total


def trusted_loss_grad(w: np.ndarray, trusted: Sequence, task: TaskKind) -> np.ndarray:
    """Gradient of :func:`trusted_loss` with respect to w."""
    g = np.zeros_like(w)
    for t in trusted:
        margin = t.features @ w
        if task is TaskKind.REGRESSION:
            g += 2.0 * (t.features.T @ (margin - t.labels))
        else:
            sig = 1.0 / (1.0 + np.exp(t.labels * margin))
            g -= t.features.T @ (t.labels * sig)
    return g


def predict(model: PrimalModel, features: np.ndarray) -> np.ndarray:
    """Raw scores X @ w; sign gives the class decision, value the ranking."""
    X = as_matrix(features)
    if X.shape[1] != model.w.shape[0]:
        raise DimensionMismatch(
            f"features have width {X.shape[1]}, model expects {model.w.shape[0]}"
        )
    return X @ model.w


def r_squared(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    """Coefficient of determination, 1 - SS_res / SS_tot."""
    yt = as_vector(y_true)
    yp = as_vector(y_pred)
    if yt.shape[0] != yp.shape[0]:
        raise DimensionMismatch("y_true and y_pred lengths differ")
    if yt.shape[0] < 2:
        raise DegenerateInput("need at least two observations")
    ss_tot = float(np.sum((yt - yt.mean()) ** 2))
    if ss_tot == 0.0:
        raise DegenerateInput("y_true is constant")
    ss_res = float(np.sum((yt - yp) ** 2))
    return 1.0 - ss_res / ss_tot


def auc(y_true: np.ndarray, scores: np.ndarray) -> float:
    """Probability a random positive outranks a random negative, ties at 1/2."""
    yt = as_vector(y_true)
    sc = as_vector(scores)
    if yt.shape[0] != sc.shape[0]:
        raise DimensionMismatch("labels and scores lengths differ")
    pos = yt > 0
    n_pos = int(pos.sum())
    n_neg = yt.shape[0] - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateInput("AUC needs both classes present")
    ranks = rankdata(sc, method="average")
    rank_sum = float(ranks[pos].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)

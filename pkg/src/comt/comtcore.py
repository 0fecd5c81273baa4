"""Objectives and block solvers for the collaborative teaching rounds.

Each round an agent approximately minimizes its view of the consensus-penalized
objective over its own dual weights alpha^k and feature crafting beta^k, with
every other agent's share of the aggregate frozen inside a residual constant.
The crafting block is an unconstrained convex quadratic minimized in closed
form; the alpha block takes proximal-gradient steps (gradient on the smooth
part, soft-threshold for the L1 weight, box clamp for classification).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit

from .datamodel import DualState, HyperParams, ModelParams, TaskKind, TrustedShard
from .duallearn import (
    dual_to_primal,
    dual_weights,
    logistic_dual_entropy,
    primal_contribution,
    ridge_dual_objective,
    trusted_loss,
    trusted_loss_grad,
)
from .errors import (
    DegenerateState,
    DimensionMismatch,
    DomainError,
    InvalidArgument,
    NonFiniteIterate,
)


@dataclass
class LocalSubproblem:
    """Agent-local view of one round: own data and state plus broadcasts.

    ``tau`` is the globally aggregated dual-to-primal image including this
    agent's stale share; the consensus residual freezes the other agents'
    contributions by subtracting the stale share and adding the fresh one.
    Contains no data from any other agent.
    """

    features: np.ndarray  # (n_k, d)
    labels: np.ndarray  # (n_k,)
    alpha: np.ndarray  # (n_k,)
    beta: np.ndarray  # (n_k, d)
    theta_tilde: np.ndarray  # (d,) broadcast
    u: np.ndarray  # (d,) broadcast
    tau: np.ndarray  # (d,) broadcast
    lambda_w: float
    lambda_alpha: float
    lambda_z: float
    rho: float
    epsilon_box: float
    task: TaskKind
    craft: bool = True

    def __post_init__(self):
        n, d = self.features.shape
        if self.labels.shape != (n,):
            raise DimensionMismatch("labels do not match features")
        if self.alpha.shape != (n,):
            raise DimensionMismatch("alpha does not match shard size")
        if self.beta.shape != (n, d):
            raise DimensionMismatch("beta does not match features shape")
        for name in ("theta_tilde", "u", "tau"):
            if getattr(self, name).shape != (d,):
                raise DimensionMismatch(f"{name} must be a d-vector")

    def residual_rest(self) -> np.ndarray:
        """Other agents' frozen share of tau: broadcast minus own stale share."""
        own = primal_contribution(
            self.features, self.beta, self.alpha, self.labels, self.lambda_w, self.task
        )
        return self.tau - own


def soft_threshold(v: np.ndarray, t: float) -> np.ndarray:
    """Proximal operator of t * ||.||_1, sign(v) * max(|v| - t, 0)."""
    if t < 0:
        raise InvalidArgument("threshold must be nonnegative")
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def top_gram_eigenvalue(gram: np.ndarray, iters: int = 100, tol: float = 1e-10) -> float:
    """Largest eigenvalue of a PSD matrix via deterministic power iteration."""
    d = gram.shape[0]
    v = 1.0 + 0.01 * np.arange(d)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = gram @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
        lam_new = float(v @ (gram @ v))
        if abs(lam_new - lam) <= tol * max(1.0, abs(lam_new)):
            return lam_new
        lam = lam_new
    return lam


def _aggregate(sub: LocalSubproblem, a: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Raw local aggregate (X+B)^T weights, before dividing by lambda_w."""
    return (sub.features + B).T @ dual_weights(a, sub.labels, sub.task)


def _local_objective(sub: LocalSubproblem, a: np.ndarray, B: np.ndarray, rest: np.ndarray) -> float:
    v = _aggregate(sub, a, B)
    if sub.task is TaskKind.REGRESSION:
        dual = float(v @ v) / (2.0 * sub.lambda_w) + 0.5 * float(a @ a) - float(a @ sub.labels)
    else:
        dual = logistic_dual_entropy(a) + float(v @ v) / sub.lambda_w
    resid = sub.theta_tilde + sub.u - rest - v / sub.lambda_w
    value = (
        dual
        + sub.lambda_alpha * float(np.sum(np.abs(a)))
        + sub.lambda_z * float(np.sum(B * B))
        + 0.5 * sub.rho * float(resid @ resid)
    )
    return value


def eval_admm_local(sub: LocalSubproblem) -> float:
    """Agent-k portion of the consensus-penalized objective at the current state."""
    return _local_objective(sub, sub.alpha, sub.beta, sub.residual_rest())


def _gv_total(sub: LocalSubproblem, v: np.ndarray, rest: np.ndarray) -> np.ndarray:
    """Gradient of the smooth local objective with respect to the aggregate v."""
    if sub.task is TaskKind.REGRESSION:
        gv = v / sub.lambda_w
    else:
        gv = 2.0 * v / sub.lambda_w
    resid = sub.theta_tilde + sub.u - rest - v / sub.lambda_w
    return gv - (sub.rho / sub.lambda_w) * resid


def admm_local_grad_alpha(
    sub: LocalSubproblem, a: np.ndarray, B: np.ndarray, rest: np.ndarray | None = None
) -> np.ndarray:
    """Gradient of the smooth part (everything but the L1 term) w.r.t. alpha."""
    if rest is None:
        rest = sub.residual_rest()
    M = sub.features + B
    gv = _gv_total(sub, _aggregate(sub, a, B), rest)
    if sub.task is TaskKind.REGRESSION:
        return M @ gv + a - sub.labels
    return sub.labels * (M @ gv) + np.log(a) - np.log1p(-a)


def admm_local_grad_beta(
    sub: LocalSubproblem, a: np.ndarray, B: np.ndarray, rest: np.ndarray | None = None
) -> np.ndarray:
    """Gradient of the smooth local objective w.r.t. the crafting matrix."""
    if rest is None:
        rest = sub.residual_rest()
    gv = _gv_total(sub, _aggregate(sub, a, B), rest)
    wt = dual_weights(a, sub.labels, sub.task)
    return np.outer(wt, gv) + 2.0 * sub.lambda_z * B


def _beta_step(sub: LocalSubproblem, a: np.ndarray, B: np.ndarray, rest: np.ndarray) -> np.ndarray:
    """Exact minimizer over the crafting block with alpha held fixed.

    The objective depends on beta only through p = beta^T weights, so the
    minimizer has rows proportional to the weights; p solves a diagonal
    d-dimensional system.
    """
    wt = dual_weights(a, sub.labels, sub.task)
    nrm2 = float(wt @ wt)
    if nrm2 <= 1e-300:
        return np.zeros_like(B) if sub.lambda_z > 0 else B
    s = sub.features.T @ wt
    r = sub.theta_tilde + sub.u - rest
    c_q = 1.0 / (2.0 * sub.lambda_w) if sub.task is TaskKind.REGRESSION else 1.0 / sub.lambda_w
    A = 2.0 * c_q + sub.rho / sub.lambda_w**2
    p = ((sub.rho / sub.lambda_w) * r - A * s) / (A + 2.0 * sub.lambda_z / nrm2)
    return np.outer(wt, p) / nrm2


def _alpha_lipschitz(sub: LocalSubproblem, M: np.ndarray) -> float:
    sigma2 = top_gram_eigenvalue(M.T @ M)
    if sub.task is TaskKind.REGRESSION:
        return (1.0 / sub.lambda_w + sub.rho / sub.lambda_w**2) * sigma2 + 1.0
    # entropy curvature is at least 4 on the open box
    return (2.0 / sub.lambda_w + sub.rho / sub.lambda_w**2) * sigma2 + 4.0


def _alpha_step(
    sub: LocalSubproblem,
    a: np.ndarray,
    B: np.ndarray,
    rest: np.ndarray,
    max_backtracks: int,
) -> np.ndarray:
    """One proximal-gradient step on alpha with halving backtracking."""
    grad = admm_local_grad_alpha(sub, a, B, rest)
    if not np.all(np.isfinite(grad)):
        raise NonFiniteIterate("non-finite gradient in alpha step")
    obj = _local_objective(sub, a, B, rest)
    step = 1.0 / _alpha_lipschitz(sub, sub.features + B)
    for _ in range(max_backtracks):
        cand = soft_threshold(a - step * grad, step * sub.lambda_alpha)
        if sub.task is TaskKind.BINARY_CLASSIFICATION:
            cand = np.clip(cand, sub.epsilon_box, 1.0 - sub.epsilon_box)
        if np.all(np.isfinite(cand)) and _local_objective(sub, cand, B, rest) <= obj:
            return cand
        step *= 0.5
    return a


def solve_local(
    sub: LocalSubproblem, inner_iters: int = 5, max_backtracks: int = 40
) -> tuple[np.ndarray, np.ndarray]:
    """Approximately minimize the local objective over (alpha, beta).

    Alternates the closed-form crafting step with a proximal-gradient alpha
    step for ``inner_iters`` rounds and returns increments relative to the
    input state. The local objective never increases: if no step improves on
    the input, the increments are zero.
    """
    rest = sub.residual_rest()
    value_in = _local_objective(sub, sub.alpha, sub.beta, rest)
    a = sub.alpha.copy()
    if sub.task is TaskKind.BINARY_CLASSIFICATION:
        a = np.clip(a, sub.epsilon_box, 1.0 - sub.epsilon_box)
    B = sub.beta.copy()
    for _ in range(inner_iters):
        if sub.craft:
            B = _beta_step(sub, a, B, rest)
        a = _alpha_step(sub, a, B, rest, max_backtracks)
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(B))):
        raise NonFiniteIterate("local solve produced non-finite iterates")
    value_out = _local_objective(sub, a, B, rest)
    if value_out > value_in:
        return np.zeros_like(sub.alpha), np.zeros_like(sub.beta)
    assert value_out <= value_in + 1e-9 * max(1.0, abs(value_in))
    return a - sub.alpha, B - sub.beta


def solve_trusted(
    trusted: TrustedShard,
    theta: np.ndarray,
    tau: np.ndarray,
    u: np.ndarray,
    hp: HyperParams,
) -> np.ndarray:
    """Agent-side consensus update fitted to the trusted instances.

    Regression solves the positive-definite normal equations exactly;
    classification runs a fixed number of damped Newton steps on the logistic
    analog. Returns the increment relative to the broadcast theta.
    """
    d = theta.shape[0]
    if trusted.d != d:
        raise DimensionMismatch("trusted features do not match model dimension")
    target = tau - u
    lt = hp.lambda_trusted
    Xt = trusted.features
    yt = trusted.labels
    if trusted.task is TaskKind.REGRESSION:
        A = 2.0 * lt * (Xt.T @ Xt) + hp.rho * np.eye(d)
        b = 2.0 * lt * (Xt.T @ yt) + hp.rho * target
        return np.linalg.solve(A, b) - theta
    return _trusted_newton(Xt, yt, theta, target, lt, hp.rho) - theta


def _trusted_newton(
    Xt: np.ndarray,
    yt: np.ndarray,
    theta0: np.ndarray,
    target: np.ndarray,
    lt: float,
    rho: float,
    steps: int = 10,
) -> np.ndarray:
    d = theta0.shape[0]

    def objective(th: np.ndarray) -> float:
        margin = yt * (Xt @ th)
        diff = th - target
        return lt * float(np.sum(np.logaddexp(0.0, -margin))) + 0.5 * rho * float(diff @ diff)

    theta = theta0.copy()
    value = objective(theta)
    eye = np.eye(d)
    for _ in range(steps):
        margin = yt * (Xt @ theta)
        sig = expit(-margin)
        grad = -lt * (Xt.T @ (yt * sig)) + rho * (theta - target)
        if np.linalg.norm(grad) <= 1e-12 * max(1.0, np.linalg.norm(theta)):
            break
        weights = sig * (1.0 - sig)
        hess = lt * (Xt.T @ (Xt * weights[:, None])) + rho * eye
        direction = np.linalg.solve(hess, grad)
        scale = 1.0
        improved = False
        for _ in range(30):
            cand = theta - scale * direction
            cand_value = objective(cand)
            if cand_value <= value:
                theta, value = cand, cand_value
                improved = True
                break
            scale *= 0.5
        if not improved:
            break
    return theta


def _check_alpha_box(alpha: Sequence[np.ndarray], eps: float) -> None:
    for a in alpha:
        if np.any(a < eps) or np.any(a > 1.0 - eps):
            raise DomainError("classification alpha must lie in [eps, 1-eps]")


def eval_comt_objective(
    state: DualState,
    shards: Sequence,
    trusted: Sequence[TrustedShard],
    hp: HyperParams,
    task: TaskKind,
) -> float:
    """Full teaching objective: dual learner + trusted fit + sparsity + crafting cost."""
    if task is TaskKind.BINARY_CLASSIFICATION:
        _check_alpha_box(state.alpha, hp.epsilon_box)
        dual = 0.0
        agg = np.zeros(shards[0].d)
        for a, b, s in zip(state.alpha, state.beta, shards):
            dual += logistic_dual_entropy(a)
            agg += (s.features + b).T @ (a * s.labels)
        dual += float(agg @ agg) / hp.lambda_w
        w = agg / hp.lambda_w
    else:
        dual = ridge_dual_objective(state.alpha, state.beta, shards, hp.lambda_w)
        w = dual_to_primal(state.alpha, state.beta, shards, hp.lambda_w, task).w
    l1 = sum(float(np.sum(np.abs(a))) for a in state.alpha)
    craft = sum(float(np.sum(b * b)) for b in state.beta)
    return (
        dual
        + hp.lambda_trusted * trusted_loss(w, trusted, task)
        + hp.lambda_alpha * l1
        + hp.lambda_z * craft
    )


def comt_objective_smooth_grads(
    state: DualState,
    shards: Sequence,
    trusted: Sequence[TrustedShard],
    hp: HyperParams,
    task: TaskKind,
) -> tuple[list, list]:
    """Analytic gradients of the smooth part (all terms but the L1) of the objective.

    Returns per-agent gradient lists with respect to alpha and beta.
    """
    d = shards[0].d
    agg = np.zeros(d)
    for a, b, s in zip(state.alpha, state.beta, shards):
        agg += (s.features + b).T @ dual_weights(a, s.labels, task)
    w = agg / hp.lambda_w
    g_trusted = hp.lambda_trusted * trusted_loss_grad(w, trusted, task)
    if task is TaskKind.REGRESSION:
        g_v = agg / hp.lambda_w + g_trusted / hp.lambda_w
    else:
        g_v = 2.0 * agg / hp.lambda_w + g_trusted / hp.lambda_w
    grads_alpha = []
    grads_beta = []
    for a, b, s in zip(state.alpha, state.beta, shards):
        M = s.features + b
        if task is TaskKind.REGRESSION:
            grads_alpha.append(M @ g_v + a - s.labels)
        else:
            grads_alpha.append(s.labels * (M @ g_v) + np.log(a) - np.log1p(-a))
        wt = dual_weights(a, s.labels, task)
        grads_beta.append(np.outer(wt, g_v) + 2.0 * hp.lambda_z * b)
    return grads_alpha, grads_beta


@dataclass(frozen=True)
class SelectionMask:
    """Per-agent boolean masks over training instances retained for the model."""

    masks: tuple

    @property
    def total_selected(self) -> int:
        return int(sum(int(m.sum()) for m in self.masks))

    @property
    def total_instances(self) -> int:
        return int(sum(m.shape[0] for m in self.masks))

    @property
    def fraction(self) -> float:
        return self.total_selected / self.total_instances


def select_subset(alpha: Sequence[np.ndarray], tau_sel: float) -> SelectionMask:
    """Keep instances whose |alpha| reaches tau_sel times the global maximum.

    The threshold is relative, so the mask is invariant under a positive
    rescaling of all dual weights.
    """
    if not 0.0 < tau_sel < 1.0:
        raise InvalidArgument("tau_sel must be in (0, 1)")
    peak = max(float(np.max(np.abs(a))) if a.size else 0.0 for a in alpha)
    if peak == 0.0:
        raise DegenerateState("all dual weights are zero; nothing to rank")
    cut = tau_sel * peak
    return SelectionMask(masks=tuple(np.abs(a) >= cut for a in alpha))


def extract_model(
    state: DualState,
    mask: SelectionMask,
    shards: Sequence,
    hp: HyperParams,
    task: TaskKind,
) -> ModelParams:
    """Assemble the primal model from the selected instances only."""
    if len(mask.masks) != len(shards):
        raise DimensionMismatch("mask does not cover every agent")
    if mask.total_selected == 0:
        raise DegenerateState("empty selection; cannot extract a model")
    masked = [np.where(m, a, 0.0) for a, m in zip(state.alpha, mask.masks)]
    model = dual_to_primal(masked, state.beta, shards, hp.lambda_w, task)
    selected = tuple(np.flatnonzero(m) for m in mask.masks)
    return ModelParams(w=model.w, selected=selected, rho_fraction=mask.fraction)

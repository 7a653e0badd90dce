"""TPAUC loss machinery.

The exact two-way partial AUC surrogate selects the ``k1`` lowest-scored
positives and the ``k2`` highest-scored negatives and averages a pairwise
surrogate over the selected pairs.  The same quantity is reachable as a
compositional problem over per-positive thresholds ``s`` and a global
threshold ``s_prime``; the min-max form of that problem is what the
stochastic optimizers work on.

Index conventions: positive indices address rows of ``X_pos`` (and the
coordinates of ``s``/``y``); negative batch indices address rows of
``X_neg``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .data import Dataset

LOSS_CODES = {"squared_hinge": 0, "hinge": 1, "logistic": 2}

# guards floor/ceil of n * theta against binary rounding (0.29 * 100 = 28.999...)
_ROUND_TOL = 1e-9


class ConfigError(ValueError):
    """Invalid rate parameters, step sizes or batch sizes."""


@dataclass(frozen=True)
class SurrogateLoss:
    kind: str = "squared_hinge"
    margin: float = 0.5

    def __post_init__(self):
        if self.kind not in LOSS_CODES:
            raise ConfigError(f"unknown loss {self.kind!r}; choose from {sorted(LOSS_CODES)}")
        if self.margin < 0:
            raise ConfigError("margin must be >= 0")

    @property
    def code(self) -> int:
        return LOSS_CODES[self.kind]

    def __call__(self, t):
        t = np.asarray(t, dtype=np.float64)
        if self.kind == "squared_hinge":
            return np.maximum(0.0, self.margin + t) ** 2
        if self.kind == "hinge":
            return np.maximum(0.0, self.margin + t)
        return np.logaddexp(0.0, t)

    def deriv(self, t):
        """An element of the subdifferential; 0 at the hinge kink."""
        t = np.asarray(t, dtype=np.float64)
        if self.kind == "squared_hinge":
            return 2.0 * np.maximum(0.0, self.margin + t)
        if self.kind == "hinge":
            return (self.margin + t > 0).astype(np.float64)
        return 0.5 * (1.0 + np.tanh(0.5 * t))


def surrogate(loss: SurrogateLoss, t):
    return loss(t)


def surrogate_subgrad(loss: SurrogateLoss, t):
    return loss.deriv(t)


@dataclass(frozen=True)
class RateParams:
    """TPR >= 1 - theta0 and FPR <= theta1, resolved against class counts."""

    theta0: float
    theta1: float
    n_pos: int
    n_neg: int

    def __post_init__(self):
        for name in ("theta0", "theta1"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ConfigError(f"{name} must be in (0, 1], got {v}")
        if self.k1 < 1 or self.k2 < 1:
            raise ConfigError(
                f"rate parameters select no examples: k1={self.k1} (n+={self.n_pos}, "
                f"theta0={self.theta0}), k2={self.k2} (n-={self.n_neg}, theta1={self.theta1})")

    @property
    def k1(self) -> int:
        return math.floor(self.n_pos * self.theta0 + _ROUND_TOL)

    @property
    def k2(self) -> int:
        return math.floor(self.n_neg * self.theta1 + _ROUND_TOL)

    @property
    def q1(self) -> int:
        """Rank of the minimizing threshold of the outer top-k average."""
        return max(1, math.ceil(self.n_pos * self.theta0 - _ROUND_TOL))

    @property
    def q2(self) -> int:
        return max(1, math.ceil(self.n_neg * self.theta1 - _ROUND_TOL))


@dataclass
class PrimalDualState:
    """Iterate (w, s, s', y) of the min-max problem."""

    params: np.ndarray
    s: np.ndarray
    s_prime: float
    y: np.ndarray

    @classmethod
    def initial(cls, params, n_pos: int):
        return cls(np.array(params, dtype=np.float64), np.ones(n_pos), 1.0, np.ones(n_pos))

    def copy(self) -> "PrimalDualState":
        return PrimalDualState(self.params.copy(), self.s.copy(), float(self.s_prime), self.y.copy())


@dataclass(frozen=True)
class StageAnchor:
    w_anchor: np.ndarray
    s_anchor: np.ndarray
    gamma: float

    def __post_init__(self):
        if not self.gamma > 0:
            raise ConfigError("gamma must be positive")


@dataclass(frozen=True)
class StepSizes:
    alpha: float
    beta: float
    eta: float
    beta_prime: float

    def scaled(self, factor: float) -> "StepSizes":
        return StepSizes(self.alpha * factor, self.beta * factor,
                         self.eta * factor, self.beta_prime * factor)


class TPAUCProblem:
    """Dataset split into class blocks plus rate parameters and loss."""

    def __init__(self, ds: Dataset, theta0: float, theta1: float, loss: SurrogateLoss | None = None):
        ds.require_both_classes()
        self.ds = ds
        self.X_pos = np.ascontiguousarray(ds.X_pos)
        self.X_neg = np.ascontiguousarray(ds.X_neg)
        self.rp = RateParams(theta0, theta1, ds.n_pos, ds.n_neg)
        self.loss = loss or SurrogateLoss()

    @property
    def n_pos(self):
        return self.rp.n_pos

    @property
    def n_neg(self):
        return self.rp.n_neg


def _check_batch(prob: TPAUCProblem, i, batch):
    batch = np.asarray(batch, dtype=np.int64)
    if batch.size == 0:
        raise ValueError("negative batch is empty")
    if batch.min() < 0 or batch.max() >= prob.n_neg:
        raise IndexError("negative batch index out of range")
    if not 0 <= i < prob.n_pos:
        raise IndexError(f"positive index {i} out of range")
    return batch


def pair_losses(prob: TPAUCProblem, scorer, i, batch):
    h_i = scorer.scores(prob.X_pos[i:i + 1])[0]
    h_j = scorer.scores(prob.X_neg[batch])
    return prob.loss(h_j - h_i)


def g_value(s_i: float, losses, theta1: float) -> float:
    """Minibatch estimate of g_i from precomputed pairwise losses."""
    losses = np.asarray(losses, dtype=np.float64)
    return float(np.mean(s_i + np.maximum(0.0, losses - s_i) / theta1))


def g_minibatch(prob: TPAUCProblem, scorer, state: PrimalDualState, i: int, batch) -> float:
    batch = _check_batch(prob, i, batch)
    sc = scorer.with_params(state.params)
    return g_value(state.s[i], pair_losses(prob, sc, i, batch), prob.rp.theta1)


def g_full(prob: TPAUCProblem, scorer, state: PrimalDualState, i: int) -> float:
    return g_minibatch(prob, scorer, state, i, np.arange(prob.n_neg))


def g_subgrads(prob: TPAUCProblem, scorer, state: PrimalDualState, i: int, batch):
    """Subgradients of the minibatch g_i in the parameters and in s^(i).

    The hinge indicator is taken as 0 where a pairwise loss equals s^(i).
    """
    batch = _check_batch(prob, i, batch)
    sc = scorer.with_params(state.params)
    h_i, J_i = sc.score_grads(prob.X_pos[i:i + 1])
    h_j, J_j = sc.score_grads(prob.X_neg[batch])
    t = h_j - h_i[0]
    active = prob.loss(t) > state.s[i]
    B, th1 = len(batch), prob.rp.theta1
    coef = np.where(active, prob.loss.deriv(t), 0.0) / (B * th1)
    dw = coef @ J_j - coef.sum() * J_i[0]
    ds = 1.0 - active.sum() / (B * th1)
    return dw, float(ds)


def y_prox_update(y_i, g_hat, s_prime, theta0: float, alpha: float):
    """Closed-form maximizer over [0, 1] of y*(g - s')/theta0 - (y - y_i)^2 / (2 alpha)."""
    return np.clip(y_i + alpha * (np.asarray(g_hat) - s_prime) / theta0, 0.0, 1.0)


def primal_steps(state: PrimalDualState, sampled, y_new, dws, ds, rp: RateParams,
                 steps: StepSizes, anchor: StageAnchor | None = None,
                 weight_decay: float = 0.0) -> PrimalDualState:
    """Apply the block-coordinate primal updates in place and return ``state``.

    ``sampled`` lists the positive coordinates of this iteration; ``y_new``,
    ``dws`` (rows) and ``ds`` are aligned with it.  The stored y coordinates
    are overwritten with ``y_new``; every other coordinate of s and y is left
    untouched.
    """
    sampled = np.asarray(sampled, dtype=np.int64)
    if sampled.size and (sampled.min() < 0 or sampled.max() >= len(state.s)):
        raise IndexError("sampled positive index out of range")
    y_new = np.asarray(y_new, dtype=np.float64)
    dws = np.asarray(dws, dtype=np.float64).reshape(len(sampled), -1)
    ds = np.asarray(ds, dtype=np.float64)
    th0, S = rp.theta0, len(sampled)

    w_old = state.params
    s_old = state.s[sampled]
    gw = (y_new @ dws) / S
    gs = y_new * ds
    if anchor is not None:
        gw = gw + (w_old - anchor.w_anchor) / anchor.gamma
        gs = gs + (s_old - anchor.s_anchor[sampled]) / anchor.gamma
    new_w = w_old - (steps.eta / th0) * gw
    if weight_decay:
        new_w -= steps.eta * weight_decay * w_old
    state.params = new_w
    state.s[sampled] = s_old - (steps.beta / th0) * gs
    state.y[sampled] = y_new
    state.s_prime = state.s_prime - steps.beta_prime * (1.0 - y_new.sum() / (th0 * S))
    return state


def staco_step(prob: TPAUCProblem, scorer, state: PrimalDualState, sampled, batch, batch_tilde,
               steps: StepSizes, anchor: StageAnchor | None = None, weight_decay: float = 0.0):
    """One iteration for any scorer, vectorized over the sampled positives."""
    sc = scorer.with_params(state.params)
    loss, th0, th1 = prob.loss, prob.rp.theta0, prob.rp.theta1
    h_p, J_p = sc.score_grads(prob.X_pos[sampled])
    h_b = sc.scores(prob.X_neg[batch])
    h_bt, J_bt = sc.score_grads(prob.X_neg[batch_tilde])
    s_i = state.s[sampled]

    L = loss(h_b[None, :] - h_p[:, None])
    g_hat = np.mean(s_i[:, None] + np.maximum(0.0, L - s_i[:, None]) / th1, axis=1)
    y_new = y_prox_update(state.y[sampled], g_hat, state.s_prime, th0, steps.alpha)

    T = h_bt[None, :] - h_p[:, None]
    active = loss(T) > s_i[:, None]
    B = len(batch_tilde)
    coef = np.where(active, loss.deriv(T), 0.0) / (B * th1)
    dws = coef @ J_bt - coef.sum(axis=1)[:, None] * J_p
    ds = 1.0 - active.sum(axis=1) / (B * th1)
    return primal_steps(state, sampled, y_new, dws, ds, prob.rp, steps, anchor, weight_decay)


def _bottom_top(prob: TPAUCProblem, scorer, n_bottom: int, n_top: int):
    h_pos = scorer.scores(prob.X_pos)
    h_neg = scorer.scores(prob.X_neg)
    # stable sorts break ties by smaller original index
    pos_order = np.argsort(h_pos, kind="stable")
    neg_order = np.argsort(-h_neg, kind="stable")
    return h_pos, h_neg, pos_order[:n_bottom], neg_order[:n_top]


def selection_sets(prob: TPAUCProblem, scorer):
    """Indices of the bottom-k1 positives and top-k2 negatives."""
    _, _, bot, top = _bottom_top(prob, scorer, prob.rp.k1, prob.rp.k2)
    return bot, top


def exact_objective_eq1(prob: TPAUCProblem, scorer) -> float:
    """Exact TPAUC surrogate: sum of pair losses over selected pairs / (n+ n-)."""
    rp = prob.rp
    h_pos, h_neg, bot, top = _bottom_top(prob, scorer, rp.k1, rp.k2)
    rows = kernels.excess_rowsums(h_pos[bot], h_neg[top], np.zeros(rp.k1), rp.k2,
                                  prob.loss.code, prob.loss.margin)
    return float(np.sum(rows) / (rp.n_pos * rp.n_neg))


def partial_min_eq2(prob: TPAUCProblem, scorer):
    """Minimize the compositional objective over (s, s') in closed form.

    Returns ``(s_star, s_prime_star, value)``.  Per positive, the inner
    threshold is the ``ceil(n- theta1)``-th largest pairwise loss, which
    minimizes the inner top-k average for integral and fractional
    ``n- theta1`` alike; the outer threshold is chosen the same way over
    the resulting ``g_i``.
    """
    rp, loss = prob.rp, prob.loss
    h_pos = scorer.scores(prob.X_pos)
    h_neg_desc = np.sort(scorer.scores(prob.X_neg))[::-1].copy()
    s_star = loss(h_neg_desc[rp.q2 - 1] - h_pos)
    excess = kernels.excess_rowsums(h_pos, h_neg_desc, s_star, rp.n_neg, loss.code, loss.margin)
    g = s_star + excess / (rp.n_neg * rp.theta1)
    s_prime = float(np.sort(g)[::-1][rp.q1 - 1])
    value = s_prime + float(np.sum(np.maximum(0.0, g - s_prime))) / (rp.n_pos * rp.theta0)
    return s_star, s_prime, value


def objective_eq2(prob: TPAUCProblem, scorer, s, s_prime: float) -> float:
    """Full-batch compositional objective at an arbitrary (w, s, s')."""
    rp, loss = prob.rp, prob.loss
    s = np.asarray(s, dtype=np.float64)
    h_pos = scorer.scores(prob.X_pos)
    h_neg_desc = np.sort(scorer.scores(prob.X_neg))[::-1].copy()
    excess = kernels.excess_rowsums(h_pos, h_neg_desc, s, rp.n_neg, loss.code, loss.margin)
    g = s + excess / (rp.n_neg * rp.theta1)
    return float(s_prime + np.mean(np.maximum(0.0, g - s_prime)) / rp.theta0)

"""Training loops: STACO1, STACO2, cross-entropy and pairwise-AUC baselines."""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field, fields
from typing import Callable, NamedTuple, Sequence

import numpy as np

from . import core, kernels
from .core import (ConfigError, PrimalDualState, StageAnchor, StepSizes, SurrogateLoss,
                   TPAUCProblem)
from .data import Dataset
from .metrics import MetricError, tpauc_metric
from .rng import make_rng
from .scorers import LinearScorer, Scorer

TRACE_COLUMNS = ["iter", "obj_eq1", "obj_eq2min", "tpauc_05_05", "tpauc_075_075",
                 "w_norm", "s_prime", "stage_move", "ms"]


@dataclass
class StacoConfig:
    theta0: float = 0.5
    theta1: float = 0.5
    loss: SurrogateLoss = field(default_factory=SurrogateLoss)
    alpha: float = 0.1
    beta: float = 0.1
    eta: float = 0.1
    beta_prime: float = 0.1
    S: int = 32
    B: int = 32
    T: int = 3000
    K: int = 100
    gamma: float = 1000.0
    decay_milestones: tuple = ()
    decay_factor: float = 0.1
    weight_decay: float = 0.0
    seed: int = 0
    eval_every: int = 50
    record_time: bool = False

    @property
    def steps(self) -> StepSizes:
        return StepSizes(self.alpha, self.beta, self.eta, self.beta_prime)

    def replace(self, **kw) -> "StacoConfig":
        vals = {f.name: getattr(self, f.name) for f in fields(self)}
        vals.update(kw)
        return StacoConfig(**vals)

    def validate(self, n_pos: int, n_neg: int):
        for name in ("alpha", "beta", "eta", "beta_prime", "weight_decay"):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                raise ConfigError(f"{name} must be a finite non-negative number, got {v}")
        if not 1 <= self.S <= n_pos:
            raise ConfigError(f"S={self.S} must be in [1, n+={n_pos}]")
        if not 1 <= self.B <= n_neg:
            raise ConfigError(f"B={self.B} must be in [1, n-={n_neg}]")
        if self.T < 0 or self.K < 1 or self.eval_every < 1:
            raise ConfigError("T must be >= 0, K and eval_every >= 1")
        if not self.gamma > 0:
            raise ConfigError("gamma must be positive")
        if not 0 < self.decay_factor <= 1:
            raise ConfigError("decay_factor must be in (0, 1]")
        if list(self.decay_milestones) != sorted(self.decay_milestones):
            raise ConfigError("decay_milestones must be sorted ascending")
        core.RateParams(self.theta0, self.theta1, n_pos, n_neg)


def lr_schedule(steps: StepSizes, iteration: int, milestones: Sequence[int], factor: float) -> StepSizes:
    """Multiply every step size by ``factor`` once per milestone <= iteration."""
    n = sum(1 for m in milestones if m <= iteration)
    return steps if n == 0 else steps.scaled(factor ** n)


@dataclass
class TraceRecord:
    iter: int
    obj_eq1: float
    obj_eq2min: float
    tpauc_05_05: float
    tpauc_075_075: float
    w_norm: float
    s_prime: float
    stage_move: float = float("nan")
    ms: float | None = None


class TrainingTrace(list):
    """List of :class:`TraceRecord`, iterations strictly increasing."""

    def append(self, rec: TraceRecord):
        if self and rec.iter <= self[-1].iter:
            raise ValueError("trace iterations must increase")
        super().append(rec)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self], dtype=np.float64)

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(TRACE_COLUMNS)
        for r in self:
            row = []
            for c in TRACE_COLUMNS:
                v = getattr(r, c)
                if v is None:
                    row.append("")
                elif isinstance(v, float):
                    row.append(repr(v))
                else:
                    row.append(str(v))
            wr.writerow(row)
        return buf.getvalue()


def _safe_tpauc(scores, labels, t0, t1):
    try:
        return tpauc_metric(scores, labels, t0, t1)
    except MetricError:
        return float("nan")


class _Recorder:
    def __init__(self, prob: TPAUCProblem, cfg: StacoConfig):
        self.prob = prob
        self.cfg = cfg
        self.trace = TrainingTrace()
        self.t0 = time.perf_counter()

    def due(self, it_before: int, it_after: int, final: bool) -> bool:
        e = self.cfg.eval_every
        return final or it_after // e > it_before // e

    def record(self, it: int, scorer: Scorer, s_prime: float, stage_move=float("nan")):
        prob = self.prob
        scores = scorer.scores(prob.ds.features)
        ms = (time.perf_counter() - self.t0) * 1e3 if self.cfg.record_time else None
        self.trace.append(TraceRecord(
            iter=it,
            obj_eq1=core.exact_objective_eq1(prob, scorer),
            obj_eq2min=core.partial_min_eq2(prob, scorer)[2],
            tpauc_05_05=_safe_tpauc(scores, prob.ds.labels, 0.5, 0.5),
            tpauc_075_075=_safe_tpauc(scores, prob.ds.labels, 0.75, 0.75),
            w_norm=float(np.linalg.norm(scorer.params)),
            s_prime=float(s_prime),
            stage_move=float(stage_move),
            ms=ms,
        ))


class StacoResult(NamedTuple):
    scorer: Scorer
    s: np.ndarray
    s_prime: float
    trace: TrainingTrace
    last: PrimalDualState
    stage_moves: list


class _Stepper:
    """Samples one iteration's index sets and applies the update."""

    def __init__(self, prob: TPAUCProblem, scorer: Scorer, cfg: StacoConfig, backend: str | None):
        self.prob = prob
        self.scorer = scorer
        self.cfg = cfg
        self.rng = make_rng(cfg.seed, "staco")
        fast = isinstance(scorer, LinearScorer) and not scorer.bias
        if backend is None:
            backend = kernels.BACKEND if fast else "generic"
        if backend != "generic" and not fast:
            raise ValueError("compiled kernels only support bias-free linear scorers")
        self.backend = backend
        self._k = None if backend == "generic" else kernels.get_backend(backend)

    def sample(self):
        p = self.prob
        r = self.rng
        sampled = np.sort(r.choice(p.n_pos, self.cfg.S, replace=False)).astype(np.intp)
        batch = r.choice(p.n_neg, self.cfg.B, replace=False).astype(np.intp)
        batch_tilde = r.choice(p.n_neg, self.cfg.B, replace=False).astype(np.intp)
        return sampled, batch, batch_tilde

    def step(self, state: PrimalDualState, steps: StepSizes, anchor: StageAnchor | None):
        sampled, batch, batch_tilde = self.sample()
        cfg, p = self.cfg, self.prob
        if self._k is None:
            core.staco_step(p, self.scorer, state, sampled, batch, batch_tilde, steps,
                            anchor, cfg.weight_decay)
            return state
        if anchor is None:
            wa = sa = None
            inv_g = 0.0
        else:
            wa, sa, inv_g = anchor.w_anchor, anchor.s_anchor, 1.0 / anchor.gamma
        state.s_prime = self._k.linear_step(
            p.X_pos, p.X_neg, state.params, state.s, state.y, float(state.s_prime),
            sampled, batch, batch_tilde, p.rp.theta0, p.rp.theta1, p.loss.code, p.loss.margin,
            steps.alpha, steps.beta, steps.eta, steps.beta_prime, cfg.weight_decay,
            wa, sa, inv_g)
        return state


def _init_state(scorer: Scorer, n_pos: int) -> PrimalDualState:
    return PrimalDualState.initial(scorer.params, n_pos)


def staco1_train(ds: Dataset, cfg: StacoConfig, scorer_init: Scorer, *, backend: str | None = None,
                 callback: Callable[[int, PrimalDualState], None] | None = None) -> StacoResult:
    """STACO1: single-loop primal-dual double block-coordinate method.

    Returns the uniform average of the iterates ``w_1 .. w_T`` (and of s,
    s'), the last iterate, and a trace of the current iterate (the
    training curve).  ``backend`` picks ``"cython"``, ``"python"`` or
    ``"generic"``.
    """
    prob = TPAUCProblem(ds, cfg.theta0, cfg.theta1, cfg.loss)
    cfg.validate(prob.n_pos, prob.n_neg)
    stepper = _Stepper(prob, scorer_init, cfg, backend)
    state = _init_state(scorer_init, prob.n_pos)
    rec = _Recorder(prob, cfg)
    if cfg.T == 0:
        return StacoResult(scorer_init, state.s.copy(), state.s_prime, rec.trace, state, [])

    w_sum = np.zeros_like(state.params)
    s_sum = np.zeros_like(state.s)
    sp_sum = 0.0
    for t in range(cfg.T):
        steps = lr_schedule(cfg.steps, t, cfg.decay_milestones, cfg.decay_factor)
        stepper.step(state, steps, None)
        w_sum += state.params
        s_sum += state.s
        sp_sum += state.s_prime
        if callback is not None:
            callback(t, state)
        if rec.due(t, t + 1, t + 1 == cfg.T):
            rec.record(t + 1, scorer_init.with_params(state.params), state.s_prime)
    T = cfg.T
    return StacoResult(scorer_init.with_params(w_sum / T), s_sum / T, sp_sum / T,
                       rec.trace, state, [])


def staco2_train(ds: Dataset, cfg: StacoConfig, scorer_init: Scorer, *, backend: str | None = None,
                 callback: Callable[[int, PrimalDualState], None] | None = None) -> StacoResult:
    """STACO2: proximally guided stages of anchored STACO1 steps.

    ``cfg.T`` counts stages and ``cfg.K`` inner iterations per stage.  Each
    stage restarts y at one, anchors (w, s) at the stage start and hands
    the average of its inner iterates to the next stage.  Step-size decay
    milestones refer to the global inner-iteration counter.
    """
    prob = TPAUCProblem(ds, cfg.theta0, cfg.theta1, cfg.loss)
    cfg.validate(prob.n_pos, prob.n_neg)
    stepper = _Stepper(prob, scorer_init, cfg, backend)
    state = _init_state(scorer_init, prob.n_pos)
    rec = _Recorder(prob, cfg)
    moves = []
    it = 0
    for t in range(cfg.T):
        state.y[:] = 1.0
        anchor = StageAnchor(state.params.copy(), state.s.copy(), cfg.gamma)
        w_sum = np.zeros_like(state.params)
        s_sum = np.zeros_like(state.s)
        sp_sum = 0.0
        for _ in range(cfg.K):
            steps = lr_schedule(cfg.steps, it, cfg.decay_milestones, cfg.decay_factor)
            stepper.step(state, steps, anchor)
            w_sum += state.params
            s_sum += state.s
            sp_sum += state.s_prime
            if callback is not None:
                callback(it, state)
            it += 1
        state.params = w_sum / cfg.K
        state.s = s_sum / cfg.K
        state.s_prime = sp_sum / cfg.K
        move = float(np.linalg.norm(state.params - anchor.w_anchor)) / cfg.gamma
        moves.append(move)
        if rec.due(it - cfg.K, it, t + 1 == cfg.T):
            rec.record(it, scorer_init.with_params(state.params), state.s_prime, move)
    return StacoResult(scorer_init.with_params(state.params), state.s.copy(), state.s_prime,
                       rec.trace, state, moves)


class BaselineResult(NamedTuple):
    scorer: Scorer
    trace: TrainingTrace
    losses: np.ndarray  # per-iteration minibatch training loss


def _ce_loss_and_dscore(scorer: Scorer, scores, labels):
    yb = (labels > 0).astype(np.float64)
    if scorer.kind == "mlp":
        p = np.clip(scores, 1e-12, 1 - 1e-12)
        loss = -(yb * np.log(p) + (1 - yb) * np.log1p(-p))
        return loss, (p - yb) / (p * (1 - p))
    m = np.where(labels > 0, 1.0, -1.0)
    z = -m * scores
    return np.logaddexp(0.0, z), -m * 0.5 * (1.0 + np.tanh(0.5 * z))


def baseline_ce_train(ds: Dataset, cfg: StacoConfig, scorer_init: Scorer) -> BaselineResult:
    """Minibatch SGD on per-example cross-entropy; batch size ``S + B``, step ``eta``."""
    prob = TPAUCProblem(ds, cfg.theta0, cfg.theta1, cfg.loss)
    cfg.validate(prob.n_pos, prob.n_neg)
    rng = make_rng(cfg.seed, "ce")
    rec = _Recorder(prob, cfg)
    scorer = scorer_init.with_params(scorer_init.params)
    X, labels = ds.features, ds.labels
    size = min(cfg.S + cfg.B, ds.n)
    losses = np.empty(cfg.T)
    for t in range(cfg.T):
        eta = lr_schedule(cfg.steps, t, cfg.decay_milestones, cfg.decay_factor).eta
        idx = rng.choice(ds.n, size, replace=False)
        sc, J = scorer.score_grads(X[idx])
        loss, dsc = _ce_loss_and_dscore(scorer, sc, labels[idx])
        losses[t] = loss.mean()
        grad = dsc @ J / size + cfg.weight_decay * scorer.params
        scorer = scorer.with_params(scorer.params - eta * grad)
        if rec.due(t, t + 1, t + 1 == cfg.T):
            rec.record(t + 1, scorer, float("nan"))
    return BaselineResult(scorer, rec.trace, losses)


def pairwise_grad(prob: TPAUCProblem, scorer: Scorer, sampled, batch) -> np.ndarray:
    """Gradient of the mean pairwise surrogate over ``sampled x batch``."""
    h_p, J_p = scorer.score_grads(prob.X_pos[sampled])
    h_n, J_n = scorer.score_grads(prob.X_neg[batch])
    c = prob.loss.deriv(h_n[None, :] - h_p[:, None]) / (len(sampled) * len(batch))
    return c.sum(axis=0) @ J_n - c.sum(axis=1) @ J_p


def baseline_auc_pairwise_train(ds: Dataset, cfg: StacoConfig, scorer_init: Scorer) -> BaselineResult:
    """SGD on the mean pairwise surrogate over S positives x B negatives."""
    prob = TPAUCProblem(ds, cfg.theta0, cfg.theta1, cfg.loss)
    cfg.validate(prob.n_pos, prob.n_neg)
    rng = make_rng(cfg.seed, "auc_pairwise")
    rec = _Recorder(prob, cfg)
    scorer = scorer_init.with_params(scorer_init.params)
    losses = np.empty(cfg.T)
    for t in range(cfg.T):
        eta = lr_schedule(cfg.steps, t, cfg.decay_milestones, cfg.decay_factor).eta
        sampled = rng.choice(prob.n_pos, cfg.S, replace=False)
        batch = rng.choice(prob.n_neg, cfg.B, replace=False)
        h_p = scorer.scores(prob.X_pos[sampled])
        h_n = scorer.scores(prob.X_neg[batch])
        losses[t] = prob.loss(h_n[None, :] - h_p[:, None]).mean()
        grad = pairwise_grad(prob, scorer, sampled, batch) + cfg.weight_decay * scorer.params
        scorer = scorer.with_params(scorer.params - eta * grad)
        if rec.due(t, t + 1, t + 1 == cfg.T):
            rec.record(t + 1, scorer, float("nan"))
    return BaselineResult(scorer, rec.trace, losses)


def full_batch_subgradient(prob: TPAUCProblem, d: int, iters: int = 50_000, step: float = 1.0,
                           eval_every: int = 10):
    """Deterministic subgradient method on the compositional objective.

    Linear scorer, all positives and negatives every iteration, step
    ``step / sqrt(t + 1)``.  Returns ``(best_w, best_eq1)`` where the best
    iterate is judged by the exact objective (which equals the
    compositional objective minimized over the thresholds, up to the
    constant factor theta0 * theta1 for integral rates).
    """
    Xp, Xn = prob.X_pos, prob.X_neg
    loss, th0, th1 = prob.loss, prob.rp.theta0, prob.rp.theta1
    n_pos, n_neg = prob.n_pos, prob.n_neg
    w = np.zeros(d)
    s = np.ones(n_pos)
    sp = 1.0
    scorer = LinearScorer(d)
    best_w, best = w.copy(), core.exact_objective_eq1(prob, scorer)
    for t in range(iters):
        hp, hn = Xp @ w, Xn @ w
        T = hn[None, :] - hp[:, None]
        L = loss(T)
        act = L > s[:, None]
        g = s + np.maximum(0.0, L - s[:, None]).sum(axis=1) / (n_neg * th1)
        outer = g > sp
        coef = np.where(act, loss.deriv(T), 0.0) * outer[:, None] / (n_pos * th0 * n_neg * th1)
        gw = coef.sum(axis=0) @ Xn - coef.sum(axis=1) @ Xp
        gs = outer * (1.0 - act.sum(axis=1) / (n_neg * th1)) / (n_pos * th0)
        gsp = 1.0 - outer.sum() / (n_pos * th0)
        lr = step / math.sqrt(t + 1)
        w = w - lr * gw
        s = s - lr * n_pos * gs   # per-coordinate scale: each s_i only sees 1/n+ of F
        sp = sp - lr * gsp
        if (t + 1) % eval_every == 0:
            v = core.exact_objective_eq1(prob, scorer.with_params(w))
            if v < best:
                best, best_w = v, w.copy()
    return best_w, best

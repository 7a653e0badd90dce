"""Self-contained numerical cross-checks on tiny built-in instances.

Each check compares a production code path against an independent
computation (subset enumeration, grid search, pair enumeration, finite
differences) and reports the measured discrepancy next to its tolerance.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import core, metrics
from .core import PrimalDualState, SurrogateLoss, TPAUCProblem
from .data import Dataset
from .scorers import LinearScorer, MlpScorer


@dataclass
class OracleResult:
    name: str
    passed: bool
    measured: float
    tolerance: float
    detail: str = ""

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag} {self.name}: measured={self.measured:.3e} tol={self.tolerance:.1e} {self.detail}".rstrip()


def _dataset(pos_rows, neg_rows) -> Dataset:
    X = np.vstack([pos_rows, neg_rows])
    y = np.r_[np.ones(len(pos_rows), np.int8), -np.ones(len(neg_rows), np.int8)]
    return Dataset(X, y)


def tiny_instance():
    """4 positives x 5 negatives on a 1-d feature scored by w = 1 (no ties)."""
    pos = np.array([[0.3], [1.2], [-0.4], [0.8]])
    neg = np.array([[0.1], [0.9], [-1.0], [0.5], [0.2]])
    return _dataset(pos, neg), LinearScorer(1, [1.0])


def check_unbiasedness(seed: int = 0) -> OracleResult:
    """Mean of the minibatch g over all size-2 subsets of 6 negatives equals full g."""
    rng = np.random.default_rng(seed)
    ds = _dataset(rng.normal(size=(3, 4)) + 0.5, rng.normal(size=(6, 4)))
    worst = 0.0
    for kind in ("squared_hinge", "hinge", "logistic"):
        prob = TPAUCProblem(ds, 0.5, 0.5, SurrogateLoss(kind, 0.5))
        scorer = LinearScorer(4)
        state = PrimalDualState(rng.normal(size=4), rng.uniform(0, 1.5, size=3), 0.3, np.ones(3))
        for i in range(3):
            full = core.g_full(prob, scorer, state, i)
            vals = [core.g_minibatch(prob, scorer, state, i, list(b))
                    for b in itertools.combinations(range(6), 2)]
            worst = max(worst, abs(float(np.mean(vals)) - full))
    tol = 1e-12
    return OracleResult("minibatch_unbiasedness", worst <= tol, worst, tol, "(15 subsets, n-=6, B=2)")


def check_dual_prox(n: int = 1000, seed: int = 0) -> OracleResult:
    """Closed-form y update vs grid argmax over [0, 1] with step 1e-4."""
    rng = np.random.default_rng(seed)
    grid = np.linspace(0.0, 1.0, 10_001)
    worst = 0.0
    for _ in range(n):
        y0 = rng.uniform()
        g, sp = rng.normal(scale=2.0, size=2)
        theta0 = rng.uniform(0.1, 1.0)
        alpha = 10 ** rng.uniform(-3, 1)
        closed = float(core.y_prox_update(y0, g, sp, theta0, alpha))
        obj = grid * (g - sp) / theta0 - (grid - y0) ** 2 / (2 * alpha)
        worst = max(worst, abs(closed - grid[np.argmax(obj)]))
    tol = 1e-4
    return OracleResult("dual_prox_closed_form", worst <= tol, worst, tol, f"({n} instances)")


def grid_min_eq2(prob: TPAUCProblem, scorer, step: float = 1e-3) -> float:
    """Grid-search minimum of the compositional objective over (s, s').

    The objective is non-decreasing in each g_i, so for every s' the best
    s^(i) minimizes g_i alone; this reduces the search to 1-d grids.
    """
    rp = prob.rp
    h_pos = scorer.scores(prob.X_pos)
    h_neg = scorer.scores(prob.X_neg)
    L = prob.loss(h_neg[None, :] - h_pos[:, None])
    g_best = np.empty(rp.n_pos)
    for i in range(rp.n_pos):
        s = np.arange(L[i].min() - 0.01, L[i].max() + 0.01, step)
        g = s + np.maximum(0.0, L[i][None, :] - s[:, None]).sum(axis=1) / (rp.n_neg * rp.theta1)
        g_best[i] = g.min()
    sp = np.arange(g_best.min() - 0.01, g_best.max() + 0.01, step)
    vals = sp + np.maximum(0.0, g_best[None, :] - sp[:, None]).sum(axis=1) / (rp.n_pos * rp.theta0)
    return float(vals.min())


def check_scaling() -> list[OracleResult]:
    ds, scorer = tiny_instance()
    prob = TPAUCProblem(ds, 0.5, 0.4)
    eq1 = core.exact_objective_eq1(prob, scorer)
    _, _, eq2 = core.partial_min_eq2(prob, scorer)
    th = prob.rp.theta0 * prob.rp.theta1
    gap = abs(eq2 * th - eq1)
    grid = grid_min_eq2(prob, scorer)
    return [
        OracleResult("objective_scaling", gap <= 1e-10, gap, 1e-10,
                     f"(ratio eq2/eq1={eq2 / eq1:.10g}, predicted 1/(theta0*theta1)={1 / th:.10g})"),
        OracleResult("eq2_grid_oracle", abs(grid - eq2) <= 2e-3, abs(grid - eq2), 2e-3,
                     f"(closed form {eq2:.6g}, grid {grid:.6g})"),
    ]


def _kink_free_point(rng, kind, scorer_kind):
    loss = SurrogateLoss(kind, 0.5)
    while True:
        d = 3
        ds = _dataset(rng.normal(size=(2, d)) + 0.3, rng.normal(size=(6, d)))
        prob = TPAUCProblem(ds, 0.5, 0.5, loss)
        if scorer_kind == "linear":
            scorer = LinearScorer(d)
            params = rng.normal(size=d)
        else:
            scorer = MlpScorer(d, 4)
            params = rng.normal(scale=1.0, size=scorer.n_params)
        sc = scorer.with_params(params)
        batch = rng.choice(6, size=4, replace=False)
        t = sc.scores(prob.X_neg[batch]) - sc.scores(prob.X_pos[0:1])[0]
        L = loss(t)
        s_i = rng.uniform(L.min() - 0.2, L.max() + 0.2)
        if np.min(np.abs(L - s_i)) < 1e-3:
            continue
        if kind != "logistic" and np.min(np.abs(loss.margin + t)) < 1e-3:
            continue
        state = PrimalDualState(params, np.array([s_i, 0.0]), 0.0, np.ones(2))
        return prob, scorer, state, batch


def subgrad_fd_error(prob, scorer, state, batch, i=0, eps=1e-6, perturb=0.0) -> float:
    """Max-norm error of (dw, ds) against central differences, relative to the analytic max-norm."""
    dw, ds = core.g_subgrads(prob, scorer, state, i, batch)
    analytic = np.r_[dw, ds] + perturb
    fd = np.empty_like(analytic)
    for k in range(len(analytic)):
        plus, minus = state.copy(), state.copy()
        if k < len(dw):
            plus.params[k] += eps
            minus.params[k] -= eps
        else:
            plus.s[i] += eps
            minus.s[i] -= eps
        fd[k] = (core.g_minibatch(prob, scorer, plus, i, batch)
                 - core.g_minibatch(prob, scorer, minus, i, batch)) / (2 * eps)
    return float(np.max(np.abs(analytic - fd)) / max(np.max(np.abs(analytic)), 1e-12))


def check_subgradients(n_points: int = 200, seed: int = 0, perturb: float = 0.0) -> list[OracleResult]:
    rng = np.random.default_rng(seed)
    kinds = ("squared_hinge", "hinge", "logistic")
    out = []
    tol = 1e-5
    for scorer_kind in ("linear", "mlp"):
        worst = 0.0
        for p in range(n_points):
            prob, scorer, state, batch = _kink_free_point(rng, kinds[p % 3], scorer_kind)
            worst = max(worst, subgrad_fd_error(prob, scorer, state, batch, perturb=perturb))
        out.append(OracleResult(f"subgradient_fd_{scorer_kind}", worst < tol, worst, tol,
                                f"({n_points} kink-free points)"))
    return out


def brute_force_auc(scores, labels) -> float:
    pos = [s for s, y in zip(scores, labels) if y > 0]
    neg = [s for s, y in zip(scores, labels) if y <= 0]
    twice = sum(2 if p > q else 1 if p == q else 0 for p in pos for q in neg)
    return twice / (2 * len(pos) * len(neg))


def check_auc(n_instances: int = 100, seed: int = 0) -> list[OracleResult]:
    rng = np.random.default_rng(seed)
    worst_exact = 0.0
    worst_trap = 0.0
    for _ in range(n_instances):
        while True:
            labels = np.where(rng.uniform(size=20) < 0.4, 1, -1)
            if 0 < (labels > 0).sum() < 20:
                break
        # coarse rounding produces ties
        scores = np.round(rng.normal(size=20), 1)
        a = metrics.auc(scores, labels)
        worst_exact = max(worst_exact, abs(a - brute_force_auc(scores, labels)))
        worst_trap = max(worst_trap, abs(metrics.trapezoid_area(metrics.roc_points(scores, labels)) - a))
    return [
        OracleResult("auc_pair_enumeration", worst_exact == 0.0, worst_exact, 0.0,
                     f"({n_instances} instances, exact)"),
        OracleResult("roc_trapezoid_area", worst_trap <= 1e-12, worst_trap, 1e-12),
    ]


ORACLES = {
    "unbiasedness": lambda **kw: [check_unbiasedness()],
    "prox": lambda **kw: [check_dual_prox()],
    "scaling": lambda **kw: check_scaling(),
    "subgrad": lambda perturb=0.0, **kw: check_subgradients(perturb=perturb),
    "auc": lambda **kw: check_auc(),
}


def run_oracles(names=None, perturb_subgrad: float = 0.0) -> list[OracleResult]:
    names = list(ORACLES) if not names else names
    results = []
    for name in names:
        if name not in ORACLES:
            raise KeyError(f"unknown oracle {name!r}; choose from {sorted(ORACLES)}")
        results.extend(ORACLES[name](perturb=perturb_subgrad))
    return results

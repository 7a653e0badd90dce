"""Empirical ranking metrics: two-way partial AUC, AUC and ROC points.

Pair counts are accumulated as integers (twice the Mann-Whitney U, so a
tie contributes 1) and divided once, which keeps results exact with
respect to brute-force pair enumeration.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

_ROUND_TOL = 1e-9


class MetricError(ValueError):
    pass


def _split(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise MetricError("scores and labels differ in length")
    pos = scores[labels > 0]
    neg = scores[labels <= 0]
    if len(pos) == 0 or len(neg) == 0:
        raise MetricError("need at least one positive and one negative")
    return pos, neg


def _twice_wins(pos, neg) -> int:
    neg = np.sort(neg)
    below = np.searchsorted(neg, pos, side="left")
    upto = np.searchsorted(neg, pos, side="right")
    return int(np.sum(below) * 2 + np.sum(upto - below))


def tpauc_metric(scores, labels, theta0: float, theta1: float) -> float:
    """Pairwise ranking accuracy over bottom-k1 positives x top-k2 negatives.

    ``k1 = floor(n+ * theta0)``, ``k2 = floor(n- * theta1)``; ties in score
    get half credit.  Selection ties are broken by smaller index.
    """
    pos, neg = _split(scores, labels)
    k1 = math.floor(len(pos) * theta0 + _ROUND_TOL)
    k2 = math.floor(len(neg) * theta1 + _ROUND_TOL)
    if k1 < 1 or k2 < 1:
        raise MetricError(f"rate parameters select no examples (k1={k1}, k2={k2})")
    bot = pos[np.argsort(pos, kind="stable")[:k1]]
    top = neg[np.argsort(-neg, kind="stable")[:k2]]
    return _twice_wins(bot, top) / (2 * k1 * k2)


def auc(scores, labels) -> float:
    """Mann-Whitney AUC with half credit for ties, O(n log n)."""
    pos, neg = _split(scores, labels)
    return _twice_wins(pos, neg) / (2 * len(pos) * len(neg))


def roc_points(scores, labels):
    """ROC staircase from (0, 0) to (1, 1), one vertex per distinct score."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos, neg = _split(scores, labels)
    order = np.argsort(-scores, kind="stable")
    s_sorted = scores[order]
    is_pos = labels[order] > 0
    tp = np.cumsum(is_pos)
    fp = np.cumsum(~is_pos)
    last = np.r_[s_sorted[1:] != s_sorted[:-1], True]
    fpr = np.r_[0.0, fp[last] / len(neg)]
    tpr = np.r_[0.0, tp[last] / len(pos)]
    return list(zip(fpr.tolist(), tpr.tolist()))


def roc_to_csv(points) -> str:
    return "fpr,tpr\n" + "".join(f"{f!r},{t!r}\n" for f, t in points)


def trapezoid_area(points) -> float:
    pts = np.asarray(points, dtype=np.float64)
    return float(np.sum(np.diff(pts[:, 0]) * (pts[1:, 1] + pts[:-1, 1]) / 2.0))


@dataclass
class MetricReport:
    tpauc: dict = field(default_factory=dict)   # "theta0,theta1" -> value
    auc: float = float("nan")
    n_pos: int = 0
    n_neg: int = 0

    def to_json(self) -> str:
        d = {"tpauc": self.tpauc, "auc": self.auc, "n_pos": self.n_pos, "n_neg": self.n_neg}
        return json.dumps(d, indent=2, sort_keys=True)


def rate_key(theta0: float, theta1: float) -> str:
    return f"{theta0:g},{theta1:g}"


def evaluate(scores, labels, rates=((0.5, 0.5), (0.75, 0.75))) -> MetricReport:
    pos, neg = _split(scores, labels)
    rep = MetricReport(auc=auc(scores, labels), n_pos=len(pos), n_neg=len(neg))
    for t0, t1 in rates:
        rep.tpauc[rate_key(t0, t1)] = tpauc_metric(scores, labels, t0, t1)
    return rep

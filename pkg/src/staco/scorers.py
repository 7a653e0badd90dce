"""Score functions h_w(x) with exact parameter gradients.

Both scorers keep their parameters as one flat float64 vector so the
optimizers can treat them uniformly.

Flattening order
----------------
LinearScorer : ``[w_1 .. w_d]`` then ``bias`` if enabled.
MlpScorer    : ``W1`` (h x d, row-major), ``b1`` (h), ``w2`` (h), ``b2``.
"""
from __future__ import annotations

import json

import numpy as np

from .rng import make_rng


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class Scorer:
    kind = "base"

    def __init__(self, params):
        self.params = np.array(params, dtype=np.float64)
        if self.params.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {self.params.shape}")
        if not np.all(np.isfinite(self.params)):
            raise ValueError("parameters must be finite")

    def _check(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.d:
            raise ValueError(f"feature dimension {X.shape[-1]} != scorer dimension {self.d}")
        return X

    def score(self, x) -> float:
        x = self._check(x)
        if x.ndim != 1:
            raise ValueError("score expects a single feature vector")
        return float(self.scores(x[None, :])[0])

    def score_grad(self, x):
        x = self._check(x)
        if x.ndim != 1:
            raise ValueError("score_grad expects a single feature vector")
        s, J = self.score_grads(x[None, :])
        return float(s[0]), J[0]

    def with_params(self, params) -> "Scorer":
        new = object.__new__(type(self))
        new.__dict__.update(self.__dict__)
        Scorer.__init__(new, params)
        return new

    def to_json(self) -> str:
        return json.dumps({"kind": self.kind, "shape": self.shape_meta(),
                           "params": self.params.tolist()})


class LinearScorer(Scorer):
    """h(x) = w.x (+ bias). No output squashing."""

    kind = "linear"

    def __init__(self, d: int, params=None, bias: bool = False):
        self.d = int(d)
        self.bias = bool(bias)
        self.n_params = self.d + int(self.bias)
        super().__init__(np.zeros(self.n_params) if params is None else params)

    @property
    def w(self):
        return self.params[:self.d]

    def shape_meta(self):
        return {"d": self.d, "bias": self.bias}

    def scores(self, X):
        X = self._check(X)
        s = X @ self.w
        if self.bias:
            s = s + self.params[-1]
        return s

    def score_grads(self, X):
        X = self._check(X)
        s = self.scores(X)
        J = np.hstack([X, np.ones((len(X), 1))]) if self.bias else X.copy()
        return s, J


class MlpScorer(Scorer):
    """sigmoid(w2 . tanh(W1 x + b1) + b2), output in (0, 1)."""

    kind = "mlp"

    def __init__(self, d: int, hidden: int = 8, params=None):
        if hidden < 1:
            raise ValueError("hidden width must be >= 1")
        self.d = int(d)
        self.hidden = int(hidden)
        self.n_params = self.hidden * self.d + 2 * self.hidden + 1
        super().__init__(np.zeros(self.n_params) if params is None else params)

    @classmethod
    def init_random(cls, d, hidden=8, seed=0, scale=0.1):
        rng = make_rng(seed, "mlp_init")
        n = hidden * d + 2 * hidden + 1
        return cls(d, hidden, rng.uniform(-scale, scale, size=n))

    def shape_meta(self):
        return {"d": self.d, "hidden": self.hidden}

    def unflatten(self, p=None):
        p = self.params if p is None else p
        h, d = self.hidden, self.d
        W1 = p[:h * d].reshape(h, d)
        b1 = p[h * d:h * d + h]
        w2 = p[h * d + h:h * d + 2 * h]
        b2 = p[-1]
        return W1, b1, w2, b2

    @staticmethod
    def flatten(W1, b1, w2, b2):
        return np.concatenate([np.ravel(W1), b1, w2, [b2]])

    def scores(self, X):
        X = self._check(X)
        W1, b1, w2, b2 = self.unflatten()
        return _sigmoid(np.tanh(X @ W1.T + b1) @ w2 + b2)

    def score_grads(self, X):
        X = self._check(X)
        W1, b1, w2, b2 = self.unflatten()
        a = np.tanh(X @ W1.T + b1)                 # (n, h)
        out = _sigmoid(a @ w2 + b2)
        dz = out * (1.0 - out)                      # d out / d logit
        da = dz[:, None] * w2 * (1.0 - a * a)       # d out / d pre-activation
        J = np.hstack([
            (da[:, :, None] * X[:, None, :]).reshape(len(X), -1),
            da,
            dz[:, None] * a,
            dz[:, None],
        ])
        return out, J


def from_json(text: str) -> Scorer:
    obj = json.loads(text)
    meta = obj["shape"]
    if obj["kind"] == "linear":
        return LinearScorer(meta["d"], obj["params"], bias=meta.get("bias", False))
    if obj["kind"] == "mlp":
        return MlpScorer(meta["d"], meta["hidden"], obj["params"])
    raise ValueError(f"unknown scorer kind {obj['kind']!r}")


def finite_diff_check(scorer: Scorer, x, eps: float) -> float:
    """Max over parameters of |analytic - central difference| / (|analytic| + eps)."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    _, g = scorer.score_grad(x)
    p0 = scorer.params
    fd = np.empty_like(p0)
    for k in range(len(p0)):
        e = np.zeros_like(p0)
        e[k] = eps
        fd[k] = (scorer.with_params(p0 + e).score(x) - scorer.with_params(p0 - e).score(x)) / (2 * eps)
    return float(np.max(np.abs(g - fd) / (np.abs(g) + eps)))

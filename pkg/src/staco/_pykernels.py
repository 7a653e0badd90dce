"""Pure numpy kernels. Same signatures and semantics as ``_ckernels``."""
import numpy as np

_CHUNK = 1 << 22  # max pair entries materialized at once


def _loss(t, code, c):
    if code == 0:
        return np.maximum(0.0, c + t) ** 2
    if code == 1:
        return np.maximum(0.0, c + t)
    return np.logaddexp(0.0, t)


def _deriv(t, code, c):
    if code == 0:
        return 2.0 * np.maximum(0.0, c + t)
    if code == 1:
        return (c + t > 0).astype(np.float64)
    return 0.5 * (1.0 + np.tanh(0.5 * t))


def excess_rowsums(h_pos, h_neg_desc, thr, limit, code, margin):
    """Per row i: sum over the first ``limit`` negatives of max(0, loss_ij - thr_i)."""
    h_pos = np.asarray(h_pos, dtype=np.float64)
    h_neg = np.asarray(h_neg_desc, dtype=np.float64)[:limit]
    thr = np.asarray(thr, dtype=np.float64)
    out = np.zeros(len(h_pos))
    if len(h_neg) == 0:
        return out
    rows = max(1, _CHUNK // len(h_neg))
    for lo in range(0, len(h_pos), rows):
        hi = slice(lo, lo + rows)
        L = _loss(h_neg[None, :] - h_pos[hi, None], code, margin)
        out[hi] = np.maximum(0.0, L - thr[hi, None]).sum(axis=1)
    return out


def linear_step(X_pos, X_neg, w, s, y, s_prime, sampled, batch, batch_tilde,
                theta0, theta1, code, margin, alpha, beta, eta, beta_prime,
                weight_decay, w_anchor, s_anchor, inv_gamma):
    """One STACO iteration for a linear scorer; updates w, s, y in place.

    Returns the new s'.
    """
    Xp = X_pos[sampled]
    Xbt = X_neg[batch_tilde]
    hp = Xp @ w
    hb = X_neg[batch] @ w
    hbt = Xbt @ w
    si = s[sampled]
    S, Bt = len(sampled), len(batch_tilde)

    L = _loss(hb[None, :] - hp[:, None], code, margin)
    g = np.mean(si[:, None] + np.maximum(0.0, L - si[:, None]) / theta1, axis=1)
    yn = np.clip(y[sampled] + alpha * (g - s_prime) / theta0, 0.0, 1.0)

    T = hbt[None, :] - hp[:, None]
    active = _loss(T, code, margin) > si[:, None]
    coef = np.where(active, _deriv(T, code, margin), 0.0) / (Bt * theta1)
    ds = 1.0 - active.sum(axis=1) / (Bt * theta1)
    gw = ((yn @ coef) @ Xbt - (yn * coef.sum(axis=1)) @ Xp) / S
    gs = yn * ds
    if w_anchor is not None:
        gw = gw + inv_gamma * (w - w_anchor)
        gs = gs + inv_gamma * (si - s_anchor[sampled])
    w -= (eta / theta0) * gw + eta * weight_decay * w
    s[sampled] = si - (beta / theta0) * gs
    y[sampled] = yn
    return s_prime - beta_prime * (1.0 - yn.sum() / (theta0 * S))

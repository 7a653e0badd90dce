# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels; see _pykernels for the reference numpy versions."""
import numpy as np

from libc.math cimport exp, log1p, tanh


cdef inline double _loss(double t, int code, double c) noexcept nogil:
    cdef double u
    if code == 0:
        u = c + t
        return u * u if u > 0.0 else 0.0
    if code == 1:
        u = c + t
        return u if u > 0.0 else 0.0
    if t > 0.0:
        return t + log1p(exp(-t))
    return log1p(exp(t))


cdef inline double _deriv(double t, int code, double c) noexcept nogil:
    cdef double u
    if code == 0:
        u = c + t
        return 2.0 * u if u > 0.0 else 0.0
    if code == 1:
        return 1.0 if c + t > 0.0 else 0.0
    return 0.5 * (1.0 + tanh(0.5 * t))


def excess_rowsums(const double[::1] h_pos, const double[::1] h_neg_desc,
                   const double[::1] thr, Py_ssize_t limit, int code, double margin):
    cdef Py_ssize_t n = h_pos.shape[0]
    cdef Py_ssize_t m = min(limit, h_neg_desc.shape[0])
    cdef Py_ssize_t i, j
    cdef double hi, ti, acc, L
    out = np.zeros(n)
    cdef double[::1] o = out
    with nogil:
        for i in range(n):
            hi = h_pos[i]
            ti = thr[i]
            acc = 0.0
            for j in range(m):
                L = _loss(h_neg_desc[j] - hi, code, margin)
                # negatives are sorted descending, so the loss only decreases
                if L <= ti:
                    break
                acc = acc + (L - ti)
            o[i] = acc
    return out


def linear_step(const double[:, ::1] X_pos, const double[:, ::1] X_neg,
                double[::1] w, double[::1] s, double[::1] y, double s_prime,
                const Py_ssize_t[::1] sampled, const Py_ssize_t[::1] batch,
                const Py_ssize_t[::1] batch_tilde,
                double theta0, double theta1, int code, double margin,
                double alpha, double beta, double eta, double beta_prime,
                double weight_decay, w_anchor, s_anchor, double inv_gamma):
    cdef Py_ssize_t S = sampled.shape[0], B = batch.shape[0], Bt = batch_tilde.shape[0]
    cdef Py_ssize_t d = w.shape[0]
    cdef Py_ssize_t a, b, k, i, j
    cdef bint anchored = w_anchor is not None
    cdef const double[::1] wa
    cdef const double[::1] sa
    if anchored:
        wa = w_anchor
        sa = s_anchor
    hp_arr = np.empty(S)
    hb_arr = np.empty(B)
    hbt_arr = np.empty(Bt)
    colw_arr = np.zeros(Bt)
    rowc_arr = np.empty(S)
    yn_arr = np.empty(S)
    ds_arr = np.empty(S)
    gw_arr = np.zeros(d)
    cdef double[::1] hp = hp_arr, hb = hb_arr, hbt = hbt_arr, colw = colw_arr
    cdef double[::1] rowc = rowc_arr, yn = yn_arr, dsv = ds_arr, gw = gw_arr
    cdef double acc, si, hi, L, t, cf, rc, g, yv, ysum, cnt
    cdef double inv_bt = 1.0 / (Bt * theta1)

    with nogil:
        for a in range(S):
            i = sampled[a]
            acc = 0.0
            for k in range(d):
                acc = acc + X_pos[i, k] * w[k]
            hp[a] = acc
        for b in range(B):
            j = batch[b]
            acc = 0.0
            for k in range(d):
                acc = acc + X_neg[j, k] * w[k]
            hb[b] = acc
        for b in range(Bt):
            j = batch_tilde[b]
            acc = 0.0
            for k in range(d):
                acc = acc + X_neg[j, k] * w[k]
            hbt[b] = acc

        ysum = 0.0
        for a in range(S):
            i = sampled[a]
            si = s[i]
            hi = hp[a]
            acc = 0.0
            for b in range(B):
                L = _loss(hb[b] - hi, code, margin) - si
                acc = acc + si + (L / theta1 if L > 0.0 else 0.0)
            g = acc / B
            yv = y[i] + alpha * (g - s_prime) / theta0
            if yv < 0.0:
                yv = 0.0
            elif yv > 1.0:
                yv = 1.0
            yn[a] = yv
            ysum = ysum + yv
            rc = 0.0
            cnt = 0.0
            for b in range(Bt):
                t = hbt[b] - hi
                if _loss(t, code, margin) > si:
                    cnt = cnt + 1.0
                    cf = _deriv(t, code, margin) * inv_bt
                    rc = rc + cf
                    colw[b] = colw[b] + yv * cf
            rowc[a] = rc
            dsv[a] = 1.0 - cnt * inv_bt

        for b in range(Bt):
            cf = colw[b]
            if cf != 0.0:
                j = batch_tilde[b]
                for k in range(d):
                    gw[k] = gw[k] + cf * X_neg[j, k]
        for a in range(S):
            cf = yn[a] * rowc[a]
            if cf != 0.0:
                i = sampled[a]
                for k in range(d):
                    gw[k] = gw[k] - cf * X_pos[i, k]
        for k in range(d):
            g = gw[k] / S
            if anchored:
                g = g + inv_gamma * (w[k] - wa[k])
            w[k] = w[k] - (eta / theta0) * g - eta * weight_decay * w[k]
        for a in range(S):
            i = sampled[a]
            g = yn[a] * dsv[a]
            if anchored:
                g = g + inv_gamma * (s[i] - sa[i])
            s[i] = s[i] - (beta / theta0) * g
            y[i] = yn[a]
    return s_prime - beta_prime * (1.0 - ysum / (theta0 * S))

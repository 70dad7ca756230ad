"""Hot inner loops, each in two flavours.

``*_nb`` functions are plain loops compiled by numba; ``*_np`` functions are
vectorised numpy equivalents.  The public wrappers dispatch on
:data:`zonerec._accel.USE_NUMBA`.  Both flavours must agree bit-for-bit on
integer outputs and to float round-off on real ones; the test-suite checks
this directly.

Log-probabilities use ``NEG`` as the stand-in for minus infinity so that sums
of impossible terms stay finite and comparable.
"""

from __future__ import annotations

import math

import numpy as np

from . import _accel
from ._accel import njit

NEG = -1.0e30


# --------------------------------------------------------------------------
# left-to-right chain recursions
#
# A chain has S emitting states.  ``lself[s]`` is log a(s->s), ``lnext[s]``
# log a(s->s+1) (for the last state this is the exit probability), ``lskip[s]``
# log a(s->s+2).  Entry is always into state 0 at t = 0.
# --------------------------------------------------------------------------


@njit
def _lae(a, b):
    if a < b:
        a, b = b, a
    if b <= NEG:
        return a
    return a + math.log1p(math.exp(b - a))


@njit
def _forward_nb(logb, lself, lnext, lskip):
    T, S = logb.shape
    alpha = np.full((T, S), NEG)
    alpha[0, 0] = logb[0, 0]
    for t in range(1, T):
        for s in range(S):
            a = alpha[t - 1, s] + lself[s]
            if s >= 1:
                a = _lae(a, alpha[t - 1, s - 1] + lnext[s - 1])
            if s >= 2:
                a = _lae(a, alpha[t - 1, s - 2] + lskip[s - 2])
            a += logb[t, s]
            alpha[t, s] = a if a > NEG else NEG
    return alpha


@njit
def _backward_nb(logb, lself, lnext, lskip):
    T, S = logb.shape
    beta = np.full((T, S), NEG)
    beta[T - 1, S - 1] = lnext[S - 1]
    for t in range(T - 2, -1, -1):
        for s in range(S):
            b = lself[s] + logb[t + 1, s] + beta[t + 1, s]
            if s + 1 < S:
                b = _lae(b, lnext[s] + logb[t + 1, s + 1] + beta[t + 1, s + 1])
            if s + 2 < S:
                b = _lae(b, lskip[s] + logb[t + 1, s + 2] + beta[t + 1, s + 2])
            beta[t, s] = b if b > NEG else NEG
    return beta


@njit
def _viterbi_nb(logb, lself, lnext, lskip):
    T, S = logb.shape
    delta = np.full((T, S), NEG)
    back = np.zeros((T, S), dtype=np.int64)
    delta[0, 0] = logb[0, 0]
    for t in range(1, T):
        for s in range(S):
            best = delta[t - 1, s] + lself[s]
            arg = s
            if s >= 1:
                cand = delta[t - 1, s - 1] + lnext[s - 1]
                if cand > best:
                    best = cand
                    arg = s - 1
            if s >= 2:
                cand = delta[t - 1, s - 2] + lskip[s - 2]
                if cand > best:
                    best = cand
                    arg = s - 2
            v = best + logb[t, s]
            delta[t, s] = v if v > NEG else NEG
            back[t, s] = arg
    score = delta[T - 1, S - 1] + lnext[S - 1]
    path = np.zeros(T, dtype=np.int64)
    path[T - 1] = S - 1
    for t in range(T - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return score, path


def _shift(v, k):
    out = np.full_like(v, NEG)
    out[k:] = v[:-k]
    return out


def _forward_np(logb, lself, lnext, lskip):
    T, S = logb.shape
    alpha = np.full((T, S), NEG)
    alpha[0, 0] = logb[0, 0]
    nxt = lnext.copy()
    skp = lskip.copy()
    for t in range(1, T):
        prev = alpha[t - 1]
        a = prev + lself
        if S > 1:
            a = np.logaddexp(a, _shift(prev + nxt, 1))
        if S > 2:
            a = np.logaddexp(a, _shift(prev + skp, 2))
        alpha[t] = np.maximum(a + logb[t], NEG)
    return alpha


def _backward_np(logb, lself, lnext, lskip):
    T, S = logb.shape
    beta = np.full((T, S), NEG)
    beta[T - 1, S - 1] = lnext[S - 1]
    for t in range(T - 2, -1, -1):
        nb = logb[t + 1] + beta[t + 1]
        b = lself + nb
        if S > 1:
            tail = np.full(S, NEG)
            tail[:-1] = lnext[:-1] + nb[1:]
            b = np.logaddexp(b, tail)
        if S > 2:
            tail = np.full(S, NEG)
            tail[:-2] = lskip[:-2] + nb[2:]
            b = np.logaddexp(b, tail)
        beta[t] = np.maximum(b, NEG)
    return beta


def _viterbi_np(logb, lself, lnext, lskip):
    T, S = logb.shape
    delta = np.full((T, S), NEG)
    back = np.zeros((T, S), dtype=np.int64)
    delta[0, 0] = logb[0, 0]
    idx = np.arange(S)
    for t in range(1, T):
        prev = delta[t - 1]
        cands = np.full((3, S), NEG)
        cands[0] = prev + lself
        if S > 1:
            cands[1, 1:] = prev[:-1] + lnext[:-1]
        if S > 2:
            cands[2, 2:] = prev[:-2] + lskip[:-2]
        # first maximum wins, matching the strict ">" in the loop version
        k = np.argmax(cands, axis=0)
        delta[t] = np.maximum(cands[k, idx] + logb[t], NEG)
        back[t] = idx - k
    score = delta[T - 1, S - 1] + lnext[S - 1]
    path = np.zeros(T, dtype=np.int64)
    path[T - 1] = S - 1
    for t in range(T - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return score, path


def _chain_args(logb, lself, lnext, lskip):
    logb = np.ascontiguousarray(logb, dtype=np.float64)
    S = logb.shape[1]
    lself = np.ascontiguousarray(lself, dtype=np.float64)
    lnext = np.ascontiguousarray(lnext, dtype=np.float64)
    if lskip is None:
        lskip = np.full(S, NEG)
    lskip = np.ascontiguousarray(lskip, dtype=np.float64)
    return logb, lself, lnext, lskip


def chain_forward(logb, lself, lnext, lskip=None):
    """Log-domain forward matrix ``alpha[t, s]`` for a left-to-right chain."""
    args = _chain_args(logb, lself, lnext, lskip)
    return _forward_nb(*args) if _accel.USE_NUMBA else _forward_np(*args)


def chain_backward(logb, lself, lnext, lskip=None):
    args = _chain_args(logb, lself, lnext, lskip)
    return _backward_nb(*args) if _accel.USE_NUMBA else _backward_np(*args)


def chain_viterbi(logb, lself, lnext, lskip=None):
    """Best path score (including the exit arc) and its state sequence."""
    args = _chain_args(logb, lself, lnext, lskip)
    if _accel.USE_NUMBA:
        score, path = _viterbi_nb(*args)
    else:
        score, path = _viterbi_np(*args)
    return float(score), path


# --------------------------------------------------------------------------
# Zhang-Suen thinning followed by staircase removal
# --------------------------------------------------------------------------


@njit
def _zs_pass_nb(img, step):
    H, W = img.shape
    marks = np.zeros((H, W), dtype=np.uint8)
    n = 0
    for r in range(1, H - 1):
        for c in range(1, W - 1):
            if img[r, c] == 0:
                continue
            p2 = np.int64(img[r - 1, c])
            p3 = np.int64(img[r - 1, c + 1])
            p4 = np.int64(img[r, c + 1])
            p5 = np.int64(img[r + 1, c + 1])
            p6 = np.int64(img[r + 1, c])
            p7 = np.int64(img[r + 1, c - 1])
            p8 = np.int64(img[r, c - 1])
            p9 = np.int64(img[r - 1, c - 1])
            b = p2 + p3 + p4 + p5 + p6 + p7 + p8 + p9
            if b < 2 or b > 6:
                continue
            a = ((p2 == 0) & (p3 == 1)) + ((p3 == 0) & (p4 == 1)) + ((p4 == 0) & (p5 == 1)) \
                + ((p5 == 0) & (p6 == 1)) + ((p6 == 0) & (p7 == 1)) + ((p7 == 0) & (p8 == 1)) \
                + ((p8 == 0) & (p9 == 1)) + ((p9 == 0) & (p2 == 1))
            if a != 1:
                continue
            if step == 0:
                if p2 * p4 * p6 != 0 or p4 * p6 * p8 != 0:
                    continue
            else:
                if p2 * p4 * p8 != 0 or p2 * p6 * p8 != 0:
                    continue
            marks[r, c] = 1
            n += 1
    for r in range(H):
        for c in range(W):
            if marks[r, c]:
                img[r, c] = 0
    return n


@njit
def _stair_pass_nb(img, pr, pc):
    # one parity class; members are never 8-adjacent so order is irrelevant
    H, W = img.shape
    marks = np.zeros((H, W), dtype=np.uint8)
    n = 0
    for r in range(1 + ((pr - 1) % 2), H - 1, 2):
        for c in range(1 + ((pc - 1) % 2), W - 1, 2):
            if img[r, c] == 0:
                continue
            e = np.int64(img[r, c + 1])
            ne = np.int64(img[r - 1, c + 1])
            no = np.int64(img[r - 1, c])
            nw = np.int64(img[r - 1, c - 1])
            w = np.int64(img[r, c - 1])
            sw = np.int64(img[r + 1, c - 1])
            s = np.int64(img[r + 1, c])
            se = np.int64(img[r + 1, c + 1])
            b = e + ne + no + nw + w + sw + s + se
            if b < 2:
                continue
            corner = (no & e) | (e & s) | (s & w) | (w & no)
            if corner == 0:
                continue
            # Yokoi 8-connectivity number on complements
            xe = 1 - e
            xne = 1 - ne
            xn = 1 - no
            xnw = 1 - nw
            xw = 1 - w
            xsw = 1 - sw
            xs = 1 - s
            xse = 1 - se
            n8 = (xe - xe * xne * xn) + (xn - xn * xnw * xw) + (xw - xw * xsw * xs) + (xs - xs * xse * xe)
            if n8 != 1:
                continue
            marks[r, c] = 1
            n += 1
    for r in range(H):
        for c in range(W):
            if marks[r, c]:
                img[r, c] = 0
    return n


@njit
def _thin_nb(mask):
    H, W = mask.shape
    img = np.zeros((H + 2, W + 2), dtype=np.uint8)
    for r in range(H):
        for c in range(W):
            if mask[r, c]:
                img[r + 1, c + 1] = 1
    while True:
        n = _zs_pass_nb(img, 0)
        n += _zs_pass_nb(img, 1)
        if n == 0:
            break
    while True:
        n = 0
        for pr in range(2):
            for pc in range(2):
                n += _stair_pass_nb(img, pr, pc)
        if n == 0:
            break
    out = np.zeros((H, W), dtype=np.bool_)
    for r in range(H):
        for c in range(W):
            out[r, c] = img[r + 1, c + 1] == 1
    return out


def _neigh(img):
    """Eight neighbour planes of the interior of a padded uint8 image."""
    p2 = img[:-2, 1:-1]
    p3 = img[:-2, 2:]
    p4 = img[1:-1, 2:]
    p5 = img[2:, 2:]
    p6 = img[2:, 1:-1]
    p7 = img[2:, :-2]
    p8 = img[1:-1, :-2]
    p9 = img[:-2, :-2]
    return p2, p3, p4, p5, p6, p7, p8, p9


def _zs_pass_np(img, step):
    p2, p3, p4, p5, p6, p7, p8, p9 = (p.astype(np.int32) for p in _neigh(img))
    core = img[1:-1, 1:-1]
    b = p2 + p3 + p4 + p5 + p6 + p7 + p8 + p9
    seq = [p2, p3, p4, p5, p6, p7, p8, p9, p2]
    a = sum(((seq[k] == 0) & (seq[k + 1] == 1)).astype(np.int32) for k in range(8))
    if step == 0:
        c1 = p2 * p4 * p6 == 0
        c2 = p4 * p6 * p8 == 0
    else:
        c1 = p2 * p4 * p8 == 0
        c2 = p2 * p6 * p8 == 0
    m = (core == 1) & (b >= 2) & (b <= 6) & (a == 1) & c1 & c2
    core[m] = 0
    return int(m.sum())


def _stair_pass_np(img, pr, pc):
    no, ne, e, se, s, sw, w, nw = (p.astype(np.int32) for p in _neigh(img))
    core = img[1:-1, 1:-1]
    b = e + ne + no + nw + w + sw + s + se
    corner = (no & e) | (e & s) | (s & w) | (w & no)
    xe, xne, xn, xnw, xw, xsw, xs, xse = (1 - v for v in (e, ne, no, nw, w, sw, s, se))
    n8 = (xe - xe * xne * xn) + (xn - xn * xnw * xw) + (xw - xw * xsw * xs) + (xs - xs * xse * xe)
    m = (core == 1) & (b >= 2) & (corner == 1) & (n8 == 1)
    parity = np.zeros_like(m)
    parity[(pr - 1) % 2::2, (pc - 1) % 2::2] = True
    m &= parity
    core[m] = 0
    return int(m.sum())


def _thin_np(mask):
    img = np.pad(mask.astype(np.uint8), 1)
    while True:
        n = _zs_pass_np(img, 0)
        n += _zs_pass_np(img, 1)
        if n == 0:
            break
    while True:
        n = 0
        for pr in range(2):
            for pc in range(2):
                n += _stair_pass_np(img, pr, pc)
        if n == 0:
            break
    return img[1:-1, 1:-1].astype(bool)


def thin(mask: np.ndarray) -> np.ndarray:
    """Zhang-Suen skeleton of a boolean mask, cleaned of 4-connected stairs."""
    mask = np.ascontiguousarray(mask, dtype=np.bool_)
    if mask.size == 0:
        return mask.copy()
    return _thin_nb(mask) if _accel.USE_NUMBA else _thin_np(mask)


# --------------------------------------------------------------------------
# Levenshtein distance over integer symbol codes
# --------------------------------------------------------------------------


@njit
def _lev_nb(a, b):
    n = a.shape[0]
    m = b.shape[0]
    prev = np.arange(m + 1)
    cur = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        cur[0] = i
        for j in range(1, m + 1):
            cost = 0 if a[i - 1] == b[j - 1] else 1
            v = prev[j - 1] + cost
            if prev[j] + 1 < v:
                v = prev[j] + 1
            if cur[j - 1] + 1 < v:
                v = cur[j - 1] + 1
            cur[j] = v
        for j in range(m + 1):
            prev[j] = cur[j]
    return prev[m]


def _lev_np(a, b):
    m = b.shape[0]
    prev = np.arange(m + 1, dtype=np.int64)
    ar = np.arange(m + 1, dtype=np.int64)
    for i in range(1, a.shape[0] + 1):
        tmp = np.empty(m + 1, dtype=np.int64)
        tmp[0] = i
        tmp[1:] = np.minimum(prev[1:] + 1, prev[:-1] + (b != a[i - 1]))
        # insertion chain: cur[j] = min_k tmp[k] + (j - k)
        prev = np.minimum.accumulate(tmp - ar) + ar
    return prev[m]


def levenshtein_codes(a: np.ndarray, b: np.ndarray) -> int:
    a = np.ascontiguousarray(a, dtype=np.int64)
    b = np.ascontiguousarray(b, dtype=np.int64)
    if a.shape[0] == 0:
        return int(b.shape[0])
    if b.shape[0] == 0:
        return int(a.shape[0])
    return int(_lev_nb(a, b) if _accel.USE_NUMBA else _lev_np(a, b))


# --------------------------------------------------------------------------
# SMO for the C-SVC dual with maximal-violating-pair working sets
#
#   min  0.5 a'Qa - e'a   s.t.  0 <= a <= C,  y'a = 0,   Q = (y y') * K
# --------------------------------------------------------------------------

_TAU = 1e-12


@njit
def _smo_nb(K, y, C, tol, max_iter):
    n = y.shape[0]
    alpha = np.zeros(n)
    G = -np.ones(n)
    it = 0
    while it < max_iter:
        gmax = -np.inf
        gmin = np.inf
        i = -1
        j = -1
        for t in range(n):
            v = -y[t] * G[t]
            up = (y[t] > 0 and alpha[t] < C) or (y[t] < 0 and alpha[t] > 0)
            low = (y[t] > 0 and alpha[t] > 0) or (y[t] < 0 and alpha[t] < C)
            if up and v > gmax:
                gmax = v
                i = t
            if low and v < gmin:
                gmin = v
                j = t
        if i < 0 or j < 0 or gmax - gmin < tol:
            break
        it += 1
        ai = alpha[i]
        aj = alpha[j]
        Kii = K[i, i]
        Kjj = K[j, j]
        Kij = K[i, j]
        if y[i] != y[j]:
            quad = Kii + Kjj + 2.0 * (y[i] * y[j] * Kij)
            if quad <= 0:
                quad = _TAU
            delta = (-G[i] - G[j]) / quad
            diff = ai - aj
            ni = ai + delta
            nj = aj + delta
            if diff > 0:
                if nj < 0:
                    nj = 0.0
                    ni = diff
            else:
                if ni < 0:
                    ni = 0.0
                    nj = -diff
            if diff > 0:
                if ni > C:
                    ni = C
                    nj = C - diff
            else:
                if nj > C:
                    nj = C
                    ni = C + diff
        else:
            quad = Kii + Kjj - 2.0 * (y[i] * y[j] * Kij)
            if quad <= 0:
                quad = _TAU
            delta = (G[i] - G[j]) / quad
            s = ai + aj
            ni = ai - delta
            nj = aj + delta
            if s > C:
                if ni > C:
                    ni = C
                    nj = s - C
            else:
                if nj < 0:
                    nj = 0.0
                    ni = s
            if s > C:
                if nj > C:
                    nj = C
                    ni = s - C
            else:
                if ni < 0:
                    ni = 0.0
                    nj = s
        dai = ni - ai
        daj = nj - aj
        alpha[i] = ni
        alpha[j] = nj
        for t in range(n):
            G[t] += y[t] * (y[i] * K[i, t] * dai + y[j] * K[j, t] * daj)
    return alpha, G, it


def _smo_np(K, y, C, tol, max_iter):
    n = y.shape[0]
    alpha = np.zeros(n)
    G = -np.ones(n)
    ypos = y > 0
    it = 0
    while it < max_iter:
        v = -y * G
        up = (ypos & (alpha < C)) | (~ypos & (alpha > 0))
        low = (ypos & (alpha > 0)) | (~ypos & (alpha < C))
        if not up.any() or not low.any():
            break
        vu = np.where(up, v, -np.inf)
        vl = np.where(low, v, np.inf)
        i = int(np.argmax(vu))
        j = int(np.argmin(vl))
        if vu[i] - vl[j] < tol:
            break
        it += 1
        ai, aj = alpha[i], alpha[j]
        Kii, Kjj, Kij = K[i, i], K[j, j], K[i, j]
        if y[i] != y[j]:
            quad = Kii + Kjj + 2.0 * (y[i] * y[j] * Kij)
            if quad <= 0:
                quad = _TAU
            delta = (-G[i] - G[j]) / quad
            diff = ai - aj
            ni, nj = ai + delta, aj + delta
            if diff > 0:
                if nj < 0:
                    nj, ni = 0.0, diff
            elif ni < 0:
                ni, nj = 0.0, -diff
            if diff > 0:
                if ni > C:
                    ni, nj = C, C - diff
            elif nj > C:
                nj, ni = C, C + diff
        else:
            quad = Kii + Kjj - 2.0 * (y[i] * y[j] * Kij)
            if quad <= 0:
                quad = _TAU
            delta = (G[i] - G[j]) / quad
            s = ai + aj
            ni, nj = ai - delta, aj + delta
            if s > C:
                if ni > C:
                    ni, nj = C, s - C
            elif nj < 0:
                nj, ni = 0.0, s
            if s > C:
                if nj > C:
                    nj, ni = C, s - C
            elif ni < 0:
                ni, nj = 0.0, s
        dai, daj = ni - ai, nj - aj
        alpha[i], alpha[j] = ni, nj
        G += y * (y[i] * K[i] * dai + y[j] * K[j] * daj)
    return alpha, G, it


def smo_solve(K, y, C, tol=1e-3, max_iter=100_000):
    """Solve the SVM dual; returns ``(alpha, gradient, iterations)``."""
    K = np.ascontiguousarray(K, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    fn = _smo_nb if _accel.USE_NUMBA else _smo_np
    alpha, G, it = fn(K, y, float(C), float(tol), int(max_iter))
    return alpha, G, int(it)

# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled candidate-scoring kernel for PatchMatch.

Per pixel: score all K candidate offsets against the 9 scale pairs and
either pick the argmax (hard) or softmax-blend the candidates (soft).
Rows run in parallel under OpenMP; every write is pixel-private, so the
output is bitwise identical for any thread count.

Scoring a fixed offset at a fixed pixel is a pure function of the feature
maps, so the kernel can skip any evaluation whose outcome is already
known. Four exact shortcuts build on that once the field starts
converging: duplicate candidates (propagation of an already-uniform
region) reuse the first copy's score; the carry-over candidate reuses last
iteration's winner score, which also makes the prune bound tight from the
first challenger; candidates that were already scored last iteration at
this pixel are looked up in a per-pixel memo instead of being resampled
(entries scored exactly are reused verbatim; entries that were pruned
carry the bound "true score below last iteration's best", which the
carry-over makes at most the current best, so they provably lose); when a
target lands on an integer grid point the reverse triangle inequality on
precomputed L1 norms rejects whole scale levels without sampling a single
channel; and the L1 accumulation itself samples channels lazily, aborting
as soon as a candidate cannot beat the incumbent. None of this alters an
accumulated
value - only provably losing work is skipped - so winner selection and
reported scores are bitwise unchanged for any schedule or thread count.
"""

import numpy as np

cimport numpy as cnp
from cython.parallel cimport prange, threadid
from libc.math cimport exp, fabs, floor, INFINITY

cnp.import_array()

DEF MAX_CANDS = 64


cdef inline double _sample_ch(const double[:, :, ::1] fm,
                              Py_ssize_t y0, Py_ssize_t x0,
                              Py_ssize_t y1, Py_ssize_t x1,
                              double wx, double wy, int fast,
                              Py_ssize_t c) noexcept nogil:
    cdef double top, bot
    if fast:
        return fm[y0, x0, c]
    top = fm[y0, x0, c] * (1.0 - wx) + fm[y0, x1, c] * wx
    bot = fm[y1, x0, c] * (1.0 - wx) + fm[y1, x1, c] * wx
    return top * (1.0 - wy) + bot * wy


def evaluate_kernel(const double[:, :, :, ::1] cands,
                    const double[:, :, :, ::1] src,
                    const double[:, :, ::1] map0,
                    const double[:, :, ::1] map1,
                    const double[:, :, ::1] map2,
                    double s0, double s1, double s2,
                    double beta, double excl, int soft, int nthreads,
                    const double[:, ::1] prev_score,
                    const unsigned char[:, :, ::1] prev_pair,
                    int use_prev,
                    const double[:, :, :, ::1] memo_cands,
                    const double[:, :, ::1] memo_score,
                    const unsigned char[:, :, :, ::1] memo_pair,
                    const unsigned char[:, :, ::1] memo_exact,
                    int use_memo,
                    const double[:, ::1] nm0,
                    const double[:, ::1] nm1,
                    const double[:, ::1] nm2,
                    const double[:, :, ::1] snorm,
                    double[:, :, ::1] out_off,
                    double[:, ::1] out_score,
                    unsigned char[:, :, ::1] out_pair,
                    double[:, :, ::1] out_cscore,
                    unsigned char[:, :, :, ::1] out_cpair,
                    unsigned char[:, :, ::1] out_cexact):
    cdef Py_ssize_t h = cands.shape[0]
    cdef Py_ssize_t w = cands.shape[1]
    cdef Py_ssize_t kc = cands.shape[2]
    cdef Py_ssize_t kp = memo_cands.shape[2]
    cdef Py_ssize_t d = src.shape[3]
    if kc > MAX_CANDS:
        raise ValueError("too many candidates for the compiled kernel")
    if nthreads < 1:
        nthreads = 1

    # per-thread candidate score/route tables (function-scope C arrays
    # would be shared across OpenMP threads)
    sc_np = np.empty((nthreads, MAX_CANDS), dtype=np.float64)
    cdx_np = np.empty((nthreads, MAX_CANDS), dtype=np.float64)
    cdy_np = np.empty((nthreads, MAX_CANDS), dtype=np.float64)
    pn_np = np.zeros((nthreads, MAX_CANDS), dtype=np.uint8)
    pm_np = np.zeros((nthreads, MAX_CANDS), dtype=np.uint8)
    ex_np = np.zeros((nthreads, MAX_CANDS), dtype=np.uint8)
    cdef double[:, ::1] sc = sc_np
    cdef double[:, ::1] cdx = cdx_np
    cdef double[:, ::1] cdy = cdy_np
    cdef unsigned char[:, ::1] pn = pn_np
    cdef unsigned char[:, ::1] pmm = pm_np
    cdef unsigned char[:, ::1] ex = ex_np

    cdef double scales[3]
    scales[0] = s0
    scales[1] = s1
    scales[2] = s2

    if use_prev and not soft:
        if prev_score.shape[0] != h or prev_score.shape[1] != w:
            raise ValueError("prev_score shape mismatch")
        if prev_pair.shape[0] != h or prev_pair.shape[1] != w:
            raise ValueError("prev_pair shape mismatch")
    if use_memo:
        if not (use_prev and not soft):
            raise ValueError("memo requires hard mode with a previous result")
        if (memo_cands.shape[0] != h or memo_cands.shape[1] != w
                or memo_score.shape[2] != kp or memo_pair.shape[2] != kp
                or memo_exact.shape[2] != kp):
            raise ValueError("memo shape mismatch")

    cdef Py_ssize_t i, j, k, k2, m, c, c0, c1, tid, best_k, k_start, q, hit
    cdef Py_ssize_t x0, y0, x1, y1, hm, wm
    cdef double dx, dy, best_s, cur, lim, neg, tx, ty, nval, nb, nbt
    cdef double xf, yf, wx, wy, val, acc0, acc1, acc2, before
    cdef double wsum, wk, ox, oy
    cdef int dup, a0, a1, a2, fast, pruned
    cdef unsigned char cbn, cbm

    for i in prange(h, nogil=True, schedule="static", num_threads=nthreads):
        tid = threadid()
        for j in range(w):
            best_k = 0
            if use_prev == 1 and soft == 0:
                # carry-over candidate (index 0) is last iteration's winner;
                # its score and winning pair are already known exactly
                cdx[tid, 0] = cands[i, j, 0, 0]
                cdy[tid, 0] = cands[i, j, 0, 1]
                sc[tid, 0] = prev_score[i, j]
                pn[tid, 0] = prev_pair[i, j, 0]
                pmm[tid, 0] = prev_pair[i, j, 1]
                ex[tid, 0] = 1
                best_s = sc[tid, 0]
                k_start = 1
            else:
                best_s = -INFINITY
                k_start = 0
            for k in range(k_start, kc):
                dx = cands[i, j, k, 0]
                dy = cands[i, j, k, 1]
                cdx[tid, k] = dx
                cdy[tid, k] = dy
                # duplicate candidates reuse the earlier score verbatim
                dup = -1
                for k2 in range(k):
                    if cdx[tid, k2] == dx and cdy[tid, k2] == dy:
                        dup = k2
                        break
                if dup >= 0:
                    sc[tid, k] = sc[tid, dup]
                    pn[tid, k] = pn[tid, dup]
                    pmm[tid, k] = pmm[tid, dup]
                    ex[tid, k] = ex[tid, dup]
                    continue
                if fabs(dx) < excl and fabs(dy) < excl:
                    sc[tid, k] = -INFINITY
                    pn[tid, k] = 0
                    pmm[tid, k] = 0
                    ex[tid, k] = 1
                    continue
                if use_memo == 1:
                    hit = -1
                    for q in range(kp):
                        if (memo_cands[i, j, q, 0] == dx
                                and memo_cands[i, j, q, 1] == dy):
                            hit = q
                            break
                    if hit >= 0:
                        if memo_exact[i, j, hit] == 1:
                            # scored exactly last iteration; pure function
                            # of (pixel, offset), so reuse verbatim
                            sc[tid, k] = memo_score[i, j, hit]
                            pn[tid, k] = memo_pair[i, j, hit, 0]
                            pmm[tid, k] = memo_pair[i, j, hit, 1]
                            ex[tid, k] = 1
                            if sc[tid, k] > best_s:
                                best_s = sc[tid, k]
                                best_k = k
                            continue
                        elif best_s >= prev_score[i, j]:
                            # pruned last iteration: true score is below
                            # last iteration's best, hence below best_s,
                            # so it cannot win; keep the stored partial
                            # score (itself a lower bound under best_s)
                            sc[tid, k] = memo_score[i, j, hit]
                            pn[tid, k] = memo_pair[i, j, hit, 0]
                            pmm[tid, k] = memo_pair[i, j, hit, 1]
                            ex[tid, k] = 0
                            continue
                cur = -INFINITY
                cbn = 0
                cbm = 0
                pruned = 0
                before = best_s
                for m in range(3):
                    tx = (j + dx) * scales[m]
                    ty = (i + dy) * scales[m]
                    if m == 0:
                        hm = map0.shape[0]
                        wm = map0.shape[1]
                    elif m == 1:
                        hm = map1.shape[0]
                        wm = map1.shape[1]
                    else:
                        hm = map2.shape[0]
                        wm = map2.shape[1]
                    xf = tx
                    if xf < 0.0:
                        xf = 0.0
                    if xf > wm - 1.0:
                        xf = wm - 1.0
                    yf = ty
                    if yf < 0.0:
                        yf = 0.0
                    if yf > hm - 1.0:
                        yf = hm - 1.0
                    x0 = <Py_ssize_t>floor(xf)
                    y0 = <Py_ssize_t>floor(yf)
                    wx = xf - x0
                    wy = yf - y0
                    fast = 1 if (wx == 0.0 and wy == 0.0) else 0
                    x1 = x0 + 1
                    if x1 > wm - 1:
                        x1 = wm - 1
                    y1 = y0 + 1
                    if y1 > hm - 1:
                        y1 = hm - 1
                    # one shared prune bound for this level; the three
                    # source levels accumulate in lockstep per channel so
                    # each target channel is sampled at most once
                    lim = cur
                    if soft == 0 and best_s > lim:
                        lim = best_s
                    if fast == 1 and lim != -INFINITY:
                        # exact integer target: L1 >= |L1-norm difference|,
                        # so when even the closest source level cannot beat
                        # the bound, skip this level without sampling it
                        if m == 0:
                            nval = nm0[y0, x0]
                        elif m == 1:
                            nval = nm1[y0, x0]
                        else:
                            nval = nm2[y0, x0]
                        nb = fabs(snorm[0, i, j] - nval)
                        nbt = fabs(snorm[1, i, j] - nval)
                        if nbt < nb:
                            nb = nbt
                        nbt = fabs(snorm[2, i, j] - nval)
                        if nbt < nb:
                            nb = nbt
                        if nb > -lim:
                            pruned = 1
                            continue
                    acc0 = 0.0
                    acc1 = 0.0
                    acc2 = 0.0
                    a0 = 1
                    a1 = 1
                    a2 = 1
                    if lim == -INFINITY:
                        for c in range(d):
                            if m == 0:
                                val = _sample_ch(map0, y0, x0, y1, x1, wx, wy, fast, c)
                            elif m == 1:
                                val = _sample_ch(map1, y0, x0, y1, x1, wx, wy, fast, c)
                            else:
                                val = _sample_ch(map2, y0, x0, y1, x1, wx, wy, fast, c)
                            acc0 = acc0 + fabs(src[0, i, j, c] - val)
                            acc1 = acc1 + fabs(src[1, i, j, c] - val)
                            acc2 = acc2 + fabs(src[2, i, j, c] - val)
                    else:
                        # increments are nonnegative, so "exceeded the bound
                        # at some channel" and "exceeded it after the block"
                        # agree; checking per block instead of per channel
                        # keeps the inner loop branch-free
                        neg = -lim
                        for c0 in range(0, d, 4):
                            c1 = c0 + 4
                            if c1 > d:
                                c1 = d
                            for c in range(c0, c1):
                                if m == 0:
                                    val = _sample_ch(map0, y0, x0, y1, x1, wx, wy, fast, c)
                                elif m == 1:
                                    val = _sample_ch(map1, y0, x0, y1, x1, wx, wy, fast, c)
                                else:
                                    val = _sample_ch(map2, y0, x0, y1, x1, wx, wy, fast, c)
                                acc0 = acc0 + fabs(src[0, i, j, c] - val)
                                acc1 = acc1 + fabs(src[1, i, j, c] - val)
                                acc2 = acc2 + fabs(src[2, i, j, c] - val)
                            if acc0 > neg and acc1 > neg and acc2 > neg:
                                break
                        if acc0 > neg:
                            acc0 = INFINITY
                            pruned = 1
                        if acc1 > neg:
                            acc1 = INFINITY
                            pruned = 1
                        if acc2 > neg:
                            acc2 = INFINITY
                            pruned = 1
                    if -acc0 > cur:
                        cur = -acc0
                        cbn = 0
                        cbm = <unsigned char>m
                    if -acc1 > cur:
                        cur = -acc1
                        cbn = 1
                        cbm = <unsigned char>m
                    if -acc2 > cur:
                        cur = -acc2
                        cbn = 2
                        cbm = <unsigned char>m
                sc[tid, k] = cur
                pn[tid, k] = cbn
                pmm[tid, k] = cbm
                # the score is exact when nothing was pruned, and also when
                # the candidate beat the bound it was pruned against
                ex[tid, k] = 1 if (pruned == 0 or cur > before) else 0
                if cur > best_s:
                    best_s = cur
                    best_k = k
            # duplicates can only tie, so best_k stays at the lowest index
            out_score[i, j] = best_s
            out_pair[i, j, 0] = pn[tid, best_k]
            out_pair[i, j, 1] = pmm[tid, best_k]
            for k in range(kc):
                out_cscore[i, j, k] = sc[tid, k]
                out_cpair[i, j, k, 0] = pn[tid, k]
                out_cpair[i, j, k, 1] = pmm[tid, k]
                out_cexact[i, j, k] = ex[tid, k]
            if soft == 0 or best_s == -INFINITY:
                out_off[i, j, 0] = cdx[tid, best_k]
                out_off[i, j, 1] = cdy[tid, best_k]
            else:
                wsum = 0.0
                ox = 0.0
                oy = 0.0
                for k in range(kc):
                    if sc[tid, k] == -INFINITY:
                        continue
                    wk = exp(beta * (sc[tid, k] - best_s))
                    wsum = wsum + wk
                    ox = ox + wk * cdx[tid, k]
                    oy = oy + wk * cdy[tid, k]
                out_off[i, j, 0] = ox / wsum
                out_off[i, j, 1] = oy / wsum

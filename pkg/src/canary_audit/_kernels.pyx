# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the pure numpy batch operations.

Same contracts as canary_audit._purepy: fused per-example
gradient/clip/reduce over a batch, batched per-position log-probs, and
the frame-synchronous fused beam search. The per-example loop runs in C
with BLAS matrix products and releases the GIL, so audit-level threads
can overlap model trainings and decode batches.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log, tanh
from libc.stdlib cimport free, malloc, qsort
from libc.string cimport memcpy, memset

from scipy.linalg.cython_blas cimport dgemm

from .nlm import GradientRecord

NAME = "compiled"

cnp.import_array()


# Row-major GEMM helpers. BLAS is column-major, so each call computes the
# transposed product on the transposed memory views.

cdef inline void _mm(double* a, double* b, double* c,
                     int m, int k, int n, double alpha, double beta) noexcept nogil:
    # c(m,n) = alpha * a(m,k) @ b(k,n) + beta * c
    cdef char nt = b'N'
    dgemm(&nt, &nt, &n, &m, &k, &alpha, b, &n, a, &k, &beta, c, &n)


cdef inline void _mmT(double* a, double* b, double* c,
                      int m, int k, int n, double alpha, double beta) noexcept nogil:
    # c(m,n) = alpha * a(m,k) @ b(n,k)^T + beta * c
    cdef char t = b'T', nt = b'N'
    dgemm(&t, &nt, &n, &m, &k, &alpha, b, &k, a, &k, &beta, c, &n)


cdef inline void _mTm(double* a, double* b, double* c,
                      int m, int k, int n, double alpha, double beta) noexcept nogil:
    # c(m,n) = alpha * a(k,m)^T @ b(k,n) + beta * c
    cdef char t = b'T', nt = b'N'
    dgemm(&nt, &t, &n, &m, &k, &alpha, b, &n, a, &m, &beta, c, &n)


cdef inline void _gather_contexts(const int* sym, int pos_count,
                                  int k, int pad, int* ctx) noexcept nogil:
    cdef int t, j, src
    for t in range(pos_count):
        for j in range(k):
            src = t - k + j
            ctx[t * k + j] = sym[src] if src >= 0 else pad


cdef void _forward_block(const double* emb, const double* w1, const double* b1,
                         const double* w2, const double* b2,
                         const int* ctx, int p, int k, int e, int h, int v,
                         double* x, double* hid, double* logits) noexcept nogil:
    """x(p,k*e) <- gathered embeddings; logits(p,v) <- normalized log-probs."""
    cdef int t, j, d, ke = k * e
    cdef double peak, total, val
    for t in range(p):
        for j in range(k):
            memcpy(x + t * ke + j * e, emb + ctx[t * k + j] * e, e * sizeof(double))
    _mm(x, w1, hid, p, ke, h, 1.0, 0.0)
    for t in range(p):
        for d in range(h):
            hid[t * h + d] = tanh(hid[t * h + d] + b1[d])
    _mm(hid, w2, logits, p, h, v, 1.0, 0.0)
    for t in range(p):
        peak = logits[t * v] + b2[0]
        for d in range(v):
            val = logits[t * v + d] + b2[d]
            logits[t * v + d] = val
            if val > peak:
                peak = val
        total = 0.0
        for d in range(v):
            total += exp(logits[t * v + d] - peak)
        total = peak + log(total)
        for d in range(v):
            logits[t * v + d] -= total


cdef double _example_grad(const double* emb, const double* w1, const double* b1,
                          const double* w2, const double* b2,
                          const int* sym, int length, int k, int e, int h, int v,
                          double clip, double inv_batch,
                          double* x, double* hid, double* logits, int* ctx,
                          double* dh, double* dx,
                          double* d_w1, double* d_b1, double* d_w2, double* d_b2,
                          double* d_emb, int* touched, char* touched_flag,
                          double* g_emb, double* g_w1, double* g_b1,
                          double* g_w2, double* g_b2,
                          double* norm_out) noexcept nogil:
    """One example's NLL gradient, clipped and accumulated into g_*.

    Returns the example's NLL and writes its unclipped global gradient
    norm to norm_out. The accumulation factor folds 1/batch together with
    the clip rescaling, and examples are processed in caller order, so
    the reduction is reproducible.
    """
    cdef int p = length + 1, ke = k * e
    cdef int t, j, d, row, n_touched = 0
    cdef int eos = v - 1, pad = v
    cdef int target
    cdef double loss = 0.0, sq = 0.0, norm, factor, val

    _gather_contexts(sym, p, k, pad, ctx)
    _forward_block(emb, w1, b1, w2, b2, ctx, p, k, e, h, v, x, hid, logits)

    # logits now hold log-probs; convert in place to dlogits = softmax - onehot
    for t in range(p):
        target = sym[t] if t < length else eos
        loss -= logits[t * v + target]
        for d in range(v):
            logits[t * v + d] = exp(logits[t * v + d])
        logits[t * v + target] -= 1.0

    _mTm(hid, logits, d_w2, h, p, v, 1.0, 0.0)
    memset(d_b2, 0, v * sizeof(double))
    for t in range(p):
        for d in range(v):
            d_b2[d] += logits[t * v + d]

    # dh = dlogits @ w2^T, then through the tanh: dpre = dh * (1 - hid^2)
    _mmT(logits, w2, dh, p, v, h, 1.0, 0.0)
    for t in range(p):
        for d in range(h):
            val = hid[t * h + d]
            dh[t * h + d] *= 1.0 - val * val

    memset(d_b1, 0, h * sizeof(double))
    for t in range(p):
        for d in range(h):
            d_b1[d] += dh[t * h + d]

    _mTm(x, dh, d_w1, ke, p, h, 1.0, 0.0)
    _mmT(dh, w1, dx, p, h, ke, 1.0, 0.0)

    for t in range(p):
        for j in range(k):
            row = ctx[t * k + j]
            if not touched_flag[row]:
                touched_flag[row] = 1
                touched[n_touched] = row
                n_touched += 1
                memset(d_emb + row * e, 0, e * sizeof(double))
            for d in range(e):
                d_emb[row * e + d] += dx[t * ke + j * e + d]

    for j in range(ke * h):
        sq += d_w1[j] * d_w1[j]
    for j in range(h):
        sq += d_b1[j] * d_b1[j]
    for j in range(h * v):
        sq += d_w2[j] * d_w2[j]
    for j in range(v):
        sq += d_b2[j] * d_b2[j]
    for j in range(n_touched):
        row = touched[j]
        for d in range(e):
            sq += d_emb[row * e + d] * d_emb[row * e + d]
    norm = sq ** 0.5
    norm_out[0] = norm

    factor = inv_batch
    if clip > 0.0 and norm > clip:
        factor *= clip / norm

    for j in range(ke * h):
        g_w1[j] += factor * d_w1[j]
    for j in range(h):
        g_b1[j] += factor * d_b1[j]
    for j in range(h * v):
        g_w2[j] += factor * d_w2[j]
    for j in range(v):
        g_b2[j] += factor * d_b2[j]
    for j in range(n_touched):
        row = touched[j]
        for d in range(e):
            g_emb[row * e + d] += factor * d_emb[row * e + d]
        touched_flag[row] = 0

    return loss


def batch_grad(params, syms, lens, double clip_norm):
    """Mean clipped per-example gradient over the batch, plus diagnostics."""
    cfg = params.config
    cdef int k = cfg.context_len
    cdef int e = cfg.eff_embed_dim
    cdef int h = cfg.eff_hidden_dim
    cdef int v = cfg.vocab_size
    cdef int batch = syms.shape[0]
    if batch < 1:
        raise ValueError("batch must be nonempty")

    grad = GradientRecord.zeros(cfg)
    losses = np.empty(batch)
    norms = np.empty(batch)

    cdef double[:, ::1] emb = params.embedding
    cdef double[:, ::1] w1 = params.W1
    cdef double[::1] b1 = params.b1
    cdef double[:, ::1] w2 = params.W2
    cdef double[::1] b2 = params.b2
    cdef double[:, ::1] g_emb = grad.embedding
    cdef double[:, ::1] g_w1 = grad.W1
    cdef double[::1] g_b1 = grad.b1
    cdef double[:, ::1] g_w2 = grad.W2
    cdef double[::1] g_b2 = grad.b2
    cdef int[:, ::1] sv = np.ascontiguousarray(syms, dtype=np.int32)
    cdef int[::1] lv = np.ascontiguousarray(lens, dtype=np.int32)
    cdef double[::1] loss_v = losses
    cdef double[::1] norm_v = norms

    cdef int max_p = int(np.max(lens)) + 1
    cdef int ke = k * e

    x_buf = np.empty(max_p * ke)
    hid_buf = np.empty(max_p * h)
    logit_buf = np.empty(max_p * v)
    ctx_buf = np.empty(max_p * k, dtype=np.int32)
    dh_buf = np.empty(max_p * h)
    dx_buf = np.empty(max_p * ke)
    dw1_buf = np.empty(ke * h)
    db1_buf = np.empty(h)
    dw2_buf = np.empty(h * v)
    db2_buf = np.empty(v)
    demb_buf = np.empty((v + 1) * e)
    touched_buf = np.empty(max_p * k, dtype=np.int32)
    flag_buf = np.zeros(v + 1, dtype=np.int8)
    cdef double[::1] x = x_buf
    cdef double[::1] hid = hid_buf
    cdef double[::1] logits = logit_buf
    cdef int[::1] ctx = ctx_buf
    cdef double[::1] dh = dh_buf
    cdef double[::1] dx = dx_buf
    cdef double[::1] d_w1 = dw1_buf
    cdef double[::1] d_b1 = db1_buf
    cdef double[::1] d_w2 = dw2_buf
    cdef double[::1] d_b2 = db2_buf
    cdef double[::1] d_emb = demb_buf
    cdef int[::1] touched = touched_buf
    cdef char[::1] flags = flag_buf

    cdef double inv_batch = 1.0 / batch
    cdef int i
    with nogil:
        for i in range(batch):
            loss_v[i] = _example_grad(
                &emb[0, 0], &w1[0, 0], &b1[0], &w2[0, 0], &b2[0],
                &sv[i, 0], lv[i], k, e, h, v, clip_norm, inv_batch,
                &x[0], &hid[0], &logits[0], &ctx[0], &dh[0], &dx[0],
                &d_w1[0], &d_b1[0], &d_w2[0], &d_b2[0],
                &d_emb[0], &touched[0], &flags[0],
                &g_emb[0, 0], &g_w1[0, 0], &g_b1[0], &g_w2[0, 0], &g_b2[0],
                &norm_v[i],
            )
    return grad, losses, norms


def positions_logp(params, syms, lens):
    """Per-position target log-probs; NaN past each example's length + 1."""
    cfg = params.config
    cdef int k = cfg.context_len
    cdef int e = cfg.eff_embed_dim
    cdef int h = cfg.eff_hidden_dim
    cdef int v = cfg.vocab_size
    cdef int n = syms.shape[0]

    cdef double[:, ::1] emb = params.embedding
    cdef double[:, ::1] w1 = params.W1
    cdef double[::1] b1 = params.b1
    cdef double[:, ::1] w2 = params.W2
    cdef double[::1] b2 = params.b2
    cdef int[:, ::1] sv = np.ascontiguousarray(syms, dtype=np.int32)
    cdef int[::1] lv = np.ascontiguousarray(lens, dtype=np.int32)

    cdef int width = int(np.max(lens)) + 1
    out = np.full((n, width), np.nan)
    cdef double[:, ::1] ov = out

    cdef int ke = k * e
    x_buf = np.empty(width * ke)
    hid_buf = np.empty(width * h)
    logit_buf = np.empty(width * v)
    ctx_buf = np.empty(width * k, dtype=np.int32)
    cdef double[::1] x = x_buf
    cdef double[::1] hid = hid_buf
    cdef double[::1] logits = logit_buf
    cdef int[::1] ctx = ctx_buf

    cdef int i, t, length, p, target, eos = v - 1
    with nogil:
        for i in range(n):
            length = lv[i]
            p = length + 1
            _gather_contexts(&sv[i, 0], p, k, v, &ctx[0])
            _forward_block(&emb[0, 0], &w1[0, 0], &b1[0], &w2[0, 0], &b2[0],
                           &ctx[0], p, k, e, h, v, &x[0], &hid[0], &logits[0])
            for t in range(p):
                target = sv[i, t] if t < length else eos
                ov[i, t] = logits[t * v + target]
    return out


cdef struct Cand:
    double score
    int idx


cdef int _cand_cmp(const void* a, const void* b) noexcept nogil:
    # score descending, then flattened index ascending (the lexicographic
    # tie-break: the beam is kept in prefix-lexicographic order, so the
    # flattened candidate index is the extension's lexicographic rank)
    cdef Cand* p = <Cand*> a
    cdef Cand* q = <Cand*> b
    if p.score > q.score:
        return -1
    if p.score < q.score:
        return 1
    if p.idx < q.idx:
        return -1
    if p.idx > q.idx:
        return 1
    return 0


cdef int _idx_cmp(const void* a, const void* b) noexcept nogil:
    cdef Cand* p = <Cand*> a
    cdef Cand* q = <Cand*> b
    if p.idx < q.idx:
        return -1
    if p.idx > q.idx:
        return 1
    return 0


def beam_search(params, emission, ilm_logp, double lam1, double lam2, int beam_width):
    """Frame-synchronous fused beam search; see _purepy.beam_search."""
    cfg = params.config
    cdef int k = cfg.context_len
    cdef int e = cfg.eff_embed_dim
    cdef int h = cfg.eff_hidden_dim
    cdef int v = cfg.vocab_size
    if emission.ndim != 2 or emission.shape[1] != v:
        raise ValueError("lattice width does not match the model vocabulary")
    cdef int frames = emission.shape[0]
    if frames < 1:
        raise ValueError("lattice must have at least one frame")
    if beam_width < 1:
        raise ValueError("beam width must be >= 1")

    cdef double[:, ::1] emb = params.embedding
    cdef double[:, ::1] w1 = params.W1
    cdef double[::1] b1 = params.b1
    cdef double[:, ::1] w2 = params.W2
    cdef double[::1] b2 = params.b2
    cdef double[:, ::1] em = np.ascontiguousarray(emission, dtype=np.float64)
    cdef double[::1] ilm = np.ascontiguousarray(ilm_logp, dtype=np.float64)

    ctx_a = np.full(beam_width * k, v, dtype=np.int32)
    ctx_b = np.full(beam_width * k, v, dtype=np.int32)
    pre_a = np.zeros(beam_width * frames, dtype=np.int32)
    pre_b = np.zeros(beam_width * frames, dtype=np.int32)
    scores_np = np.zeros(beam_width)
    x_buf = np.empty(beam_width * k * e)
    hid_buf = np.empty(beam_width * h)
    logit_buf = np.empty(beam_width * v)
    cdef int[::1] ctx_a_v = ctx_a
    cdef int[::1] ctx_b_v = ctx_b
    cdef int[::1] pre_a_v = pre_a
    cdef int[::1] pre_b_v = pre_b
    cdef double[::1] scores = scores_np
    cdef double[::1] x = x_buf
    cdef double[::1] hid = hid_buf
    cdef double[::1] logits = logit_buf

    cdef int* ctx_cur = &ctx_a_v[0]
    cdef int* ctx_new = &ctx_b_v[0]
    cdef int* pre_cur = &pre_a_v[0]
    cdef int* pre_new = &pre_b_v[0]
    cdef int* swap_i

    cdef Cand* cand = <Cand*> malloc(beam_width * v * sizeof(Cand))
    if cand == NULL:
        raise MemoryError

    cdef int n_beam = 1, n_cand, keep, t, b, s, prev, sym, j, best
    cdef double best_score, trial
    try:
        with nogil:
            for t in range(frames):
                _forward_block(&emb[0, 0], &w1[0, 0], &b1[0], &w2[0, 0], &b2[0],
                               ctx_cur, n_beam, k, e, h, v,
                               &x[0], &hid[0], &logits[0])
                n_cand = n_beam * v
                for b in range(n_beam):
                    for s in range(v):
                        cand[b * v + s].score = (
                            scores[b] + em[t, s] + lam1 * logits[b * v + s]
                            - lam2 * ilm[s]
                        )
                        cand[b * v + s].idx = b * v + s
                qsort(cand, n_cand, sizeof(Cand), _cand_cmp)
                keep = beam_width if beam_width < n_cand else n_cand
                qsort(cand, keep, sizeof(Cand), _idx_cmp)
                for b in range(keep):
                    prev = cand[b].idx // v
                    sym = cand[b].idx % v
                    for j in range(t):
                        pre_new[b * frames + j] = pre_cur[prev * frames + j]
                    pre_new[b * frames + t] = sym
                    for j in range(k - 1):
                        ctx_new[b * k + j] = ctx_cur[prev * k + j + 1]
                    ctx_new[b * k + k - 1] = sym
                    scores[b] = cand[b].score
                n_beam = keep
                swap_i = ctx_cur
                ctx_cur = ctx_new
                ctx_new = swap_i
                swap_i = pre_cur
                pre_cur = pre_new
                pre_new = swap_i

            _forward_block(&emb[0, 0], &w1[0, 0], &b1[0], &w2[0, 0], &b2[0],
                           ctx_cur, n_beam, k, e, h, v,
                           &x[0], &hid[0], &logits[0])
            best = 0
            best_score = scores[0] + lam1 * logits[v - 1]
            for b in range(1, n_beam):
                trial = scores[b] + lam1 * logits[b * v + v - 1]
                if trial > best_score:
                    best = b
                    best_score = trial
    finally:
        free(cand)

    result = np.empty(frames, dtype=np.int32)
    for j in range(frames):
        result[j] = pre_cur[best * frames + j]
    return result

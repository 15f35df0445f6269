"""Pure numpy implementations of the hot batch operations.

This is the fallback backend; `canary_audit._kernels` provides a compiled
twin with identical signatures and semantics. Per-example reduction order
is fixed (ascending batch index) so results are reproducible regardless
of how callers schedule work.
"""

from __future__ import annotations

import numpy as np

from . import nlm

NAME = "python"


def _example_view(syms: np.ndarray, lens: np.ndarray, i: int) -> np.ndarray:
    return syms[i, : int(lens[i])]


def batch_grad(params: nlm.NlmParams, syms: np.ndarray, lens: np.ndarray, clip_norm: float):
    """Mean of per-example clipped gradients over a padded batch.

    clip_norm <= 0 disables clipping. Returns (grad, losses, norms) where
    losses and norms are per-example sequence NLLs and unclipped global
    gradient norms.
    """
    batch = syms.shape[0]
    grad = nlm.GradientRecord.zeros(params.config)
    losses = np.empty(batch)
    norms = np.empty(batch)
    scale = 1.0 / batch
    for i in range(batch):
        sym = _example_view(syms, lens, i)
        g = nlm.per_example_grad(params, sym)
        losses[i] = nlm.sequence_nll(params, sym)
        norm = g.global_norm()
        norms[i] = norm
        factor = scale
        if clip_norm > 0 and norm > clip_norm:
            factor *= clip_norm / norm
        for acc, part in zip(grad.arrays(), g.arrays()):
            acc += factor * part
    return grad, losses, norms


def positions_logp(params: nlm.NlmParams, syms: np.ndarray, lens: np.ndarray) -> np.ndarray:
    """Per-position target log-probs for many sequences.

    Output is (N, max_len + 1); entries past an example's length + 1 are NaN.
    """
    n = syms.shape[0]
    width = int(lens.max()) + 1
    out = np.full((n, width), np.nan)
    for i in range(n):
        sym = _example_view(syms, lens, i)
        ctx, targets = nlm.contexts_and_targets(sym, params.config)
        _, _, logp = nlm._forward(params, ctx)
        out[i, : targets.size] = logp[np.arange(targets.size), targets]
    return out


def beam_search(
    params: nlm.NlmParams,
    emission: np.ndarray,
    ilm_logp: np.ndarray,
    lam1: float,
    lam2: float,
    beam_width: int,
) -> np.ndarray:
    """Frame-synchronous beam search over the fused score.

    Each frame extends every surviving prefix by all V scored symbols and
    keeps the top beam_width candidates; after the last frame the LM's EOS
    term is added. Ties are broken toward the lexicographically smallest
    transcript, which works out to the smallest flattened candidate index
    because the beam is kept in prefix-lexicographic order throughout.
    """
    frames, v = emission.shape
    cfg = params.config
    if v != cfg.vocab_size:
        raise ValueError("lattice width does not match the model vocabulary")
    k = cfg.context_len
    eos, pad = v - 1, v

    ctx = np.full((1, k), pad, dtype=np.int32)
    prefixes = np.zeros((1, 0), dtype=np.int32)
    scores = np.zeros(1)

    for t in range(frames):
        _, _, logp = nlm._forward(params, ctx)
        cand = (
            scores[:, None]
            + emission[t][None, :]
            + lam1 * logp
            - lam2 * ilm_logp[None, :]
        )
        flat = cand.ravel()
        keep = min(beam_width, flat.size)
        order = np.lexsort((np.arange(flat.size), -flat))[:keep]
        order.sort()  # restore prefix-lexicographic beam order
        prev, sym = np.divmod(order, v)
        scores = flat[order]
        prefixes = np.concatenate(
            [prefixes[prev], sym[:, None].astype(np.int32)], axis=1
        )
        ctx = np.concatenate([ctx[prev, 1:], sym[:, None].astype(np.int32)], axis=1)

    _, _, logp = nlm._forward(params, ctx)
    scores = scores + lam1 * logp[:, eos]
    best = int(np.argmax(scores))  # first max = lexicographically smallest
    return prefixes[best].copy()

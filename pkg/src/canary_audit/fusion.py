"""Shallow-fusion scoring and beam decoding.

A hypothesis y for a T-frame lattice is scored as

    acoustic(y) + lambda1 * lm(y) - lambda2 * ilm(y)

where acoustic sums the per-frame emission log-probs, lm is the external
LM's log-likelihood of y including its terminal EOS, and ilm is the
acoustic side's internal unigram score of the frame symbols. The paper
this reproduces writes the external-LM term without a log; it is treated
here as a log-probability, the standard shallow-fusion reading.

The decoder is frame-synchronous: hypotheses always have exactly one
symbol per frame, so downstream word errors are substitutions only. The
EOS term enters after the last frame, which lets the full-sequence
likelihood (the quantity a memorizing LM inflates) influence the ranking.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _backend, nlm
from .channel import EmissionLattice, InternalLm
from .metrics import corpus_wer
from .vocab import EOS


@dataclass(frozen=True)
class FusionWeights:
    lambda1: float = 0.0  # external LM weight
    lambda2: float = 0.0  # internal-LM subtraction weight

    def __post_init__(self):
        for name in ("lambda1", "lambda2"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and nonnegative")


@dataclass(frozen=True)
class BeamConfig:
    width: int = 8

    def __post_init__(self):
        if self.width < 1:
            raise ValueError("beam width must be >= 1")


@dataclass
class DecodeResult:
    transcript: np.ndarray  # (T,) int32 scored symbols
    fused_score: float
    acoustic: float
    lm: float
    ilm: float

    def text(self) -> str:
        return transcript_to_text(self.transcript)


def transcript_to_text(transcript) -> str:
    """Symbols to characters; an in-transcript EOS renders as '#'."""
    from .vocab import VOCAB

    return "".join(
        "#" if int(s) == EOS else VOCAB.index_to_char(int(s)) for s in transcript
    )


def _hypothesis_contexts(hyp: np.ndarray, config: nlm.NlmConfig) -> np.ndarray:
    """Like nlm.contexts_and_targets but admits any scored symbol (EOS too)."""
    k, pad = config.context_len, config.vocab_size
    padded = np.concatenate([np.full(k, pad, dtype=np.int32), hyp.astype(np.int32)])
    ctx = np.lib.stride_tricks.sliding_window_view(padded, k)[: hyp.size + 1]
    return np.ascontiguousarray(ctx)


def _score_parts(lattice, hyp, lm_params, ilm):
    frames = lattice.frames
    t = frames.shape[0]
    eos = lm_params.config.vocab_size - 1
    acoustic = float(frames[np.arange(t), hyp].sum())
    ctx = _hypothesis_contexts(hyp, lm_params.config)
    _, _, logp = nlm._forward(lm_params, ctx)
    targets = np.concatenate([hyp, np.array([eos], dtype=np.int32)])
    lm_total = float(logp[np.arange(t + 1), targets].sum())
    ilm_total = float(ilm.unigram[hyp].sum())
    return acoustic, lm_total, ilm_total


def fused_score(
    lattice: EmissionLattice,
    hypothesis,
    lm_params: nlm.NlmParams,
    ilm: InternalLm,
    weights: FusionWeights,
) -> float:
    """Exact fused score of a full-length hypothesis.

    The terminal EOS contributes only through the LM term; no emission
    frame or internal-LM entry exists for it.
    """
    hyp = np.asarray(hypothesis, dtype=np.int32)
    t, v = lattice.frames.shape
    if hyp.shape != (t,):
        raise ValueError(f"hypothesis must hold exactly {t} symbols")
    if hyp.size and (hyp.min() < 0 or hyp.max() >= v):
        raise ValueError("hypothesis symbols must be scored symbols")
    acoustic, lm_total, ilm_total = _score_parts(lattice, hyp, lm_params, ilm)
    return acoustic + weights.lambda1 * lm_total - weights.lambda2 * ilm_total


def beam_decode(
    lattice: EmissionLattice,
    lm_params: nlm.NlmParams,
    ilm: InternalLm,
    weights: FusionWeights,
    beam: BeamConfig = BeamConfig(),
) -> DecodeResult:
    """Top-1 fused transcript; ties go to the lexicographically smallest."""
    transcript = _backend.beam_search(
        lm_params,
        lattice.frames,
        ilm.unigram,
        weights.lambda1,
        weights.lambda2,
        beam.width,
    )
    acoustic, lm_total, ilm_total = _score_parts(lattice, transcript, lm_params, ilm)
    fused = acoustic + weights.lambda1 * lm_total - weights.lambda2 * ilm_total
    return DecodeResult(transcript, fused, acoustic, lm_total, ilm_total)


def tune_weights(
    dev,
    lm_params: nlm.NlmParams,
    ilm: InternalLm,
    lambda1_grid,
    lambda2_grid,
    beam: BeamConfig = BeamConfig(),
) -> FusionWeights:
    """Grid point minimizing corpus WER on (lattice, reference-text) pairs.

    Ties break toward smaller lambda1, then smaller lambda2.
    """
    dev = list(dev)
    grid1, grid2 = sorted(set(lambda1_grid)), sorted(set(lambda2_grid))
    if not dev:
        raise ValueError("dev set must be nonempty")
    if not grid1 or not grid2:
        raise ValueError("weight grids must be nonempty")

    best = None
    best_wer = None
    for lam1 in grid1:
        for lam2 in grid2:
            weights = FusionWeights(lam1, lam2)
            pairs = []
            for lattice, reference in dev:
                hyp = beam_decode(lattice, lm_params, ilm, weights, beam).text()
                pairs.append((reference.split(), hyp.split()))
            wer = corpus_wer(pairs)
            if best_wer is None or wer < best_wer:
                best, best_wer = weights, wer
    return best


def write_decode_csv(path, rows):
    """Decode batch CSV: utterance_id, reference, hypothesis, and scores."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("utterance_id,reference,hypothesis,fused_score,acoustic,lm,ilm\n")
        for utt_id, reference, result in rows:
            fh.write(
                f"{utt_id},{reference},{result.text()},{result.fused_score!r},"
                f"{result.acoustic!r},{result.lm!r},{result.ilm!r}\n"
            )

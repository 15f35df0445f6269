"""Simulated acoustic front end.

Text goes to a frame-synchronous emission lattice with one frame per
character: the true symbol gets probability 1-epsilon and the remaining
mass is spread uniformly over the other scored symbols. There is no
audio and no alignment search; the channel keeps exactly the phenomenon
the experiments need, namely that a language model can rescue (or
corrupt) acoustically ambiguous frames.

The membership classifier's partially-obscured rendering keeps a clean
prefix and adds Gaussian noise to the logits of every later frame. Noise
streams are derived from (seed, text), so distinct texts are independent
and every render is reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .seeds import derive_seed
from .vocab import EOS, N_SCORED, SPACE

_SYMBOL_NAMES = [chr(ord("a") + i) for i in range(26)] + ["<sp>", "<eos>"]


@dataclass(frozen=True)
class ChannelConfig:
    epsilon: float = 0.1  # confusion mass spread over non-target symbols
    noise_sigma: float = 2.0  # std of the suffix-frame logit perturbation
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.noise_sigma < 0.0:
            raise ValueError("noise_sigma must be nonnegative")


@dataclass
class EmissionLattice:
    """Per-frame log-probabilities over the scored symbols, one frame per char."""

    frames: np.ndarray  # (T, V)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    def to_csv_text(self) -> str:
        lines = [",".join(["frame"] + _SYMBOL_NAMES)]
        for t, row in enumerate(self.frames):
            lines.append(",".join([str(t)] + [repr(float(x)) for x in row]))
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class ObscureSpec:
    """How much of an utterance stays clean; None means ceil(n/2) letters."""

    prefix_letters: int | None = None

    def resolve(self, letter_count: int) -> int:
        if self.prefix_letters is None:
            return math.ceil(letter_count / 2)
        if not 0 <= self.prefix_letters <= letter_count:
            raise ValueError(
                f"prefix of {self.prefix_letters} letters exceeds the "
                f"{letter_count} letters available"
            )
        return self.prefix_letters


@dataclass
class InternalLm:
    """Add-one-smoothed symbol unigram of the acoustic side's training text."""

    unigram: np.ndarray  # (V,) log-probabilities


def _encode(text: str) -> np.ndarray:
    from .vocab import VOCAB

    if not text:
        raise ValueError("text must be nonempty")
    return VOCAB.encode(text)


def render_clean(text: str, config: ChannelConfig) -> EmissionLattice:
    """Noise-free lattice: (1-eps) on the true symbol per frame."""
    sym = _encode(text)
    frames = np.full(
        (sym.size, N_SCORED), math.log(config.epsilon / (N_SCORED - 1))
    )
    frames[np.arange(sym.size), sym] = math.log(1.0 - config.epsilon)
    return EmissionLattice(frames)


def render_obscured(
    text: str, config: ChannelConfig, spec: ObscureSpec
) -> EmissionLattice:
    """Clean prefix, Gaussian-noised suffix.

    Frames covering the first `prefix_letters` letters and their trailing
    spaces stay clean; each later frame's logits get i.i.d. Gaussian noise
    and are re-normalized. The clean/noisy boundary therefore falls
    between words for canary-format text.
    """
    sym = _encode(text)
    letter_positions = np.flatnonzero(sym != SPACE)
    prefix = spec.resolve(letter_positions.size)

    lattice = render_clean(text, config)
    if config.noise_sigma == 0.0 or prefix == letter_positions.size:
        return lattice

    # First noised frame is the letter after the prefix, so the prefix
    # letters keep their trailing spaces clean.
    start = 0 if prefix == 0 else int(letter_positions[prefix])

    rng = np.random.default_rng(derive_seed(config.seed, "channel:" + text))
    noise = rng.normal(0.0, config.noise_sigma, size=(sym.size - start, N_SCORED))
    noisy = lattice.frames[start:] + noise
    noisy -= _logsumexp_rows(noisy)
    lattice.frames[start:] = noisy
    return lattice


def _logsumexp_rows(rows: np.ndarray) -> np.ndarray:
    peak = rows.max(axis=1, keepdims=True)
    return peak + np.log(np.exp(rows - peak).sum(axis=1, keepdims=True))


def fit_internal_lm(corpus) -> InternalLm:
    """Symbol unigram with add-one smoothing; EOS counted once per line."""
    sequences = corpus.sequences if hasattr(corpus, "sequences") else list(corpus)
    if not sequences:
        raise ValueError("corpus must be nonempty")
    counts = np.ones(N_SCORED)
    flat = np.concatenate([_encode(line) for line in sequences])
    counts += np.bincount(flat, minlength=N_SCORED)
    counts[EOS] += len(sequences)
    return InternalLm(np.log(counts / counts.sum()))

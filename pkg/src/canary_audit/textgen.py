"""Canary, extraneous, and background text generation.

Canaries are fixed-length sequences of random lower-case letters with
spaces between them ("x q j w o e" for n=6), inserted into the training
corpus at power-of-two frequencies. An equally-sized, disjoint set of
extraneous sequences with the same frequency layout is generated as the
matched control and never trained on. The background corpus is synthetic
Markov text over a random word vocabulary, so the null distribution of
every experiment is fully known.

All generation is a pure function of (spec, seed): reruns are
bit-identical.
"""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import CanaryFractionWarning
from .seeds import derive_seed
from .vocab import VOCAB, Vocab  # noqa: F401  (re-exported with the text types)

DEFAULT_FREQUENCY_CLASSES = (
    (0, 16384),
    (1, 16384),
    (2, 8192),
    (4, 4096),
    (8, 2048),
    (16, 1024),
    (32, 512),
)

# Fraction of the sequence space that generation may consume before
# rejection resampling is considered too collision-prone.
_COLLISION_BUDGET = 0.1


@dataclass(frozen=True)
class CanarySpec:
    """Canary grammar plus the frequency-class layout to generate."""

    n_letters: int = 6
    frequency_classes: tuple = DEFAULT_FREQUENCY_CLASSES
    scale_divisor: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.n_letters < 1:
            raise ValueError("n_letters must be >= 1")
        if self.scale_divisor < 1:
            raise ValueError("scale_divisor must be >= 1")
        masses = set()
        for freq, count in self.frequency_classes:
            if count % self.scale_divisor != 0:
                raise ValueError(
                    f"scale_divisor {self.scale_divisor} does not divide class count {count}"
                )
            if freq >= 1:
                masses.add(freq * (count // self.scale_divisor))
        if len(masses) > 1:
            raise ValueError(
                f"inserted occurrences differ across classes: {sorted(masses)}"
            )

    def scaled_classes(self) -> list:
        """(frequency, count) pairs after dividing counts by scale_divisor."""
        return [(f, c // self.scale_divisor) for f, c in self.frequency_classes]


@dataclass
class SequenceSet:
    """Generated texts with their insertion frequencies."""

    entries: list  # of (text, frequency)
    kind: str  # "canary" | "extraneous"

    def texts(self) -> list:
        return [t for t, _ in self.entries]

    def by_class(self, frequency: int) -> list:
        return [t for t, f in self.entries if f == frequency]

    def frequencies(self) -> list:
        seen = []
        for _, f in self.entries:
            if f not in seen:
                seen.append(f)
        return seen

    def inserted(self) -> "SequenceSet":
        """The subset that actually enters training (frequency >= 1)."""
        return SequenceSet([(t, f) for t, f in self.entries if f >= 1], self.kind)


@dataclass(frozen=True)
class BackgroundSpec:
    """Parameters of the synthetic Markov background corpus."""

    sentence_count: int
    word_vocab_size: int = 1000
    markov_order: int = 1
    words_per_sentence: tuple = (2, 5)
    seed: int = 0

    def __post_init__(self):
        if self.sentence_count < 1:
            raise ValueError("sentence_count must be >= 1")
        if self.markov_order not in (0, 1):
            raise ValueError("markov_order must be 0 or 1")
        lo, hi = self.words_per_sentence
        if not (1 <= lo <= hi):
            raise ValueError("words_per_sentence must be an increasing positive range")


@dataclass
class Provenance:
    background_count: int
    canary_counts: dict = field(default_factory=dict)


@dataclass
class TrainingCorpus:
    sequences: list
    provenance: Provenance
    seed: int = 0

    @classmethod
    def from_lines(cls, lines, seed: int = 0) -> "TrainingCorpus":
        return cls(list(lines), Provenance(background_count=len(lines)), seed)


def canary_pattern(n: int) -> re.Pattern:
    return re.compile(r"^[a-z]( [a-z]){%d}$" % (n - 1))


def is_canary_text(text: str, n: int) -> bool:
    return n >= 1 and canary_pattern(n).match(text) is not None


def sample_canary(rng: np.random.Generator, n: int) -> str:
    """n letters drawn uniformly i.i.d. from a-z, space-separated."""
    if n < 1:
        raise ValueError("canary length must be >= 1")
    letters = rng.integers(0, 26, size=n)
    return " ".join(chr(ord("a") + int(i)) for i in letters)


def build_canary_sets(spec: CanarySpec):
    """Generate the canary set and its matched extraneous set.

    Both sets follow the frequency-class layout of `spec` (counts divided
    by scale_divisor), are internally duplicate-free, and share no text.
    Collisions are handled by rejection resampling, which stays cheap only
    while the requested sequences are a small fraction of the 26**n space.
    """
    classes = spec.scaled_classes()
    requested = 2 * sum(c for _, c in classes)
    if requested > _COLLISION_BUDGET * 26 ** spec.n_letters:
        raise ValueError(
            f"{requested} sequences of {spec.n_letters} letters would exceed "
            f"{_COLLISION_BUDGET:.0%} of the sequence space; increase n_letters"
        )

    def draw(rng, count, taken):
        out = []
        while len(out) < count:
            text = sample_canary(rng, spec.n_letters)
            if text in taken:
                continue
            taken.add(text)
            out.append(text)
        return out

    canary_rng = np.random.default_rng(derive_seed(spec.seed, "canary"))
    extraneous_rng = np.random.default_rng(derive_seed(spec.seed, "extraneous"))

    canary_texts = set()
    canary_entries = []
    for freq, count in classes:
        for text in draw(canary_rng, count, canary_texts):
            canary_entries.append((text, freq))

    taken = set(canary_texts)
    extraneous_entries = []
    for freq, count in classes:
        for text in draw(extraneous_rng, count, taken):
            extraneous_entries.append((text, freq))

    return (
        SequenceSet(canary_entries, "canary"),
        SequenceSet(extraneous_entries, "extraneous"),
    )


def background_model(spec: BackgroundSpec):
    """The word inventory and chain weights behind gen_background.

    Returns (words, unigram, transitions); transitions is None for a
    unigram (order-0) chain. Exposed so tests can compare sampled
    frequencies against the generator's own weights.
    """
    rng = np.random.default_rng(derive_seed(spec.seed, "background"))
    words = []
    seen = set()
    while len(words) < spec.word_vocab_size:
        length = int(rng.integers(3, 9))
        word = "".join(chr(ord("a") + int(c)) for c in rng.integers(0, 26, size=length))
        if word in seen:
            continue
        seen.add(word)
        words.append(word)

    unigram = rng.random(spec.word_vocab_size) + 0.5
    unigram /= unigram.sum()
    transitions = None
    if spec.markov_order == 1:
        transitions = rng.random((spec.word_vocab_size, spec.word_vocab_size)) + 0.5
        transitions /= transitions.sum(axis=1, keepdims=True)
    return words, unigram, transitions


def gen_background(spec: BackgroundSpec) -> TrainingCorpus:
    """Sample the synthetic background corpus for `spec`."""
    words, unigram, transitions = background_model(spec)
    rng = np.random.default_rng(derive_seed(spec.seed, "background-sample"))

    lo, hi = spec.words_per_sentence
    lengths = rng.integers(lo, hi + 1, size=spec.sentence_count)
    total = int(lengths.sum())
    uniform = rng.random(total)

    unigram_cum = np.cumsum(unigram)
    trans_cum = None if transitions is None else np.cumsum(transitions, axis=1)

    sentences = []
    pos = 0
    for length in lengths:
        prev = None
        picked = []
        for _ in range(int(length)):
            if prev is None or trans_cum is None:
                idx = int(np.searchsorted(unigram_cum, uniform[pos]))
            else:
                idx = int(np.searchsorted(trans_cum[prev], uniform[pos]))
            idx = min(idx, spec.word_vocab_size - 1)
            picked.append(words[idx])
            prev = idx
            pos += 1
        sentences.append(" ".join(picked))

    return TrainingCorpus(sentences, Provenance(background_count=len(sentences)), spec.seed)


def merge_corpus(background: TrainingCorpus, canaries: SequenceSet) -> TrainingCorpus:
    """Insert each canary `frequency` times and reshuffle.

    The shuffle permutation is derived from the background corpus seed, so
    merging the canary set and the extraneous set into the same background
    yields corpora that differ only in the inserted lines.
    """
    for text, freq in canaries.entries:
        if freq == 0:
            raise ValueError(
                f"frequency-0 sequence {text!r} must never enter training"
            )

    inserted = []
    counts = {}
    for text, freq in canaries.entries:
        inserted.extend([text] * freq)
        counts[text] = freq

    combined = list(background.sequences) + inserted
    if combined and inserted and len(inserted) / len(combined) >= 0.001:
        warnings.warn(
            f"inserted sequences are {len(inserted) / len(combined):.2%} of the "
            "corpus (>= 0.1%); expected at desk scale",
            CanaryFractionWarning,
            stacklevel=2,
        )

    perm = np.random.default_rng(derive_seed(background.seed, "shuffle")).permutation(
        len(combined)
    )
    shuffled = [combined[i] for i in perm]
    return TrainingCorpus(
        shuffled,
        Provenance(background_count=len(background.sequences), canary_counts=counts),
        background.seed,
    )


def save_corpus(corpus, path):
    lines = corpus.sequences if isinstance(corpus, TrainingCorpus) else corpus
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in lines:
            fh.write(line + "\n")


def load_corpus(path) -> list:
    with open(path, "r", encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh]


def save_sequence_set(seqset: SequenceSet, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for text, freq in seqset.entries:
            fh.write(f"{freq}\t{text}\n")


def load_sequence_set(path, kind: str) -> SequenceSet:
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            freq, text = line.rstrip("\n").split("\t", 1)
            entries.append((text, int(freq)))
    return SequenceSet(entries, kind)

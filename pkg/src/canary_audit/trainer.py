"""Mini-batch training with per-example gradient clipping.

Each step draws a without-replacement batch, computes every example's
exact gradient, clips each one to a maximum L2 norm (when enabled),
averages them in fixed index order and applies a single Adam update.
No noise is added: clipping alone bounds each example's influence, which
is the mitigation under study.

Canary-perplexity probes run during training at a fixed interval, so the
memorization trajectory is observable without stopping the run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _backend, nlm
from .errors import InvalidStateError, TrainingDiverged
from .seeds import derive_seed

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    steps: int
    batch_size: int = 64
    learning_rate: float = 1e-3
    clip_norm: float | None = None  # None = clipping off
    seed: int = 0
    probe_interval: int = 1000
    probe_sets: dict = field(default_factory=dict)  # name -> list of canary texts
    probe_n_letters: int = 6

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch_size must be >= 1")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ValueError("clip_norm must be positive when enabled")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.probe_interval < 1:
            raise ValueError("probe_interval must be >= 1")


@dataclass
class TrainReport:
    """Curves sampled at probe_interval multiples plus the final step."""

    steps: list = field(default_factory=list)
    mean_nll: list = field(default_factory=list)
    fraction_clipped: list = field(default_factory=list)
    probes: dict = field(default_factory=dict)  # set name -> list of mean ratios

    def to_csv_text(self) -> str:
        names = list(self.probes)
        lines = [",".join(["step", "mean_nll", "fraction_clipped"] + names)]
        for i, step in enumerate(self.steps):
            row = [str(step), repr(self.mean_nll[i]), repr(self.fraction_clipped[i])]
            row += [repr(self.probes[name][i]) for name in names]
            lines.append(",".join(row))
        return "\n".join(lines) + "\n"

    def save_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_csv_text())


def clip_grad(g: nlm.GradientRecord, clip_norm: float) -> nlm.GradientRecord:
    """Rescale g to global L2 norm at most clip_norm.

    Gradients already within the bound are returned unchanged; the output
    is always a nonnegative multiple of the input.
    """
    if not clip_norm > 0:
        raise ValueError("clip_norm must be positive")
    if not all(np.isfinite(a).all() for a in g.arrays()):
        raise InvalidStateError("gradient contains non-finite entries")
    norm = g.global_norm()
    if norm <= clip_norm:
        return g
    return g.scaled(clip_norm / norm)


def encode_corpus(sequences) -> tuple:
    """Pack text sequences into a padded int32 matrix plus lengths."""
    syms = [nlm.encode_text(s) for s in sequences]
    lens = np.array([s.size for s in syms], dtype=np.int32)
    width = int(lens.max())
    packed = np.zeros((len(syms), width), dtype=np.int32)
    for i, s in enumerate(syms):
        packed[i, : s.size] = s
    return packed, lens


def probe(params: nlm.NlmParams, probe_sets: dict, n: int) -> dict:
    """Mean ratio-to-baseline of each named canary set under `params`."""
    out = {}
    for name, texts in probe_sets.items():
        texts = list(texts)
        if not texts:
            raise ValueError(f"probe set {name!r} is empty")
        syms, lens = encode_corpus(texts)
        logp = _backend.positions_logp(params, syms, lens)
        letter_cols = np.arange(0, 2 * n - 1, 2)
        letters = logp[:, letter_cols].sum(axis=1)
        eos = logp[np.arange(len(texts)), lens]
        ratios = (letters + eos) / math.log(2.0) + n * math.log2(26.0)
        out[name] = float(ratios.mean())
    return out


class _BatchSampler:
    """Without-replacement batches from concatenated epoch permutations."""

    def __init__(self, n: int, batch_size: int, seed: int):
        self._n = n
        self._batch = batch_size
        self._rng = np.random.default_rng(derive_seed(seed, "batch"))
        self._queue = self._rng.permutation(n)

    def next(self) -> np.ndarray:
        while self._queue.size < self._batch:
            self._queue = np.concatenate([self._queue, self._rng.permutation(self._n)])
        idx, self._queue = self._queue[: self._batch], self._queue[self._batch :]
        return idx


def _adam_step(params, grad, m, v, t, lr):
    c1 = 1.0 - ADAM_BETA1**t
    c2 = 1.0 - ADAM_BETA2**t
    for p, g, mi, vi in zip(params.arrays(), grad.arrays(), m.arrays(), v.arrays()):
        mi *= ADAM_BETA1
        mi += (1.0 - ADAM_BETA1) * g
        vi *= ADAM_BETA2
        vi += (1.0 - ADAM_BETA2) * g * g
        p -= lr * (mi / c1) / (np.sqrt(vi / c2) + ADAM_EPS)


def train(corpus, config: TrainConfig, init: nlm.NlmParams, norm_sink: list | None = None):
    """Train `init` on the corpus; returns (params, report).

    `norm_sink`, when given, receives every per-example unclipped gradient
    norm (one array per step) for clip-level calibration.
    """
    sequences = corpus.sequences if hasattr(corpus, "sequences") else list(corpus)
    if not sequences:
        raise ValueError("corpus must be nonempty")

    syms, lens = encode_corpus(sequences)
    params = init.copy()
    m = nlm.GradientRecord.zeros(params.config)
    v = nlm.GradientRecord.zeros(params.config)
    sampler = _BatchSampler(len(sequences), config.batch_size, config.seed)
    clip = config.clip_norm if config.clip_norm is not None else 0.0

    report = TrainReport(probes={name: [] for name in config.probe_sets})
    last_good = 0
    for step in range(1, config.steps + 1):
        idx = sampler.next()
        grad, losses, norms = _backend.batch_grad(
            params, np.ascontiguousarray(syms[idx]), lens[idx], clip
        )
        mean_nll = float(losses.mean())
        if not math.isfinite(mean_nll):
            raise TrainingDiverged(last_good)
        last_good = step
        if norm_sink is not None:
            norm_sink.append(norms)

        at_sample = step % config.probe_interval == 0 or step == config.steps
        if __debug__ and at_sample:
            _spot_check(params, syms[idx[0]], lens[idx[0]], norms[0], clip)

        _adam_step(params, grad, m, v, step, config.learning_rate)

        if at_sample:
            report.steps.append(step)
            report.mean_nll.append(mean_nll)
            frac = float((norms > clip).mean()) if clip > 0 else 0.0
            report.fraction_clipped.append(frac)
            if config.probe_sets:
                values = probe(params, config.probe_sets, config.probe_n_letters)
                for name, value in values.items():
                    report.probes[name].append(value)

    return params, report


def _spot_check(params, sym_row, length, reported_norm, clip):
    """Cross-check one example's kernel gradient norm against the reference."""
    g = nlm.per_example_grad(params, sym_row[: int(length)])
    norm = g.global_norm()
    assert abs(norm - reported_norm) <= 1e-6 * max(1.0, norm), (
        f"backend norm {reported_norm} != reference {norm}"
    )
    if clip > 0:
        assert clip_grad(g, clip).global_norm() <= clip + 1e-9


def calibrate_grad_norms(
    corpus, config: TrainConfig, init: nlm.NlmParams, steps: int, warmup: int = 200
) -> np.ndarray:
    """Observed per-example unclipped gradient norms from a short run.

    Trains a copy for `steps` steps without clipping and returns the norms
    seen after `warmup` steps, for percentile-based clip levels.
    """
    if steps <= warmup:
        raise ValueError("calibration needs more steps than warmup")
    cal_cfg = TrainConfig(
        steps=steps,
        batch_size=config.batch_size,
        learning_rate=config.learning_rate,
        clip_norm=None,
        seed=config.seed,
        probe_interval=steps,
    )
    sink: list = []
    train(corpus, cal_cfg, init, norm_sink=sink)
    return np.concatenate(sink[warmup:])

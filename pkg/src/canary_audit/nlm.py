"""Fixed-context autoregressive character language model.

A Bengio-style feed-forward model: the previous `context_len` symbols are
embedded, concatenated, passed through one tanh hidden layer and a linear
output layer with log-softmax over the 28 scored symbols (letters, space,
EOS). The padding symbol has an embedding row but no output logit.

The architecture is deliberately simple so that per-example gradients are
exact, analytic, and cheap to verify against finite differences; what the
experiments need from the model is only that it can memorize.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .seeds import derive_seed
from .vocab import VOCAB

_MAGIC = b"NLM1"


@dataclass(frozen=True)
class NlmConfig:
    context_len: int = 8
    embed_dim: int = 16
    hidden_dim: int = 64
    vocab_size: int = 28  # scored symbols; padding adds one context-only row
    size_multiplier: Fraction = Fraction(1)

    def __post_init__(self):
        object.__setattr__(self, "size_multiplier", Fraction(self.size_multiplier))
        if min(self.context_len, self.embed_dim, self.hidden_dim, self.vocab_size) < 1:
            raise ValueError("all model dimensions must be >= 1")
        if self.size_multiplier <= 0:
            raise ValueError("size_multiplier must be positive")
        for name in ("embed_dim", "hidden_dim"):
            scaled = getattr(self, name) * self.size_multiplier
            if scaled.denominator != 1 or scaled < 1:
                raise ValueError(
                    f"size_multiplier {self.size_multiplier} gives non-integral {name}"
                )

    @property
    def eff_embed_dim(self) -> int:
        return int(self.embed_dim * self.size_multiplier)

    @property
    def eff_hidden_dim(self) -> int:
        return int(self.hidden_dim * self.size_multiplier)

    @property
    def input_dim(self) -> int:
        return self.context_len * self.eff_embed_dim

    def param_count(self) -> int:
        e, h, v = self.eff_embed_dim, self.eff_hidden_dim, self.vocab_size
        return (v + 1) * e + self.context_len * e * h + h + h * v + v


@dataclass
class NlmParams:
    """All trainable parameters, as float64 arrays."""

    config: NlmConfig
    seed: int
    embedding: np.ndarray  # (V+1, E)
    W1: np.ndarray  # (K*E, H)
    b1: np.ndarray  # (H,)
    W2: np.ndarray  # (H, V)
    b2: np.ndarray  # (V,)

    def arrays(self):
        return (self.embedding, self.W1, self.b1, self.W2, self.b2)

    def copy(self) -> "NlmParams":
        return NlmParams(self.config, self.seed, *(a.copy() for a in self.arrays()))


@dataclass
class GradientRecord:
    """Gradient with the same shapes as NlmParams."""

    embedding: np.ndarray
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    def arrays(self):
        return (self.embedding, self.W1, self.b1, self.W2, self.b2)

    def global_norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(a * a)) for a in self.arrays())))

    def scaled(self, factor: float) -> "GradientRecord":
        return GradientRecord(*(a * factor for a in self.arrays()))

    @classmethod
    def zeros(cls, config: NlmConfig) -> "GradientRecord":
        e, h, v = config.eff_embed_dim, config.eff_hidden_dim, config.vocab_size
        return cls(
            np.zeros((v + 1, e)),
            np.zeros((config.context_len * e, h)),
            np.zeros(h),
            np.zeros((h, v)),
            np.zeros(v),
        )


def init_params(config: NlmConfig, seed: int) -> NlmParams:
    """Uniform +-1/sqrt(fan_in) weights, zero biases, deterministic in seed."""
    rng = np.random.default_rng(derive_seed(seed, "init"))
    e, h, v = config.eff_embed_dim, config.eff_hidden_dim, config.vocab_size

    def uniform(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    return NlmParams(
        config=config,
        seed=seed,
        embedding=uniform((v + 1, e), 1),
        W1=uniform((config.context_len * e, h), config.context_len * e),
        b1=np.zeros(h),
        W2=uniform((h, v), h),
        b2=np.zeros(v),
    )


def encode_text(text) -> np.ndarray:
    if isinstance(text, str):
        if not text:
            raise ValueError("text must be nonempty")
        return VOCAB.encode(text)
    sym = np.asarray(text, dtype=np.int32)
    if sym.size == 0:
        raise ValueError("text must be nonempty")
    return sym


def contexts_and_targets(sym: np.ndarray, config: NlmConfig):
    """Left-padded K-symbol contexts and next-symbol targets, EOS included.

    Position t (0 <= t <= L) predicts sym[t] (or EOS at t == L) from the K
    preceding symbols, with the padding symbol filling positions before
    the sequence start. EOS is index V-1 and padding index V, which for
    the real 28-symbol model coincide with vocab.EOS and vocab.PAD.
    """
    k = config.context_len
    eos, pad = config.vocab_size - 1, config.vocab_size
    if sym.min() < 0 or sym.max() >= eos:
        raise ValueError("text symbols must lie in the stored-text range")
    length = sym.size
    padded = np.concatenate([np.full(k, pad, dtype=np.int32), sym.astype(np.int32)])
    ctx = np.lib.stride_tricks.sliding_window_view(padded, k)[: length + 1]
    targets = np.concatenate([sym.astype(np.int32), np.array([eos], dtype=np.int32)])
    return np.ascontiguousarray(ctx), targets


def _forward(params: NlmParams, ctx: np.ndarray):
    """Batched forward over a (P, K) context matrix.

    Returns (X, H, logp): the concatenated embeddings, hidden activations
    and normalized log-probabilities, each with P rows.
    """
    p = ctx.shape[0]
    x = params.embedding[ctx].reshape(p, -1)
    h = np.tanh(x @ params.W1 + params.b1)
    logits = h @ params.W2 + params.b2
    logits -= logits.max(axis=1, keepdims=True)
    logp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
    return x, h, logp


def log_probs(params: NlmParams, context) -> np.ndarray:
    """Log-probabilities of the V scored symbols after `context`.

    `context` holds context_len symbol indices; the padding symbol is
    allowed (and expected near the sequence start).
    """
    ctx = np.asarray(context, dtype=np.int32)
    if ctx.shape != (params.config.context_len,):
        raise ValueError(f"context must hold {params.config.context_len} symbols")
    if ctx.min() < 0 or ctx.max() > params.config.vocab_size:
        raise ValueError("context symbol index out of range")
    _, _, logp = _forward(params, ctx[None, :])
    return logp[0]


def position_log_probs(params: NlmParams, text) -> np.ndarray:
    """Per-position log p(symbol | context) over the text plus terminal EOS."""
    sym = encode_text(text)
    ctx, targets = contexts_and_targets(sym, params.config)
    _, _, logp = _forward(params, ctx)
    return logp[np.arange(targets.size), targets]


def sequence_nll(params: NlmParams, text) -> float:
    """Teacher-forced negative log-likelihood of `text`, terminal EOS included."""
    return float(-position_log_probs(params, text).sum())


def per_example_grad(params: NlmParams, text) -> GradientRecord:
    """Exact gradient of sequence_nll with respect to every parameter."""
    sym = encode_text(text)
    cfg = params.config
    ctx, targets = contexts_and_targets(sym, cfg)
    x, h, logp = _forward(params, ctx)
    p = ctx.shape[0]

    dlogits = np.exp(logp)
    dlogits[np.arange(p), targets] -= 1.0

    grad = GradientRecord.zeros(cfg)
    grad.b2[:] = dlogits.sum(axis=0)
    grad.W2[:] = h.T @ dlogits
    dh = dlogits @ params.W2.T
    dpre = dh * (1.0 - h * h)
    grad.b1[:] = dpre.sum(axis=0)
    grad.W1[:] = x.T @ dpre
    dx = (dpre @ params.W1.T).reshape(p, cfg.context_len, cfg.eff_embed_dim)
    np.add.at(grad.embedding, ctx, dx)
    return grad


def canary_probe(params: NlmParams, canary_text: str, n: int):
    """Bits assigned to a canary's letters and EOS, against the 26**-n floor.

    Only letter positions and the terminal EOS are scored; the spaces are
    part of the format, not the secret, and excluding them makes the
    comparison land exactly on the uniform-letters baseline.

    Returns (total_log2_likelihood, ratio_to_baseline); a ratio well above
    zero means the model assigns the canary far more likelihood than any
    model that knows only the format.
    """
    from .textgen import is_canary_text

    if not is_canary_text(canary_text, n):
        raise ValueError(f"text does not match the {n}-letter canary grammar")
    logp = position_log_probs(params, canary_text)
    letter_positions = np.arange(0, 2 * n - 1, 2)
    total_log2 = float(logp[letter_positions].sum() + logp[-1]) / np.log(2.0)
    ratio = total_log2 + n * np.log2(26.0)
    return total_log2, float(ratio)


def save_checkpoint(params: NlmParams, path):
    """Write a checkpoint: magic, one text header line, float64 LE arrays."""
    cfg = params.config
    header = (
        f"K={cfg.context_len} embed_dim={cfg.embed_dim} hidden_dim={cfg.hidden_dim} "
        f"V={cfg.vocab_size} size_multiplier={cfg.size_multiplier} seed={params.seed}\n"
    )
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(header.encode("ascii"))
        for arr in params.arrays():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> NlmParams:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError(f"{path} is not an NLM1 checkpoint")
        header = _read_line(fh)
        fields = dict(item.split("=", 1) for item in header.split())
        config = NlmConfig(
            context_len=int(fields["K"]),
            embed_dim=int(fields["embed_dim"]),
            hidden_dim=int(fields["hidden_dim"]),
            vocab_size=int(fields["V"]),
            size_multiplier=Fraction(fields["size_multiplier"]),
        )
        seed = int(fields["seed"])
        template = GradientRecord.zeros(config)
        arrays = []
        for ref in template.arrays():
            raw = fh.read(ref.size * 8)
            if len(raw) != ref.size * 8:
                raise ValueError(f"{path} is truncated")
            arrays.append(np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(ref.shape))
    return NlmParams(config, seed, *arrays)


def _read_line(fh: io.BufferedReader) -> str:
    chars = bytearray()
    while True:
        b = fh.read(1)
        if not b or b == b"\n":
            break
        chars.extend(b)
    return chars.decode("ascii")

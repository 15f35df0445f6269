"""Experiment configuration: flat `section.key = value` text files.

Sections are fixed (corpus, canary, lm, train, channel, fusion, mia,
audit) and unknown keys are errors. Defaults reproduce the reference
desk-scale audit: 200k background sentences, Table-1 canary layout at
scale divisor 64, the default LM, 20k training steps.

The channel defaults here are the audit's calibrated operating point;
they are deliberately separate from the ChannelConfig dataclass defaults,
which describe the channel type itself.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .channel import ChannelConfig, ObscureSpec
from .fusion import BeamConfig
from .nlm import NlmConfig
from .seeds import derive_seed
from .textgen import BackgroundSpec, CanarySpec
from .trainer import TrainConfig

_GRID_L1 = ",".join(f"{i / 10:g}" for i in range(11))  # 0 .. 1.0
_GRID_L2 = ",".join(f"{i / 10:g}" for i in range(6))  # 0 .. 0.5

SCHEMA = {
    "corpus.sentence_count": (int, 200000),
    "corpus.word_vocab_size": (int, 1000),
    "corpus.markov_order": (int, 1),
    "corpus.words_min": (int, 2),
    "corpus.words_max": (int, 5),
    "corpus.dev_sentences": (int, 128),
    "canary.n_letters": (int, 6),
    "canary.scale_divisor": (int, 64),
    "lm.context_len": (int, 8),
    "lm.embed_dim": (int, 16),
    "lm.hidden_dim": (int, 64),
    "lm.size_multiplier": (str, "1"),
    "train.steps": (int, 20000),
    "train.batch_size": (int, 64),
    "train.learning_rate": (float, 1e-3),
    "train.clip_norm": (str, "off"),
    "train.probe_interval": (int, 2000),
    "channel.epsilon": (float, 0.9),
    "channel.noise_sigma": (float, 2.0),
    "fusion.beam_width": (int, 8),
    "fusion.lambda1_grid": (str, _GRID_L1),
    "fusion.lambda2_grid": (str, _GRID_L2),
    "mia.prefix_letters": (str, "auto"),
    "mia.epsilon": (float, 0.9),
    "mia.noise_sigma": (float, 2.0),
    "mia.max_per_class": (int, 0),
    "mia.unclipped_tag": (str, "can-clip-off"),
    "mia.clipped_tag": (str, "can-clip-p1"),
    "mia.baseline_tag": (str, "baseline"),
    "audit.seed": (int, 20260811),
    "audit.size_multipliers": (str, "0.5,1,2"),
    "audit.clip_levels": (str, "off,p1"),
    "audit.calibration_steps": (int, 600),
    "audit.calibration_warmup": (int, 200),
    "audit.threads": (int, 2),
}


def parse_config_text(text: str) -> dict:
    """Parse the flat key-value format into a fully-typed mapping."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected `section.key = value`")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in SCHEMA:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        values[key] = value

    typed = {}
    for key, (kind, default) in SCHEMA.items():
        if key in values:
            try:
                typed[key] = kind(values[key])
            except ValueError as exc:
                raise ValueError(f"key {key}: {exc}") from None
        else:
            typed[key] = default
    return typed


def load_config(path=None, overrides: dict | None = None) -> "Experiment":
    text = ""
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    values = parse_config_text(text)
    for key, value in (overrides or {}).items():
        if key not in SCHEMA:
            raise ValueError(f"unknown key {key!r}")
        values[key] = SCHEMA[key][0](value)
    return Experiment(values)


def _parse_floats(text: str) -> list:
    items = [part.strip() for part in text.split(",") if part.strip()]
    return [float(part) for part in items]


@dataclass
class Experiment:
    """Typed view over a validated configuration mapping."""

    values: dict

    def __getitem__(self, key):
        return self.values[key]

    @property
    def seed(self) -> int:
        return self.values["audit.seed"]

    def to_text(self) -> str:
        lines = [f"{key} = {self.values[key]}" for key in SCHEMA]
        return "\n".join(lines) + "\n"

    # --- module config builders -------------------------------------

    def background_spec(self, extra_sentences: int = 0) -> BackgroundSpec:
        return BackgroundSpec(
            sentence_count=self.values["corpus.sentence_count"] + extra_sentences,
            word_vocab_size=self.values["corpus.word_vocab_size"],
            markov_order=self.values["corpus.markov_order"],
            words_per_sentence=(
                self.values["corpus.words_min"],
                self.values["corpus.words_max"],
            ),
            seed=self.seed,
        )

    def canary_spec(self) -> CanarySpec:
        return CanarySpec(
            n_letters=self.values["canary.n_letters"],
            scale_divisor=self.values["canary.scale_divisor"],
            seed=self.seed,
        )

    def nlm_config(self, size_multiplier=None) -> NlmConfig:
        multiplier = Fraction(
            self.values["lm.size_multiplier"] if size_multiplier is None else size_multiplier
        )
        return NlmConfig(
            context_len=self.values["lm.context_len"],
            embed_dim=self.values["lm.embed_dim"],
            hidden_dim=self.values["lm.hidden_dim"],
            size_multiplier=multiplier,
        )

    def train_config(self, clip_norm=None, probe_sets=None) -> TrainConfig:
        return TrainConfig(
            steps=self.values["train.steps"],
            batch_size=self.values["train.batch_size"],
            learning_rate=self.values["train.learning_rate"],
            clip_norm=clip_norm,
            seed=derive_seed(self.seed, "train"),
            probe_interval=self.values["train.probe_interval"],
            probe_sets=probe_sets or {},
            probe_n_letters=self.values["canary.n_letters"],
        )

    def channel_config(self) -> ChannelConfig:
        return ChannelConfig(
            epsilon=self.values["channel.epsilon"],
            noise_sigma=self.values["channel.noise_sigma"],
            seed=derive_seed(self.seed, "channel"),
        )

    def mia_channel_config(self) -> ChannelConfig:
        return ChannelConfig(
            epsilon=self.values["mia.epsilon"],
            noise_sigma=self.values["mia.noise_sigma"],
            seed=derive_seed(self.seed, "mia-channel"),
        )

    def obscure_spec(self) -> ObscureSpec:
        raw = self.values["mia.prefix_letters"]
        if raw == "auto":
            return ObscureSpec()
        return ObscureSpec(prefix_letters=int(raw))

    def beam_config(self) -> BeamConfig:
        return BeamConfig(width=self.values["fusion.beam_width"])

    def lambda_grids(self):
        return (
            _parse_floats(self.values["fusion.lambda1_grid"]),
            _parse_floats(self.values["fusion.lambda2_grid"]),
        )

    def size_multipliers(self) -> list:
        return [
            Fraction(part.strip())
            for part in self.values["audit.size_multipliers"].split(",")
            if part.strip()
        ]

    def clip_levels(self) -> list:
        return [
            part.strip()
            for part in self.values["audit.clip_levels"].split(",")
            if part.strip()
        ]

    def threads(self) -> int:
        import os

        workers = self.values["audit.threads"]
        env = os.environ.get("CANARY_AUDIT_THREADS")
        if env is not None:
            workers = min(workers, int(env))
        return max(workers, 0)

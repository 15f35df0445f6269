"""Experiment orchestration.

Three experiment families over one run directory:

* memorization audit - per LM size, train a canary-merged (CAN) and an
  extraneous-merged (EXT) model, tune fusion weights on held-out noisy
  background, and decode clean renders of every canary frequency class;
* clip sweep - per clip level, train a CAN/EXT pair and report the WER
  of the CAN model relative to its EXT twin (WERR) per frequency class;
* membership inference - evaluate the exact-match classifier on
  partially obscured renders against unclipped, clipped, and baseline
  models, per frequency class.

Models are cached by a configuration fingerprint that deliberately
excludes which sequence set was merged, so a CAN/EXT pair is guaranteed
to differ only in the inserted lines; the same fingerprints let separate
experiments share identical trainings. Everything written into the run
directory is a pure function of (config, master seed): reruns are
byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from pathlib import Path

import numpy as np

from . import fusion, nlm, trainer
from .channel import ChannelConfig, InternalLm, ObscureSpec, fit_internal_lm, render_clean, render_obscured
from .config import Experiment
from .errors import CalibrationError, MissingArtifactError
from .fusion import BeamConfig, DecodeResult, FusionWeights, beam_decode, tune_weights
from .metrics import corpus_wer, precision_recall, werr
from .seeds import derive_seed
from .textgen import SequenceSet, TrainingCorpus, build_canary_sets, gen_background, merge_corpus
from .vocab import VOCAB

FRAGMENTS = {
    "memorization": "report_memorization.csv",
    "clip_sweep": "report_clip.csv",
    "mia": "report_mia.csv",
}

_FRAGMENT_HEADER = "experiment,model_tag,metric,key,value\n"


@dataclass
class MiaConfig:
    obscure: ObscureSpec
    channel: ChannelConfig
    beam: BeamConfig
    weights_source: str = "tuned"  # "tuned" | "explicit"
    explicit_weights: FusionWeights | None = None

    def weights_for(self, bundle: "ModelBundle") -> FusionWeights:
        if self.weights_source == "explicit":
            if self.explicit_weights is None:
                raise ValueError("explicit weights requested but none given")
            return self.explicit_weights
        return bundle.weights


@dataclass
class ModelBundle:
    tag: str
    merge: str  # "canaries" | "extraneous" | "none"
    clip_label: str  # "off", "p1", "32", ...
    clip_value: float | None
    size: Fraction
    params: nlm.NlmParams
    ilm: InternalLm
    weights: FusionWeights
    fingerprint: str
    checkpoint: str = ""


@dataclass
class AuditReport:
    wer_table: dict = field(default_factory=dict)  # (model_tag, set) -> WER
    werr_table: dict = field(default_factory=dict)  # (clip_label, class) -> WERR %
    pr_table: dict = field(default_factory=dict)  # (model_tag, class) -> (P, R)
    metadata: dict = field(default_factory=dict)


def mia_predict(bundle: ModelBundle, example_text: str, cfg: MiaConfig) -> bool:
    """Exact-match membership prediction from one obscured decode."""
    lattice = render_obscured(example_text, cfg.channel, cfg.obscure)
    result = beam_decode(lattice, bundle.params, bundle.ilm, cfg.weights_for(bundle), cfg.beam)
    return _exact_match(result, example_text, bundle.params.config.vocab_size)


def _exact_match(result: DecodeResult, reference: str, vocab_size: int) -> bool:
    hyp = result.transcript[result.transcript != vocab_size - 1]  # EOS stripped
    ref = VOCAB.encode(reference)
    return hyp.size == ref.size and bool(np.array_equal(hyp, ref))


def _pmap(fn, items, workers: int):
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


class AuditRun:
    """Shared data and the model-bundle cache for one run directory."""

    def __init__(self, cfg: Experiment, out):
        self.cfg = cfg
        self.out = Path(out)
        (self.out / "checkpoints").mkdir(parents=True, exist_ok=True)
        (self.out / "decodes").mkdir(exist_ok=True)
        (self.out / "reports").mkdir(exist_ok=True)
        self._bundles: dict = {}  # fingerprint -> ModelBundle
        self._rows: list = []  # bundles.csv rows, insertion ordered
        self._calibration_norms = None
        self._load_bundle_rows()

    # ----- shared data ------------------------------------------------

    @cached_property
    def sets(self):
        return build_canary_sets(self.cfg.canary_spec())

    @property
    def canaries(self) -> SequenceSet:
        return self.sets[0]

    @property
    def extraneous(self) -> SequenceSet:
        return self.sets[1]

    @cached_property
    def _split_corpus(self):
        dev_n = self.cfg["corpus.dev_sentences"]
        corpus = gen_background(self.cfg.background_spec(extra_sentences=dev_n))
        train_lines = corpus.sequences[: self.cfg["corpus.sentence_count"]]
        dev_lines = corpus.sequences[self.cfg["corpus.sentence_count"] :]
        background = TrainingCorpus.from_lines(train_lines, seed=corpus.seed)
        return background, dev_lines

    @property
    def background(self) -> TrainingCorpus:
        return self._split_corpus[0]

    @property
    def dev_sentences(self) -> list:
        return self._split_corpus[1]

    @cached_property
    def ilm(self) -> InternalLm:
        # the acoustic side never sees canaries
        return fit_internal_lm(self.background)

    @cached_property
    def dev_renders(self) -> list:
        # fully-noised renders: tuning must reward the LM for rescuing frames
        channel = self.cfg.channel_config()
        noise_all = ObscureSpec(prefix_letters=0)
        return [
            (render_obscured(text, channel, noise_all), text)
            for text in self.dev_sentences
        ]

    @cached_property
    def probe_sets(self) -> dict:
        return {
            f"CAN{f}": self.canaries.by_class(f)
            for f, _ in self.cfg.canary_spec().scaled_classes()
        }

    def class_frequencies(self) -> list:
        return [f for f, _ in self.cfg.canary_spec().scaled_classes()]

    def mia_config(self) -> MiaConfig:
        return MiaConfig(
            obscure=self.cfg.obscure_spec(),
            channel=self.cfg.mia_channel_config(),
            beam=self.cfg.beam_config(),
        )

    # ----- clip calibration --------------------------------------------

    def calibration_norms(self) -> np.ndarray:
        if self._calibration_norms is None:
            corpus = self.merged_corpus("canaries")
            config = self.cfg.nlm_config()
            init = nlm.init_params(config, derive_seed(self.cfg.seed, "init"))
            self._calibration_norms = trainer.calibrate_grad_norms(
                corpus,
                self.cfg.train_config(),
                init,
                steps=self.cfg["audit.calibration_steps"],
                warmup=self.cfg["audit.calibration_warmup"],
            )
        return self._calibration_norms

    def resolve_clip(self, label: str) -> float | None:
        if label == "off":
            return None
        if label.startswith("p"):
            percentile = float(label[1:])
            return float(np.percentile(self.calibration_norms(), percentile))
        return float(label)

    # ----- bundle cache --------------------------------------------------

    def merged_corpus(self, merge: str) -> TrainingCorpus:
        if merge == "canaries":
            return merge_corpus(self.background, self.canaries.inserted())
        if merge == "extraneous":
            return merge_corpus(self.background, self.extraneous.inserted())
        if merge == "none":
            return merge_corpus(self.background, SequenceSet([], "canary"))
        raise ValueError(f"unknown merge kind {merge!r}")

    def fingerprint(self, clip_value, size: Fraction) -> str:
        keys = [k for k in self.cfg.values if not k.startswith("mia.")]
        payload = {k: self.cfg.values[k] for k in sorted(keys)}
        payload["resolved.clip_value"] = repr(clip_value)
        payload["resolved.size"] = str(Fraction(size))
        digest = hashlib.sha256(json.dumps(payload, sort_keys=True).encode())
        return digest.hexdigest()[:16]

    def ensure_bundles(self, specs: list) -> dict:
        """Train (or load) the bundles for (tag, merge, clip_label, size) specs.

        Distinct trainings run in parallel up to the configured worker
        count; registration order follows the input order, so the on-disk
        bundle table is deterministic.
        """
        plan = []
        for tag, merge, clip_label, size in specs:
            clip_value = self.resolve_clip(clip_label)
            fp = self.fingerprint(clip_value, size)
            plan.append((tag, merge, clip_label, clip_value, Fraction(size), fp))

        missing = []
        seen = set()
        for item in plan:
            key = f"{item[5]}:{item[1]}"
            if key not in self._bundles and key not in seen:
                missing.append(item)
                seen.add(key)

        trained = _pmap(
            lambda item: self._train_bundle(*item), missing, self.cfg.threads()
        )
        for bundle in trained:
            self._bundles[f"{bundle.fingerprint}:{bundle.merge}"] = bundle
            self._register(bundle)

        out = {}
        for tag, merge, clip_label, clip_value, size, fp in plan:
            bundle = self._bundles[f"{fp}:{merge}"]
            if bundle.tag != tag and not self._has_row(tag):
                alias = ModelBundle(
                    tag, merge, clip_label, clip_value, size,
                    bundle.params, bundle.ilm, bundle.weights, fp, bundle.checkpoint,
                )
                self._register(alias)
                out[tag] = alias
            else:
                out[tag] = bundle
        return out

    def _train_bundle(self, tag, merge, clip_label, clip_value, size, fp) -> ModelBundle:
        corpus = self.merged_corpus(merge)
        config = self.cfg.nlm_config(size_multiplier=size)
        init = nlm.init_params(config, derive_seed(self.cfg.seed, "init"))
        train_cfg = self.cfg.train_config(clip_norm=clip_value, probe_sets=self.probe_sets)
        params, report = trainer.train(corpus, train_cfg, init)

        grid1, grid2 = self.cfg.lambda_grids()
        weights = tune_weights(
            self.dev_renders, params, self.ilm, grid1, grid2, self.cfg.beam_config()
        )

        checkpoint = f"checkpoints/{tag}.nlm"
        nlm.save_checkpoint(params, self.out / checkpoint)
        report.save_csv(self.out / "reports" / f"train_{tag}.csv")
        return ModelBundle(
            tag, merge, clip_label, clip_value, size, params, self.ilm, weights, fp, checkpoint
        )

    # ----- bundle persistence ---------------------------------------------

    def _bundles_csv(self) -> Path:
        return self.out / "bundles.csv"

    def _has_row(self, tag: str) -> bool:
        return any(row[0] == tag for row in self._rows)

    def _register(self, bundle: ModelBundle):
        if self._has_row(bundle.tag):
            return
        self._rows.append(
            (
                bundle.tag,
                bundle.checkpoint,
                bundle.merge,
                bundle.clip_label,
                "off" if bundle.clip_value is None else repr(bundle.clip_value),
                str(bundle.size),
                repr(bundle.weights.lambda1),
                repr(bundle.weights.lambda2),
                bundle.fingerprint,
            )
        )
        self._rewrite_bundles_csv()

    def _rewrite_bundles_csv(self):
        with open(self._bundles_csv(), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(
                "tag,checkpoint,merge,clip_label,clip_value,size,lambda1,lambda2,fingerprint\n"
            )
            for row in self._rows:
                fh.write(",".join(row) + "\n")

    def _load_bundle_rows(self):
        path = self._bundles_csv()
        if not path.exists():
            return
        with open(path, "r", encoding="utf-8") as fh:
            lines = [line.rstrip("\n") for line in fh][1:]
        self._rows = [tuple(line.split(",")) for line in lines if line]

    def load_bundle(self, tag: str) -> ModelBundle:
        """Rehydrate a bundle trained by an earlier command in this directory."""
        for row in self._rows:
            if row[0] != tag:
                continue
            (_, checkpoint, merge, clip_label, clip_text, size, lam1, lam2, fp) = row
            path = self.out / checkpoint
            if not path.exists():
                raise MissingArtifactError(f"checkpoint {path} is missing")
            params = nlm.load_checkpoint(path)
            clip_value = None if clip_text == "off" else float(clip_text)
            bundle = ModelBundle(
                tag, merge, clip_label, clip_value, Fraction(size), params,
                self.ilm, FusionWeights(float(lam1), float(lam2)), fp, checkpoint,
            )
            self._bundles.setdefault(f"{fp}:{merge}", bundle)
            return bundle
        raise MissingArtifactError(
            f"no trained bundle tagged {tag!r} in {self.out} (run the training "
            "command for it first)"
        )

    def get_bundle(self, tag: str, merge: str, clip_label: str, size) -> ModelBundle:
        try:
            return self.load_bundle(tag)
        except MissingArtifactError:
            return self.ensure_bundles([(tag, merge, clip_label, size)])[tag]

    def update_weights(self, tag: str, weights: FusionWeights):
        for i, row in enumerate(self._rows):
            if row[0] == tag:
                row = list(row)
                row[6] = repr(weights.lambda1)
                row[7] = repr(weights.lambda2)
                self._rows[i] = tuple(row)
                self._rewrite_bundles_csv()
                key = f"{row[8]}:{row[2]}"
                if key in self._bundles:
                    self._bundles[key].weights = weights
                return
        raise MissingArtifactError(f"no trained bundle tagged {tag!r} in {self.out}")

    def decode_named_set(self, bundle: ModelBundle, set_name: str, render: str) -> float:
        """CLI decode entry: `dev` or a frequency class name like CAN1."""
        if set_name == "dev":
            return self.decode_dev(bundle.tag, bundle.params, bundle.weights)
        if not set_name.startswith("CAN"):
            raise ValueError(f"unknown evaluation set {set_name!r}")
        frequency = int(set_name[3:])
        if frequency not in self.class_frequencies():
            raise ValueError(f"no frequency class {set_name!r} in this layout")
        texts = self.canaries.by_class(frequency)
        if render == "clean":
            return self.decode_clean_set(
                bundle.tag, bundle.params, bundle.weights, set_name, texts
            )
        mia_cfg = self.mia_config()
        renders = [
            (render_obscured(t, mia_cfg.channel, mia_cfg.obscure), t) for t in texts
        ]
        return self._decode(
            bundle.tag, bundle.params, bundle.weights, f"{set_name}-obscured", renders
        )

    # ----- decoding ---------------------------------------------------------

    def decode_clean_set(self, bundle_tag, params, weights, set_name, texts) -> float:
        channel = self.cfg.channel_config()
        return self._decode(
            bundle_tag, params, weights, set_name,
            [(render_clean(t, channel), t) for t in texts],
        )

    def decode_dev(self, bundle_tag, params, weights) -> float:
        return self._decode(bundle_tag, params, weights, "dev", self.dev_renders)

    def _decode(self, tag, params, weights, set_name, renders) -> float:
        beam = self.cfg.beam_config()
        rows = []
        pairs = []
        for i, (lattice, reference) in enumerate(renders):
            result = beam_decode(lattice, params, self.ilm, weights, beam)
            rows.append((f"{set_name}-{i}", reference, result))
            pairs.append((reference.split(), result.text().split()))
        fusion.write_decode_csv(self.out / "decodes" / f"{tag}__{set_name}.csv", rows)
        return corpus_wer(pairs)

    # ----- fragments -----------------------------------------------------------

    def write_fragment(self, experiment: str, rows: list):
        path = self.out / FRAGMENTS[experiment]
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(_FRAGMENT_HEADER)
            for model_tag, metric, key, value in rows:
                fh.write(f"{experiment},{model_tag},{metric},{key},{value!r}\n")


def _size_tag(prefix: str, size) -> str:
    return f"{prefix}-size-{float(size):g}"


def run_memorization_audit(run: AuditRun) -> AuditReport:
    """WER of CAN/EXT models on every canary class, per LM size."""
    report = AuditReport(metadata={"seed": run.cfg.seed})
    sizes = run.cfg.size_multipliers()
    specs = []
    for size in sizes:
        specs.append((_size_tag("can", size), "canaries", "off", size))
        specs.append((_size_tag("ext", size), "extraneous", "off", size))
    bundles = run.ensure_bundles(specs)

    for size in sizes:
        can = bundles[_size_tag("can", size)]
        ext = bundles[_size_tag("ext", size)]
        assert can.fingerprint == ext.fingerprint, (
            "paired models must share every setting except the merged set"
        )

    rows = []
    frequencies = run.class_frequencies()
    am_only_done = False
    for size in sizes:
        for tag in (_size_tag("can", size), _size_tag("ext", size)):
            bundle = bundles[tag]
            for f in frequencies:
                wer_value = run.decode_clean_set(
                    tag, bundle.params, bundle.weights, f"CAN{f}", run.canaries.by_class(f)
                )
                report.wer_table[(tag, f"CAN{f}")] = wer_value
                rows.append((tag, "wer", f"CAN{f}", wer_value))
            dev_wer = run.decode_dev(tag, bundle.params, bundle.weights)
            report.wer_table[(tag, "dev")] = dev_wer
            rows.append((tag, "wer", "dev", dev_wer))
        if not am_only_done:
            am_only_done = True
            reference = bundles[_size_tag("can", size)]
            zero = FusionWeights(0.0, 0.0)
            for f in frequencies:
                wer_value = run.decode_clean_set(
                    "am-only", reference.params, zero, f"CAN{f}", run.canaries.by_class(f)
                )
                report.wer_table[("am-only", f"CAN{f}")] = wer_value
                rows.append(("am-only", "wer", f"CAN{f}", wer_value))
            dev_wer = run.decode_dev("am-only", reference.params, zero)
            report.wer_table[("am-only", "dev")] = dev_wer
            rows.append(("am-only", "wer", "dev", dev_wer))

    run.write_fragment("memorization", rows)
    return report


def run_clip_sweep(run: AuditRun) -> AuditReport:
    """WERR per frequency class at each clip level, with dev WER per model."""
    report = AuditReport(metadata={"seed": run.cfg.seed})
    levels = run.cfg.clip_levels()
    specs = []
    for label in levels:
        specs.append((f"can-clip-{label}", "canaries", label, Fraction(1)))
        specs.append((f"ext-clip-{label}", "extraneous", label, Fraction(1)))
    bundles = run.ensure_bundles(specs)

    rows = []
    frequencies = run.class_frequencies()
    for label in levels:
        can = bundles[f"can-clip-{label}"]
        ext = bundles[f"ext-clip-{label}"]
        assert can.fingerprint == ext.fingerprint, (
            "paired models must share every setting except the merged set"
        )
        for f in frequencies:
            texts = run.canaries.by_class(f)
            wer_can = run.decode_clean_set(can.tag, can.params, can.weights, f"CAN{f}", texts)
            wer_ext = run.decode_clean_set(ext.tag, ext.params, ext.weights, f"CAN{f}", texts)
            value = werr(wer_can, wer_ext)
            report.werr_table[(label, f"CAN{f}")] = value
            rows.append((f"clip-{label}", "werr", f"CAN{f}", value))
        for bundle in (can, ext):
            dev_wer = run.decode_dev(bundle.tag, bundle.params, bundle.weights)
            report.wer_table[(bundle.tag, "dev")] = dev_wer
            rows.append((bundle.tag, "wer", "dev", dev_wer))
        if can.clip_value is not None:
            rows.append((f"clip-{label}", "clip_value", "resolved", can.clip_value))

    run.write_fragment("clip_sweep", rows)
    return report


def run_mia_eval(run: AuditRun, bundles: dict | None = None) -> AuditReport:
    """Precision/recall of the membership classifier per frequency class.

    Requires three bundles: the unclipped CAN model, a clipped CAN model,
    and a baseline trained on neither sequence set. Aborts if the baseline
    model's pooled precision strays from chance, which would mean the
    channel settings fake (or mask) memorization.
    """
    cfg = run.cfg
    if bundles is None:
        bundles = {
            "unclipped": run.load_bundle(cfg["mia.unclipped_tag"]),
            "clipped": run.load_bundle(cfg["mia.clipped_tag"]),
            "baseline": run.load_bundle(cfg["mia.baseline_tag"]),
        }
    mia_cfg = run.mia_config()
    beam = mia_cfg.beam
    limit = cfg["mia.max_per_class"]
    report = AuditReport(metadata={"seed": cfg.seed})

    rows = []
    baseline_preds = []
    baseline_labels = []
    for role in ("unclipped", "clipped", "baseline"):
        bundle = bundles[role]
        weights = mia_cfg.weights_for(bundle)
        for f in run.class_frequencies():
            cans = run.canaries.by_class(f)
            exts = run.extraneous.by_class(f)
            if limit:
                cans, exts = cans[:limit], exts[:limit]
            decode_rows = []
            preds = []
            labels = []
            for side, texts in (("can", cans), ("ext", exts)):
                for i, text in enumerate(texts):
                    lattice = render_obscured(text, mia_cfg.channel, mia_cfg.obscure)
                    result = beam_decode(lattice, bundle.params, bundle.ilm, weights, beam)
                    decode_rows.append((f"{side}-{i}", text, result))
                    preds.append(_exact_match(result, text, bundle.params.config.vocab_size))
                    labels.append(side == "can")
            fusion.write_decode_csv(
                run.out / "decodes" / f"mia_{role}__CAN{f}.csv", decode_rows
            )
            precision, recall = precision_recall(preds, labels)
            report.pr_table[(role, f"CAN{f}")] = (precision, recall)
            rows.append((role, "precision", f"CAN{f}", precision))
            rows.append((role, "recall", f"CAN{f}", recall))
            if role == "baseline":
                baseline_preds.extend(preds)
                baseline_labels.extend(labels)

    pooled_precision, pooled_recall = precision_recall(baseline_preds, baseline_labels)
    rows.append(("baseline", "precision", "pooled", pooled_precision))
    rows.append(("baseline", "recall", "pooled", pooled_recall))
    report.metadata["baseline_pooled"] = (pooled_precision, pooled_recall)
    if abs(pooled_precision - 0.5) > 0.1:
        raise CalibrationError(
            f"baseline MIA precision {pooled_precision:.3f} is too far from "
            "chance; channel settings are degenerate"
        )

    run.write_fragment("mia", rows)
    return report


# ----- report consolidation ------------------------------------------------


def _read_fragment(path: Path) -> list:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [line.rstrip("\n") for line in fh][1:]
    return [line.split(",", 4) for line in lines if line]


def consolidate_report(out) -> list:
    """Merge fragments into report.csv plus one data file per figure analog.

    Returns a list of completeness warnings (missing fragments/cells);
    raises MissingArtifactError if nothing has run at all.
    """
    out = Path(out)
    warnings = []
    rows = []
    present = {}
    for name, filename in FRAGMENTS.items():
        path = out / filename
        if path.exists():
            fragment_rows = _read_fragment(path)
            present[name] = fragment_rows
            rows.extend(fragment_rows)
        else:
            warnings.append(f"missing fragment: {name} ({filename})")
    if not present:
        raise MissingArtifactError(f"no experiment fragments found in {out}")

    with open(out / "report.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_FRAGMENT_HEADER)
        for row in rows:
            fh.write(",".join(row) + "\n")

    if "memorization" in present:
        _write_lm_size_dat(out, present["memorization"], warnings)
    if "clip_sweep" in present:
        _write_clip_dat(out, present["clip_sweep"], warnings)
    if "mia" in present:
        _write_mia_dat(out, present["mia"], warnings)
    return warnings


def _class_order(keys) -> list:
    return sorted(keys, key=lambda name: int(name[3:]))


def _write_lm_size_dat(out: Path, rows, warnings):
    table = {}
    for _, tag, metric, key, value in rows:
        if metric == "wer" and tag.startswith("can-size-") and key.startswith("CAN"):
            table.setdefault(float(tag.rsplit("-", 1)[1]), {})[key] = value
    if not table:
        warnings.append("memorization fragment has no can-size rows")
        return
    classes = _class_order({k for per in table.values() for k in per})
    with open(out / "fig_lm_size.dat", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# WER of canary-trained models on each frequency class\n")
        fh.write("# columns: size_multiplier " + " ".join(classes) + "\n")
        for size in sorted(table):
            per = table[size]
            cells = []
            for name in classes:
                if name not in per:
                    warnings.append(f"missing memorization cell: size {size:g} {name}")
                cells.append(per.get(name, "nan"))
            fh.write(" ".join([f"{size:g}"] + cells) + "\n")


def _write_clip_dat(out: Path, rows, warnings):
    table = {}
    for _, tag, metric, key, value in rows:
        if metric == "werr" and tag.startswith("clip-"):
            table.setdefault(tag[5:], {})[key] = value
    if not table:
        warnings.append("clip fragment has no werr rows")
        return
    classes = _class_order({k for per in table.values() for k in per})
    with open(out / "fig_clip_werr.dat", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# WERR (CAN vs EXT, percent) per clip level and frequency class\n")
        fh.write("# columns: clip_level " + " ".join(classes) + "\n")
        for label in table:  # insertion order = sweep order
            per = table[label]
            cells = []
            for name in classes:
                if name not in per:
                    warnings.append(f"missing clip cell: {label} {name}")
                cells.append(per.get(name, "nan"))
            fh.write(" ".join([label] + cells) + "\n")


def _write_mia_dat(out: Path, rows, warnings):
    table = {}
    for _, tag, metric, key, value in rows:
        if key.startswith("CAN") and metric in ("precision", "recall"):
            table.setdefault(key, {})[(tag, metric)] = value
    if not table:
        warnings.append("mia fragment has no per-class rows")
        return
    roles = ("unclipped", "clipped", "baseline")
    with open(out / "fig_mia_pr.dat", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# membership classifier precision/recall per frequency class\n")
        fh.write(
            "# columns: frequency "
            + " ".join(f"{role}_{m}" for role in roles for m in ("precision", "recall"))
            + "\n"
        )
        for name in _class_order(table):
            per = table[name]
            cells = []
            for role in roles:
                for metric in ("precision", "recall"):
                    if (role, metric) not in per:
                        warnings.append(f"missing mia cell: {role} {metric} {name}")
                    cells.append(per.get((role, metric), "nan"))
            fh.write(" ".join([name[3:]] + cells) + "\n")


def resolved_manifest_text(cfg: Experiment) -> str:
    from . import __version__
    from ._backend import backend_name

    lines = [
        f"# canary-audit {__version__} manifest",
        f"# backend = {backend_name()}",
        f"# threads_env = {os.environ.get('CANARY_AUDIT_THREADS', '')}",
    ]
    return "\n".join(lines) + "\n" + cfg.to_text()

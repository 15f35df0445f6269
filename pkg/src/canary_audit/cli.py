"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 runtime failure. Every command
confines its outputs to --out and records the resolved configuration in
a manifest there, so any run is reproducible from the manifest alone.
"""

from __future__ import annotations

import argparse
import os
import sys
from fractions import Fraction
from pathlib import Path

from . import audit, textgen
from .audit import AuditRun, consolidate_report, resolved_manifest_text, run_clip_sweep, run_memorization_audit, run_mia_eval
from .config import load_config
from .errors import AuditError, MissingArtifactError
from .fusion import tune_weights


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def build_parser() -> _Parser:
    parser = _Parser(prog="canary-audit", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="command")

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, help="experiment config file")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--out", type=Path, required=True, help="output directory")
        return p

    command("gen-canaries", "write canary and extraneous sets as TSV")
    p = command("gen-corpus", "write the merged training corpus and dev set")
    p.add_argument("--merge", choices=("canaries", "extraneous", "none"),
                   default="canaries")

    p = command("train-lm", "train one LM and tune its fusion weights")
    p.add_argument("--merge", choices=("canaries", "extraneous", "none"),
                   default="canaries")
    p.add_argument("--clip", help="clip level: off, a norm, or pN percentile")
    p.add_argument("--size", help="LM size multiplier (e.g. 1/2)")
    p.add_argument("--tag", help="bundle tag (defaults to merge/clip naming)")

    p = command("tune-fusion", "re-tune fusion weights for a trained bundle")
    p.add_argument("--tag", required=True)

    p = command("decode", "decode one evaluation set with a trained bundle")
    p.add_argument("--tag", required=True)
    p.add_argument("--set", required=True, dest="eval_set",
                   help="dev or a frequency class like CAN1")
    p.add_argument("--render", choices=("clean", "obscured"), default="clean")

    command("audit-memorization", "WER per frequency class across LM sizes")
    command("audit-clip", "WERR per frequency class across clip levels")
    command("audit-mia", "membership-inference precision/recall")
    command("report", "consolidate fragments into report.csv and figure data")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    if args.command is None:
        parser.print_usage(sys.stderr)
        sys.stderr.write("canary-audit: error: a subcommand is required\n")
        return 1

    try:
        overrides = {"audit.seed": args.seed} if args.seed is not None else None
        cfg = load_config(args.config, overrides)
    except (OSError, ValueError) as exc:
        sys.stderr.write(f"canary-audit: error: {exc}\n")
        return 2

    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    lock = out / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        sys.stderr.write(
            f"canary-audit: error: {lock} exists; another invocation appears "
            "to be using this directory\n"
        )
        return 2
    try:
        with open(out / "manifest.txt", "w", encoding="utf-8", newline="\n") as fh:
            fh.write(resolved_manifest_text(cfg))
        return _dispatch(args, cfg, out)
    except MissingArtifactError as exc:
        sys.stderr.write(f"canary-audit: error: {exc}\n")
        return 2
    except (AuditError, ValueError, OSError) as exc:
        sys.stderr.write(f"canary-audit: error: {exc}\n")
        return 2
    finally:
        os.close(fd)
        os.unlink(lock)


def _default_tag(merge: str, clip_label: str) -> str:
    if merge == "none":
        return "baseline"
    return ("can" if merge == "canaries" else "ext") + f"-clip-{clip_label}"


def _dispatch(args, cfg, out: Path) -> int:
    command = args.command

    if command == "gen-canaries":
        canaries, extraneous = build_canary_sets_cached(cfg)
        textgen.save_sequence_set(canaries, out / "canaries.tsv")
        textgen.save_sequence_set(extraneous, out / "extraneous.tsv")
        print(f"wrote {out / 'canaries.tsv'} and {out / 'extraneous.tsv'}")
        return 0

    run = AuditRun(cfg, out)

    if command == "gen-corpus":
        corpus = run.merged_corpus(args.merge)
        textgen.save_corpus(corpus, out / f"corpus_{args.merge}.txt")
        textgen.save_corpus(run.dev_sentences, out / "dev.txt")
        print(f"wrote {out / f'corpus_{args.merge}.txt'} ({len(corpus.sequences)} lines)")
        return 0

    if command == "train-lm":
        clip_label = args.clip or cfg["train.clip_norm"]
        size = Fraction(args.size) if args.size else Fraction(cfg["lm.size_multiplier"])
        tag = args.tag or _default_tag(args.merge, clip_label)
        bundle = run.get_bundle(tag, args.merge, clip_label, size)
        print(
            f"bundle {bundle.tag}: checkpoint {bundle.checkpoint}, "
            f"lambda1={bundle.weights.lambda1:g} lambda2={bundle.weights.lambda2:g}"
        )
        return 0

    if command == "tune-fusion":
        bundle = run.load_bundle(args.tag)
        grid1, grid2 = cfg.lambda_grids()
        weights = tune_weights(
            run.dev_renders, bundle.params, run.ilm, grid1, grid2, cfg.beam_config()
        )
        run.update_weights(args.tag, weights)
        print(f"{args.tag}: lambda1={weights.lambda1:g} lambda2={weights.lambda2:g}")
        return 0

    if command == "decode":
        bundle = run.load_bundle(args.tag)
        wer_value = run.decode_named_set(bundle, args.eval_set, args.render)
        print(f"{args.tag} on {args.eval_set} ({args.render}): WER {wer_value:.4f}")
        return 0

    if command == "audit-memorization":
        run_memorization_audit(run)
        print(f"memorization fragment written to {out / audit.FRAGMENTS['memorization']}")
        return 0

    if command == "audit-clip":
        run_clip_sweep(run)
        print(f"clip-sweep fragment written to {out / audit.FRAGMENTS['clip_sweep']}")
        return 0

    if command == "audit-mia":
        run_mia_eval(run)
        print(f"mia fragment written to {out / audit.FRAGMENTS['mia']}")
        return 0

    if command == "report":
        warnings = consolidate_report(out)
        for warning in warnings:
            sys.stderr.write(f"canary-audit: warning: {warning}\n")
        print(f"report written to {out / 'report.csv'}")
        return 0

    raise AssertionError(f"unhandled command {command}")


def build_canary_sets_cached(cfg):
    return textgen.build_canary_sets(cfg.canary_spec())


if __name__ == "__main__":
    sys.exit(main())

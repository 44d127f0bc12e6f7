"""Command-line entry point: ingest, normalize, melspec, train, decode, eval.

Single binary, batch-oriented. Global flags (--config/--preset/--seed/
--workers/--precision) layer onto the config file and DOTA_* environment
overrides; see config.py for precedence.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import __version__, config, store
from .checkpoint import CheckpointError, load_checkpoint
from .decode_eval import EvalConfig, GreedyTranscriber, evaluate
from .frontend import log_mel, pad_or_truncate, write_features
from .store import Archive, ingest
from .textproc import Vocabulary, normalize
from .train import DivergenceError, train_loop


def _common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key-value config file")
    p.add_argument("--preset", help=f"named preset: {', '.join(sorted(config.PRESETS))}")
    p.add_argument("--seed", type=int, help="master seed (training, augmentation, eval)")
    p.add_argument("--workers", type=int, help="data-preparation worker threads")
    p.add_argument("--precision", choices=("high", "reduced"), help="compute precision")


def _run_config(args) -> config.RunConfig:
    overrides: dict[str, object] = {}
    if getattr(args, "seed", None) is not None:
        overrides.update({"train.seed": args.seed, "augment.seed": args.seed, "eval.seed": args.seed})
    if getattr(args, "workers", None) is not None:
        overrides["workers"] = args.workers
    if getattr(args, "precision", None) is not None:
        overrides["train.precision"] = args.precision
    return config.parse_config(getattr(args, "config", None), preset=getattr(args, "preset", None),
                               overrides=overrides)


def _load_vocab(cfg: config.RunConfig, override: str | None) -> Vocabulary:
    path = override or cfg.vocab
    if not path:
        raise config.ConfigError("no vocabulary file configured (set 'vocab' or pass --vocab)")
    vocab = Vocabulary.load(path)
    if len(vocab) != cfg.model.vocab_size:
        raise config.ConfigError(
            f"vocabulary file has {len(vocab)} tokens but model.vocab_size = {cfg.model.vocab_size}"
        )
    return vocab


def cmd_ingest(args) -> int:
    sources = []
    with open(args.manifest, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3:
                raise ValueError(
                    f"{args.manifest}:{lineno}: expected 3 tab-separated fields, got {len(parts)}"
                )
            sources.append(tuple(parts))
    index = ingest(sources, args.out)
    print(f"wrote {args.out}: {len(index)} records, {len(index.dataset_names)} datasets")
    if len(index) < len(sources):
        print(f"warning: skipped {len(sources) - len(index)} undecodable files", file=sys.stderr)
    return 0


def cmd_normalize(args) -> int:
    with open(args.in_path, encoding="utf-8") as fin, open(args.out, "w", encoding="utf-8") as fout:
        for line in fin:
            fout.write(normalize(line) + "\n")
    return 0


def cmd_melspec(args) -> int:
    cfg = _run_config(args)
    audio = store.load_audio_int16(args.in_path, cfg.frontend.sample_rate)
    wave = audio.astype(np.float64) / 32768.0
    feats = log_mel(pad_or_truncate(wave, cfg.frontend), cfg.frontend)
    write_features(args.out, feats)
    print(f"wrote {args.out}: {feats.shape[0]} x {feats.shape[1]} frames")
    return 0


def cmd_train(args) -> int:
    cfg = _run_config(args)
    vocab = _load_vocab(cfg, None)
    archives = [Archive(p) for p in args.archive]
    try:
        result = train_loop(
            archives,
            model_cfg=cfg.model,
            train_cfg=cfg.train,
            augment_cfg=cfg.augment,
            frontend_cfg=cfg.frontend,
            vocab=vocab,
            sampling_weights=cfg.sampling,
            out_dir=args.out,
            workers=cfg.workers,
            config_dict=cfg.to_flat_dict(),
        )
    finally:
        for arc in archives:
            arc.close()
    print(f"final checkpoint: {result.final_checkpoint}")
    print(f"loss log: {result.loss_log}")
    return 0


def _checkpoint_config(args) -> tuple[dict, config.RunConfig]:
    params, flat = load_checkpoint(args.checkpoint)
    return params, config.from_flat_dict(flat)


def cmd_decode(args) -> int:
    params, cfg = _checkpoint_config(args)
    vocab = _load_vocab(cfg, args.vocab)
    audio = store.load_audio_int16(args.audio, cfg.frontend.sample_rate)
    transcribe = GreedyTranscriber(params, cfg.model, cfg.frontend, vocab,
                                   dtype=cfg.train.compute_dtype)
    print(transcribe(audio.astype(np.float64) / 32768.0))
    return 0


def cmd_eval(args) -> int:
    params, cfg = _checkpoint_config(args)
    vocab = _load_vocab(cfg, args.vocab)
    eval_cfg = cfg.eval if args.seed is None else EvalConfig(
        sample_cap=cfg.eval.sample_cap, max_ref_tokens=cfg.eval.max_ref_tokens, seed=args.seed
    )
    transcribe = GreedyTranscriber(params, cfg.model, cfg.frontend, vocab,
                                   dtype=cfg.train.compute_dtype)
    with Archive(args.archive) as archive:
        report = evaluate(archive, transcribe, vocab, eval_cfg)
    with open(args.report, "w", encoding="utf-8") as f:
        f.write(report.to_json() + "\n")
    print(report.table())
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dota", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", metavar="command")

    sp = sub.add_parser("ingest", help="build a binary archive from a TSV manifest")
    sp.add_argument("--manifest", required=True, help="TSV rows: audio_path \\t transcript \\t dataset_id")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("normalize", help="normalize transcripts line by line")
    sp.add_argument("--in", dest="in_path", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_normalize)

    sp = sub.add_parser("melspec", help="dump log-mel features of a WAV file")
    _common_flags(sp)
    sp.add_argument("--in", dest="in_path", required=True)
    sp.add_argument("--out", required=True, help="u32 rows, u32 cols, row-major f32")
    sp.set_defaults(func=cmd_melspec)

    sp = sub.add_parser("train", help="train a model on ingested archives")
    _common_flags(sp)
    sp.add_argument("--archive", action="append", required=True, help="repeatable")
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("decode", help="transcribe one audio file")
    sp.add_argument("--audio", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--vocab", help="override the vocabulary path from the checkpoint")
    sp.set_defaults(func=cmd_decode)

    sp = sub.add_parser("eval", help="WER evaluation of a checkpoint over an archive")
    sp.add_argument("--archive", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--report", required=True, help="output JSON path")
    sp.add_argument("--vocab", help="override the vocabulary path from the checkpoint")
    sp.add_argument("--seed", type=int, help="report seed for the evaluation sample")
    sp.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "func", None) is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        return args.func(args)
    except (config.ConfigError, CheckpointError, store.ArchiveError, DivergenceError,
            ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

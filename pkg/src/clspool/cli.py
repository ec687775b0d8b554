"""Command-line driver: gen-data, train, evaluate, inspect-attention.

Every command is deterministic under (config, seed) and writes
byte-identical primary outputs on reruns. Exit codes: 0 success,
1 usage error, 2 data error, 3 numeric failure.
"""

import argparse
import os
import sys

import numpy as np
import yaml

from . import checkpoint as ckpt
from . import config as cfg
from . import data
from . import metrics as met
from . import trainer
from . import verification as ver
from .encoder import AttentionRecord


class UsageError(ValueError):
    pass


class DataError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _load_run_config(args):
    config = cfg.load_config(args.config) if args.config else cfg.RunConfig()
    if args.seed is not None:
        config = cfg.from_dict({**cfg.to_dict(config), "seed": args.seed})
    return config


def _prepare_out_dir(path, force):
    if os.path.isdir(path) and os.listdir(path):
        if not force:
            raise UsageError(f"output directory {path!r} is not empty (use --force)")
    os.makedirs(path, exist_ok=True)


def _prepare_out_file(path, force):
    if os.path.exists(path) and not force:
        raise UsageError(f"output file {path!r} exists (use --force)")
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def cmd_gen_data(args):
    config = _load_run_config(args)
    _prepare_out_dir(args.out, args.force)
    corpus = data.gen_synthetic_corpus(config.corpus)

    feature_dir = os.path.join(args.out, "features")
    os.makedirs(feature_dir, exist_ok=True)
    for split_name, split in (("train", corpus.train), ("eval", corpus.eval)):
        entries = []
        for seq in split:
            rel = os.path.join("features", f"{seq.utterance_id}.tpf")
            data.save_features(seq, os.path.join(args.out, rel))
            entries.append((seq.utterance_id, seq.speaker_id, seq.phrase_id, rel))
        data.write_manifest(os.path.join(args.out, f"manifest_{split_name}.txt"), entries)

    for condition, trials in sorted(corpus.trials.items()):
        ver.write_trials(os.path.join(args.out, f"trials_{condition}.txt"), trials)
    cfg.save_config(config, os.path.join(args.out, "corpus.yaml"))
    print(f"wrote {len(corpus.train)} train and {len(corpus.eval)} eval utterances to {args.out}")
    return 0


def _load_split(corpus_dir, split):
    manifest = os.path.join(corpus_dir, f"manifest_{split}.txt")
    if not os.path.exists(manifest):
        raise DataError(f"no manifest {manifest!r}")
    seqs = []
    for utt, spk, phr, rel in data.read_manifest(manifest):
        seqs.append(data.load_features(os.path.join(corpus_dir, rel),
                                       speaker_id=spk, phrase_id=phr, utterance_id=utt))
    if not seqs:
        raise DataError(f"manifest {manifest!r} is empty")
    return seqs


def _check_corpus_dims(config, seqs):
    d = seqs[0].frames.shape[1]
    p = seqs[0].positions.shape[1]
    if d != config.corpus.feature_dim or p != config.corpus.position_dim:
        raise DataError(
            f"corpus features are D={d}, P={p} but the config expects "
            f"D={config.corpus.feature_dim}, P={config.corpus.position_dim}"
        )


def cmd_train(args):
    config = _load_run_config(args)
    _prepare_out_file(args.out, args.force)
    train_seqs = _load_split(args.corpus, "train")
    _check_corpus_dims(config, train_seqs)

    result = trainer.run_training(config, train_seqs)
    ckpt.save_checkpoint(args.out, cfg.to_dict(config), trainer.checkpoint_meta(result),
                         trainer.checkpoint_arrays(result))
    log_path = args.log or (os.path.splitext(args.out)[0] + ".log")
    trainer.write_log(log_path, result.log)
    last = result.log[-1]
    print(f"trained {config.pooling} for {config.epochs} epochs; "
          f"final loss {last.loss:.4f}"
          + (f" / {last.loss_student:.4f}" if last.loss_student is not None else ""))
    print(f"checkpoint: {args.out}\nlog: {log_path}")
    return 0


def _load_eval_model(checkpoint_path):
    config_dict, meta, arrays = ckpt.load_checkpoint(checkpoint_path)
    config = cfg.from_dict(config_dict)
    models = trainer.load_models_from_checkpoint(config, meta, arrays)
    return config, meta, trainer.eval_model(models, meta["mode"])


def _embed_split(config, meta, model, seqs):
    mode = "AVG" if meta["mode"] == "AVG" else "CLS"
    embeddings = {}
    for seq in seqs:
        if config.normalize:
            seq = data.normalize_features(seq)
        if mode == "AVG":
            combined = seq.frames.astype(np.float64)
        else:
            combined = data.combine_features(seq.frames, seq.positions,
                                             config.position_mode)
        embeddings[seq.utterance_id] = ver.extract_embedding(model, combined, mode)
    return embeddings


def cmd_evaluate(args):
    config, meta, model = _load_eval_model(args.checkpoint)
    eval_seqs = _load_split(args.corpus, "eval")
    _check_corpus_dims(config, eval_seqs)
    _prepare_out_dir(args.out, args.force)

    embeddings = _embed_split(config, meta, model, eval_seqs)
    report = {}
    for trial_path in args.trials:
        condition = os.path.splitext(os.path.basename(trial_path))[0]
        trials = ver.read_trials(trial_path)
        try:
            trial_set = ver.TrialSet(trials, embeddings)
        except KeyError as exc:
            raise DataError(f"{trial_path}: {exc.args[0]}") from exc
        scored = ver.score_trials(trial_set)
        ver.write_scores(os.path.join(args.out, f"scores_{condition}.txt"), scored)
        report[condition] = met.metrics_report(met.ScoreSet.from_scored_trials(scored))

    with open(os.path.join(args.out, "report.yaml"), "w") as fh:
        yaml.safe_dump(report, fh, sort_keys=True)
    lines = []
    for condition in sorted(report):
        r = report[condition]
        lines.append(f"{condition}: EER {100 * r['eer']:.2f}%  "
                     f"DCF08 {r['dcf08']:.3f}  DCF10 {r['dcf10']:.3f}")
    text = "\n".join(lines) + "\n"
    with open(os.path.join(args.out, "report.txt"), "w") as fh:
        fh.write(text)
    print(text, end="")
    return 0


def cmd_inspect_attention(args):
    config, meta, model = _load_eval_model(args.checkpoint)
    if meta["mode"] == "AVG":
        raise UsageError("attention inspection needs a token-pooling checkpoint")
    _prepare_out_dir(args.out, args.force)

    for split in ("eval", "train"):
        try:
            seqs = {s.utterance_id: s for s in _load_split(args.corpus, split)}
        except DataError:
            continue
        if args.utterance in seqs:
            seq = seqs[args.utterance]
            break
    else:
        raise DataError(f"utterance {args.utterance!r} not found in corpus manifests")

    if config.normalize:
        seq = data.normalize_features(seq)
    combined = data.combine_features(seq.frames, seq.positions, config.position_mode)
    record = AttentionRecord()
    model.encode_with_tokens(combined, token_index=0, record=record)
    layer = record.last()

    # class token row index: it precedes the distillation token if any
    token_row = layer.attention[0].shape[0] - model.n_attached_tokens
    cls_rows = np.stack([a[token_row] for a in layer.attention])
    for h, a in enumerate(layer.attention):
        np.savetxt(os.path.join(args.out, f"head{h:02d}_attention.txt"), a, fmt="%.17g")
    np.savetxt(os.path.join(args.out, "cls_rows.txt"), cls_rows, fmt="%.17g")
    np.savetxt(os.path.join(args.out, "cls_row_sum.txt"), cls_rows.sum(axis=0), fmt="%.17g")
    print(f"wrote attention for {len(layer.attention)} heads "
          f"({layer.attention[0].shape[0]} rows) to {args.out}")
    return 0


def build_parser():
    parser = _Parser(prog="clspool",
                     description="Token-pooled sequence verification experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic corpus")
    p.add_argument("--config", help="run config YAML (defaults used when omitted)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", required=True, help="corpus output directory")
    p.add_argument("--force", action="store_true", help="overwrite non-empty outputs")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train per the configured pooling mode")
    p.add_argument("--config", help="run config YAML")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--corpus", required=True, help="corpus directory from gen-data")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--log", help="training log path (defaults next to the checkpoint)")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score trials and report EER/DCF")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--trials", required=True, nargs="+", help="one or more trial files")
    p.add_argument("--out", required=True, help="report output directory")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("inspect-attention", help="export last-layer attention")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--utterance", required=True, help="utterance id to inspect")
    p.add_argument("--out", required=True, help="export directory")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_inspect_attention)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except cfg.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except trainer.NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except (DataError, data.FeatureFileError, ckpt.CheckpointError,
            FileNotFoundError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

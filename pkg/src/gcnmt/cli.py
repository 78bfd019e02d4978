"""Command-line interface: preprocess, train, translate, score, experiment."""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .config import (
    GRIDS,
    ConfigError,
    DataPaths,
    ExperimentConfig,
    TrainConfig,
    load_config,
)
from .corpus import BpeModel, CorpusError, LabelVocab, Vocabulary
from .evaluation import (
    _read_pairs,
    bleu,
    preprocess,
    run_experiment,
    run_grid,
    translate_corpus,
)
from .model import build_model, load_model_params
from .training import train


def _add_override_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="config file (key = value lines)")
    p.add_argument("--encoder", choices=["birnn", "cnn"])
    p.add_argument("--recipe", help="GCN recipe, e.g. none, sem:2, syn:2+sem:1")
    p.add_argument("--decode", choices=["greedy", "beam"])
    p.add_argument("--beam", type=int, dest="beam_size")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--learning-rate", type=float, dest="learning_rate")
    p.add_argument("--seed", type=int, dest="rng_seed")
    p.add_argument("--bpe-merges", type=int, dest="bpe_merges")
    p.add_argument("--train-conll", dest="train_conll")
    p.add_argument("--train-tgt", dest="train_tgt")
    p.add_argument("--val-conll", dest="val_conll")
    p.add_argument("--val-tgt", dest="val_tgt")
    p.add_argument("--test-conll", dest="test_conll")
    p.add_argument("--test-tgt", dest="test_tgt")
    p.add_argument("--out-dir", dest="out_dir")


def _load_configs(args):
    if args.config:
        exp, trn, paths = load_config(args.config)
    else:
        exp, trn, paths = ExperimentConfig(), TrainConfig(), DataPaths()
    for section in (exp, trn, paths):
        for key in vars(section):
            value = getattr(args, key, None)
            if value is not None:
                setattr(section, key, value)
    if args.beam_size is not None and args.decode is None:
        exp.decode = "beam"
    exp.validate()
    trn.validate()
    return exp, trn, paths


def _save_prep(prep, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    prep.src_vocab.save(os.path.join(out_dir, "src_vocab.txt"))
    prep.tgt_vocab.save(os.path.join(out_dir, "tgt_vocab.txt"))
    if prep.bpe is not None:
        prep.bpe.save(os.path.join(out_dir, "bpe.txt"))
    prep.label_vocabs["sem"].save(os.path.join(out_dir, "sem_labels.txt"))
    prep.label_vocabs["syn"].save(os.path.join(out_dir, "syn_labels.txt"))


def _load_prep(out_dir: str):
    from .evaluation import PreprocessResult

    bpe_path = os.path.join(out_dir, "bpe.txt")
    return PreprocessResult(
        src_vocab=Vocabulary.load(os.path.join(out_dir, "src_vocab.txt")),
        tgt_vocab=Vocabulary.load(os.path.join(out_dir, "tgt_vocab.txt")),
        bpe=BpeModel.load(bpe_path) if os.path.exists(bpe_path) else None,
        label_vocabs={
            "sem": LabelVocab.load(os.path.join(out_dir, "sem_labels.txt")),
            "syn": LabelVocab.load(os.path.join(out_dir, "syn_labels.txt")),
        },
    )


def cmd_preprocess(args) -> int:
    exp, trn, paths = _load_configs(args)
    pairs = _read_pairs(paths.train_conll, paths.train_tgt)
    prep = preprocess(pairs, exp, trn)
    _save_prep(prep, paths.out_dir)
    print(f"preprocess: {len(pairs)} pairs, src vocab {len(prep.src_vocab)}, "
          f"tgt vocab {len(prep.tgt_vocab)} -> {paths.out_dir}")
    return 0


def cmd_train(args) -> int:
    exp, trn, paths = _load_configs(args)
    pairs = _read_pairs(paths.train_conll, paths.train_tgt)
    val_pairs = (_read_pairs(paths.val_conll, paths.val_tgt)
                 if paths.val_conll else pairs)
    prep = preprocess(pairs, exp, trn)
    _save_prep(prep, paths.out_dir)
    result = train(trn, exp, pairs, val_pairs, prep.src_vocab, prep.tgt_vocab,
                   prep.bpe, prep.label_vocabs, out_dir=paths.out_dir)
    print(f"train: best epoch {result.best_epoch}, "
          f"val BLEU {result.best_val_bleu:.2f}, "
          f"checkpoint {result.best_checkpoint}")
    return 0


def cmd_translate(args) -> int:
    exp, trn, paths = _load_configs(args)
    prep = _load_prep(paths.out_dir)
    rng = np.random.default_rng(trn.rng_seed)
    model = build_model(exp, len(prep.src_vocab), len(prep.tgt_vocab),
                        prep.label_vocabs, rng)
    load_model_params(args.checkpoint, model)
    pairs = _read_pairs(args.input, args.input_tgt) if args.input_tgt else None
    if pairs is None:
        with open(args.input, encoding="utf-8") as fh:
            from .corpus import ingest_conll
            pairs = [(s, []) for s in ingest_conll(fh.read())]
    hyps = translate_corpus(model, pairs, prep.src_vocab, prep.tgt_vocab,
                            prep.bpe, trn)
    out = open(args.output, "w", encoding="utf-8") if args.output else sys.stdout
    try:
        for words in hyps:
            out.write(" ".join(words) + "\n")
    finally:
        if args.output:
            out.close()
    return 0


def cmd_score(args) -> int:
    with open(args.hyp, encoding="utf-8") as fh:
        hyps = [line.split() for line in fh.read().split("\n")[:-1]]
    with open(args.ref, encoding="utf-8") as fh:
        refs = [line.split() for line in fh.read().split("\n")[:-1]]
    report = bleu(hyps, refs)
    print(report.format())
    return 0


def cmd_experiment(args) -> int:
    exp, trn, paths = _load_configs(args)
    print("encoder\trecipe\ttest_bleu\tbest_val_bleu\tbest_epoch")
    if args.grid:
        for summary in run_grid(args.grid, exp, trn, paths):
            print(summary.row())
    else:
        print(run_experiment(exp, trn, paths).row())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gcnmt",
        description="NMT with graph-convolutional encoders over "
                    "semantic-role and dependency graphs")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="build vocabularies, BPE and labels")
    _add_override_flags(p)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train a model")
    _add_override_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("translate", help="translate an annotated corpus")
    _add_override_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="annotated source (column text)")
    p.add_argument("--input-tgt", dest="input_tgt")
    p.add_argument("--output")
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("score", help="corpus BLEU of hypothesis vs reference file")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("experiment", help="run one config or a named grid")
    _add_override_flags(p)
    p.add_argument("--grid", choices=sorted(GRIDS))
    p.set_defaults(func=cmd_experiment)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except (ConfigError, CorpusError, FileNotFoundError, RuntimeError,
            ValueError) as e:
        print(f"gcnmt {args.command}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

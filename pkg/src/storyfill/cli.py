"""Command-line entry point.

Subcommands: make-data, train, generate, evaluate. Flags override keys from
an optional flat key=value config file. Exit codes: 0 success, 1 usage
error, 2 data/model error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import shutil
import sys

import numpy as np

from storyfill import corpus as corpus_mod
from storyfill import evaluation, ranker as ranker_mod, training_data
from storyfill.checkpoint import (
    CheckpointError,
    checkpoint_digest,
    load_checkpoint,
    save_checkpoint,
)
from storyfill.corpus import CorpusError
from storyfill.generator import (
    GeneratorModel,
    SamplerConfig,
    TrainingHyper,
    train_generator,
)
from storyfill.interpolator import (
    SCHEDULES,
    InterpolationRequest,
    generate_story,
    generate_story_noranking,
)
from storyfill.model import ModelConfig
from storyfill.ranker import RankerModel, build_ranker_dataset, train_ranker
from storyfill.tokenizer import Vocab, train_tokenizer

log = logging.getLogger(__name__)

USAGE_ERROR = 1
DATA_ERROR = 2


class UsageError(Exception):
    pass


def _read_config(path):
    """Flat key=value file; '#' starts a comment line."""
    config = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            key, value = line.split("=", 1)
            config[key.strip().replace("-", "_")] = value.strip()
    return config


def _merge_config(args, parser_defaults):
    """Config file fills in any option the command line left at its default."""
    if not args.config:
        return args
    config = _read_config(args.config)
    for key, raw in config.items():
        if not hasattr(args, key):
            continue
        current = getattr(args, key)
        default = parser_defaults.get(key)
        if current == default:
            if isinstance(default, bool):
                value = raw.lower() in ("1", "true", "yes")
            elif isinstance(default, int):
                value = int(raw)
            elif isinstance(default, float):
                value = float(raw)
            else:
                value = raw
            setattr(args, key, value)
    return args


def _default_run_dir(args):
    payload = json.dumps(
        {k: v for k, v in sorted(vars(args).items()) if k not in ("out", "func")},
        default=str, sort_keys=True)
    digest = hashlib.sha256(payload.encode()).hexdigest()[:10]
    return os.path.join("runs", digest)


def _resolve_out(args):
    out = args.out or _default_run_dir(args)
    os.makedirs(out, exist_ok=True)
    return out


# --- make-data --------------------------------------------------------------


def cmd_make_data(args):
    out = _resolve_out(args)
    if args.rocstories:
        stories = corpus_mod.load_corpus(args.rocstories, "rocstories-csv")
    else:
        grammar = (corpus_mod.load_grammar(args.grammar) if args.grammar
                   else corpus_mod.default_grammar())
        stories = corpus_mod.generate_synthetic_corpus(grammar, args.n, args.seed)
    ratios = tuple(float(r) for r in args.ratios.split(","))
    if len(ratios) != 3:
        raise UsageError("--ratios needs three comma-separated fractions")
    split = corpus_mod.split_corpus(stories, ratios, args.seed)

    corpus_mod.save_plain_lines(stories, os.path.join(out, "corpus.tsv"))
    # splits reference line numbers of corpus.tsv, which the plain-lines
    # loader uses as story ids
    line_of = {s.id: str(i) for i, s in enumerate(stories)}
    manifest = {
        "seed": args.seed,
        "ratios": list(ratios),
        "n_stories": len(stories),
        "original_ids": [s.id for s in stories],
        "train": [line_of[s.id] for s in split.train],
        "dev": [line_of[s.id] for s in split.dev],
        "test": [line_of[s.id] for s in split.test],
    }
    with open(os.path.join(out, "split.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")
    if stories:
        vocab = train_tokenizer(split.train, args.vocab_size)
        vocab.save(os.path.join(out, "vocab.json"))
    print(f"wrote {len(stories)} stories "
          f"({len(split.train)}/{len(split.dev)}/{len(split.test)} split) to {out}")
    return 0


def load_data_dir(data_dir):
    stories = corpus_mod.load_corpus(os.path.join(data_dir, "corpus.tsv"), "plain-lines")
    with open(os.path.join(data_dir, "split.json"), encoding="utf-8") as fh:
        manifest = json.load(fh)
    lookup = {s.id: s for s in stories}
    vocab = Vocab.load(os.path.join(data_dir, "vocab.json"))

    def pick(ids):
        return [lookup[i] for i in ids]

    return (pick(manifest["train"]), pick(manifest["dev"]), pick(manifest["test"]), vocab)


# --- train ------------------------------------------------------------------


def _model_config_from_args(args, vocab_size, kind):
    return ModelConfig(
        vocab_size=vocab_size,
        n_ctx=args.ctx,
        n_layers=args.layers,
        n_heads=args.heads,
        d_model=args.width,
        d_ff=args.ff,
        causal=(kind != "ranker"),
        n_classes=2 if kind == "ranker" else 0,
    )


def cmd_train(args):
    out = _resolve_out(args)
    train_stories, dev_stories, _test, vocab = load_data_dir(args.data)
    if not train_stories:
        raise CorpusError("empty training split")
    config = _model_config_from_args(args, len(vocab), args.kind)
    hyper = TrainingHyper(epochs=args.epochs, batch_size=args.batch_size,
                          learning_rate=args.lr, seed=args.seed)

    if args.kind == "ranker":
        # skip-segments teach the ranker the gapped shapes a story-in-
        # construction passes through, not just contiguous windows
        segments = (corpus_mod.segment_stories(train_stories, 3, 5)
                    + corpus_mod.skip_segments(train_stories))
        data = build_ranker_dataset(segments, train_stories, args.seed)
        model = RankerModel.fresh(config, args.seed)
        trace = train_ranker(model, data, hyper, vocab)
        params = model.params
        if dev_stories:
            dev_segments = corpus_mod.segment_stories(dev_stories, 3, 5)
            dev_data = build_ranker_dataset(dev_segments, dev_stories, args.seed + 1)
            metrics = evaluation.ranker_metrics(RankerModel(config, params), dev_data, vocab)
            print(f"dev accuracy: {metrics['accuracy']:.3f}")
    else:
        if args.kind == "l2r":
            examples = training_data.l2r_examples(train_stories, vocab, config.n_ctx)
        else:
            examples = training_data.interpolation_examples(train_stories, vocab, config.n_ctx)
        model = GeneratorModel.fresh(config, args.seed)
        trace = train_generator(model, examples, hyper)
        params = model.params
        if dev_stories:
            builder = (training_data.l2r_examples if args.kind == "l2r"
                       else training_data.interpolation_examples)
            dev_examples = builder(dev_stories, vocab, config.n_ctx)
            if dev_examples:
                ppl = evaluation.wordpiece_perplexity(model, dev_examples)
                print(f"dev wordpiece perplexity: {ppl:.3f}")

    save_checkpoint(out, args.kind, config, params)
    shutil.copyfile(os.path.join(args.data, "vocab.json"), os.path.join(out, "vocab.json"))
    with open(os.path.join(out, "loss_trace.json"), "w", encoding="utf-8") as fh:
        json.dump({"kind": args.kind, "seed": args.seed, "loss": trace}, fh, indent=1)
        fh.write("\n")
    print(f"saved {args.kind} checkpoint to {out} (final loss {trace[-1]:.4f})")
    return 0


def load_generator_checkpoint(directory):
    kind, config, params, vocab_file = load_checkpoint(directory, expect_kind=("generator", "l2r"))
    vocab = Vocab.load(os.path.join(directory, vocab_file))
    return kind, GeneratorModel(config=config, params=params), vocab


def load_ranker_checkpoint(directory):
    _kind, config, params, vocab_file = load_checkpoint(directory, expect_kind=("ranker",))
    vocab = Vocab.load(os.path.join(directory, vocab_file))
    return RankerModel(config=config, params=params), vocab


# --- generate ---------------------------------------------------------------


def cmd_generate(args):
    if args.k < 2:
        raise UsageError("--k must be >= 2")
    _kind, generator, vocab = load_generator_checkpoint(args.generator)
    sampler = SamplerConfig(temperature=args.temperature, top_k=args.top_k,
                            seed=args.seed, greedy=args.greedy)
    request = InterpolationRequest(beginning=args.begin, ending=args.end, k=args.k,
                                   schedule=args.schedule, m=args.m, sampler=sampler)
    if args.no_ranking or not args.ranker:
        story, trace = generate_story_noranking(request, generator, vocab)
    else:
        ranker, _ = load_ranker_checkpoint(args.ranker)
        story, trace = generate_story(request, generator, ranker, vocab)
    for sentence in story.sentences:
        print(sentence)
    trace_path = args.trace or os.path.join(_resolve_out(args), "trace.json")
    with open(trace_path, "w", encoding="utf-8") as fh:
        json.dump(trace, fh, indent=1, ensure_ascii=False)
        fh.write("\n")
    return 0


# --- evaluate ---------------------------------------------------------------


def _print_report(report):
    print(json.dumps(report, indent=1))


def cmd_evaluate(args):
    out = _resolve_out(args)
    _train, _dev, test_stories, vocab = load_data_dir(args.data)
    if args.mode == "ablation":
        if not (args.l2r and args.generator):
            raise UsageError("ablation mode needs --l2r and --generator checkpoints")
        _, l2r_model, _ = load_generator_checkpoint(args.l2r)
        _, interp_model, _ = load_generator_checkpoint(args.generator)
        report = evaluation.run_context_ablation(l2r_model, interp_model,
                                                test_stories, vocab, seed=args.seed)
        name = "ablation.json"
    elif args.mode == "ranker":
        if not args.ranker:
            raise UsageError("ranker mode needs --ranker")
        model, _ = load_ranker_checkpoint(args.ranker)
        segments = corpus_mod.segment_stories(test_stories, 3, 5)
        data = build_ranker_dataset(segments, test_stories, args.seed)
        report = evaluation.ranker_metrics(model, data, vocab)
        name = "ranker_metrics.json"
    elif args.mode == "proxy":
        if not (args.generator and args.loop_ranker and args.judge_ranker):
            raise UsageError("proxy mode needs --generator, --loop-ranker, --judge-ranker")
        if checkpoint_digest(args.loop_ranker) == checkpoint_digest(args.judge_ranker):
            raise UsageError("judge ranker checkpoint must differ from the loop ranker")
        _, generator, _ = load_generator_checkpoint(args.generator)
        loop_ranker, _ = load_ranker_checkpoint(args.loop_ranker)
        judge_ranker, _ = load_ranker_checkpoint(args.judge_ranker)
        pairs = [(s.sentences[0], s.sentences[-1]) for s in test_stories[: args.pairs]]
        report = evaluation.compare_pipelines_proxy(
            generator, loop_ranker, judge_ranker, pairs, vocab,
            k=args.k, m=args.m, seed=args.seed)
        name = "proxy.json"
    elif args.mode == "schedules":
        if not args.generator:
            raise UsageError("schedules mode needs --generator")
        _, interp_model, _ = load_generator_checkpoint(args.generator)
        report = evaluation.compare_schedules(interp_model, test_stories, vocab,
                                              seed=args.seed)
        name = "schedules.json"
    else:
        raise UsageError(f"unknown mode {args.mode!r}")
    _print_report(report)
    with open(os.path.join(out, name), "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=1)
        fh.write("\n")
    return 0


# --- parser -----------------------------------------------------------------


def build_parser():
    """Returns (parser, per-command defaults for the config-file merge)."""
    parser = argparse.ArgumentParser(prog="storyfill",
                                     description="Ending-guided story generation by interpolation")
    parser.add_argument("--config", default=None, help="flat key=value config file")
    sub = parser.add_subparsers(dest="command", required=True)
    subparsers = {}

    p = sub.add_parser("make-data", help="write a corpus, split manifest, and vocabulary")
    p.add_argument("--synthetic", action="store_true", help="emit the templated synthetic corpus")
    p.add_argument("--rocstories", default=None, help="convert a ROCStories-format CSV instead")
    p.add_argument("--grammar", default=None, help="grammar JSON (default: built-in)")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--ratios", default="0.9,0.05,0.05")
    p.add_argument("--vocab-size", type=int, default=512)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_make_data)
    subparsers["make-data"] = p

    p = sub.add_parser("train", help="train a model and save a checkpoint")
    p.add_argument("--kind", choices=("generator", "l2r", "ranker"), required=True)
    p.add_argument("--data", required=True, help="directory from make-data")
    p.add_argument("--epochs", type=int, default=3)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--layers", type=int, default=4)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--ff", type=int, default=512)
    p.add_argument("--ctx", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_train)
    subparsers["train"] = p

    p = sub.add_parser("generate", help="generate a story from a beginning and an ending")
    p.add_argument("--begin", required=True)
    p.add_argument("--end", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--generator", required=True, help="generator checkpoint directory")
    p.add_argument("--ranker", default=None, help="ranker checkpoint directory")
    p.add_argument("--no-ranking", action="store_true")
    p.add_argument("--m", type=int, default=10)
    p.add_argument("--schedule", choices=SCHEDULES, default="bisectional")
    p.add_argument("--temperature", type=float, default=0.9)
    p.add_argument("--top-k", type=int, default=40)
    p.add_argument("--greedy", action="store_true")
    p.add_argument("--trace", default=None, help="trace JSON path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_generate)
    subparsers["generate"] = p

    p = sub.add_parser("evaluate", help="run an evaluation report")
    p.add_argument("--mode", choices=("ablation", "ranker", "proxy", "schedules"), required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--generator", default=None)
    p.add_argument("--l2r", default=None)
    p.add_argument("--ranker", default=None)
    p.add_argument("--loop-ranker", default=None)
    p.add_argument("--judge-ranker", default=None)
    p.add_argument("--pairs", type=int, default=30)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--m", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_evaluate)
    subparsers["evaluate"] = p

    defaults_by_command = {
        name: {a.dest: a.default for a in sp._actions if a.dest != "help"}
        for name, sp in subparsers.items()
    }
    return parser, defaults_by_command


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser, defaults_by_command = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else USAGE_ERROR
    try:
        args = _merge_config(args, defaults_by_command[args.command])
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except (CorpusError, CheckpointError, ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_ERROR


if __name__ == "__main__":
    sys.exit(main())

"""Command-line front end.

Subcommands cover the full workflow: train (supervised fine-tuning),
cycle (semi-supervised training on non-parallel pools), generate
(graph-to-text), parse (text-to-graph), eval (text or graph metrics),
crawl (pool construction from a knowledge base or fixtures), and rerun
(repeat a recorded run from its manifest).

Every run directory gets a manifest.json with the fully resolved
parameters, written before any work starts; rerun replays it and, with
the same seed, reproduces artifacts byte for byte. Option precedence is
command-line flag over --config file over built-in default. Exit codes:
0 success, 1 operational failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import torch

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .corpus import (
    CorpusError,
    ParallelCorpus,
    UnlabeledCorpus,
    assign_test_split_tags,
    load_graph_pool,
    load_parallel,
    load_text_pool,
    save_graph_pool,
    save_text_pool,
    subset_supervised,
)
from .crawler import (
    CrawlConfig,
    CrawlError,
    FixtureTransport,
    HttpTransport,
    build_pools,
    crawl,
    crawl_stats,
)
from .decoding import DecodeConfig, generate
from .graph_codec import (
    CodecError,
    G2T_TOKEN,
    NoTriplesRecoverable,
    T2G_TOKEN,
    linearize_graph,
    parse_graph,
    prefix_task,
)
from .metrics import (
    MetricError,
    evaluate_graphs,
    evaluate_text,
    format_report,
    report_to_json,
)
from .model import ModelConfig, Seq2SeqModel
from .tokenizer import Vocabulary, build_vocab, decode, encode
from .training import TrainConfig, cycle_train, finetune

MANIFEST_VERSION = 1

# CodecError, CorpusError, MetricError, TokenizerError, TrainingError and
# config-validation errors are ValueError subclasses; the checkpoint and
# crawl errors are RuntimeErrors.
_ERRORS = (CheckpointError, CrawlError, OSError, ValueError)

_TRAIN_KEYS = [f.name for f in dataclasses.fields(TrainConfig)]
_MODEL_KEYS = [
    "d_model",
    "n_heads",
    "n_layers_enc",
    "n_layers_dec",
    "d_ff",
    "dropout_rate",
]
_DECODE_KEYS = [f.name for f in dataclasses.fields(DecodeConfig)]


def _write_manifest(out_dir: Path, command: str, params: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format_version": MANIFEST_VERSION,
        "command": command,
        "params": params,
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _resolve(args: argparse.Namespace, keys: list[str], defaults: dict) -> dict:
    """flag > config file > default, for the listed keys."""
    from_file = {}
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            from_file = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise CorpusError(f"{config_path}: invalid JSON: {exc}") from exc
        unknown = set(from_file) - set(keys)
        if unknown:
            raise CorpusError(
                f"{config_path}: unknown config keys: {', '.join(sorted(unknown))}"
            )
    resolved = {}
    for key in keys:
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            resolved[key] = flag_value
        elif key in from_file:
            resolved[key] = from_file[key]
        else:
            resolved[key] = defaults[key]
    return resolved


def _add_train_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON file with parameter defaults")
    parser.add_argument("--batch-size", dest="batch_size", type=int)
    parser.add_argument(
        "--accumulation-steps", dest="accumulation_steps", type=int
    )
    parser.add_argument("--lr-finetune", dest="lr_finetune", type=float)
    parser.add_argument("--lr-cycle", dest="lr_cycle", type=float)
    parser.add_argument(
        "--max-epochs-finetune", dest="max_epochs_finetune", type=int
    )
    parser.add_argument("--max-epochs-cycle", dest="max_epochs_cycle", type=int)
    parser.add_argument("--patience", type=int)
    parser.add_argument("--cycle-steps", dest="cycle_steps", type=int)
    parser.add_argument(
        "--synthetic-per-iteration", dest="synthetic_per_iteration", type=int
    )
    parser.add_argument("--max-len", dest="max_len", type=int)
    parser.add_argument("--optimizer", choices=("adam", "sgd"))
    parser.add_argument("--val-fraction", dest="val_fraction", type=float)
    parser.add_argument("--seed", type=int)


def _add_model_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--d-model", dest="d_model", type=int)
    parser.add_argument("--n-heads", dest="n_heads", type=int)
    parser.add_argument("--n-layers-enc", dest="n_layers_enc", type=int)
    parser.add_argument("--n-layers-dec", dest="n_layers_dec", type=int)
    parser.add_argument("--d-ff", dest="d_ff", type=int)
    parser.add_argument("--dropout-rate", dest="dropout_rate", type=float)


def _add_decode_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--beam-width", dest="beam_width", type=int)
    parser.add_argument("--max-new-tokens", dest="max_new_tokens", type=int)
    parser.add_argument(
        "--repetition-penalty", dest="repetition_penalty", type=float
    )
    parser.add_argument("--length-penalty", dest="length_penalty", type=float)
    parser.add_argument(
        "--no-early-stopping",
        dest="early_stopping",
        action="store_const",
        const=False,
    )


def _train_defaults() -> dict:
    return dataclasses.asdict(TrainConfig())


def _model_defaults() -> dict:
    d = dataclasses.asdict(ModelConfig(vocab_size=8))
    return {k: d[k] for k in _MODEL_KEYS}


def _decode_defaults() -> dict:
    return dataclasses.asdict(DecodeConfig())


def _load_vocab_for(checkpoint_path: str, vocab_path: str) -> tuple[Seq2SeqModel, Vocabulary]:
    model, vocab_hash = load_checkpoint(checkpoint_path)
    vocab = Vocabulary.load(vocab_path)
    if vocab.sha256() != vocab_hash:
        raise CheckpointError(
            f"vocabulary {vocab_path} does not match the checkpoint "
            f"(hash {vocab.sha256()[:12]} vs {vocab_hash[:12]})"
        )
    return model, vocab


# ----------------------------------------------------------------------
# train


def _cmd_train(params: dict) -> int:
    out_dir = Path(params["out"])
    _write_manifest(out_dir, "train", params)
    corpus = load_parallel(params["data"], params["format"])
    dev = (
        load_parallel(params["dev"], params["format"])
        if params.get("dev")
        else None
    )
    train_cfg = TrainConfig(**{k: params[k] for k in _TRAIN_KEYS})
    strings = []
    for example in corpus:
        strings.append(example.text)
        strings.append(linearize_graph(example.graph))
    vocab = build_vocab(strings, params["vocab_size"])
    vocab.save(out_dir / "vocab.txt")
    torch.manual_seed(train_cfg.seed)
    model_cfg = ModelConfig(
        vocab_size=len(vocab),
        max_len=train_cfg.max_len,
        **{k: params[k] for k in _MODEL_KEYS},
    )
    model = Seq2SeqModel(model_cfg)
    model, history = finetune(
        model,
        vocab,
        corpus,
        train_cfg,
        dev_corpus=dev,
        log_path=out_dir / "train_log.tsv",
    )
    save_checkpoint(out_dir / "model.ckpt", model, vocab.sha256())
    (out_dir / "history.json").write_text(
        json.dumps(dataclasses.asdict(history), indent=2) + "\n", encoding="utf-8"
    )
    print(
        f"trained {history.best_epoch} best epoch, "
        f"val loss {history.best_val_loss:.4f}, wrote {out_dir / 'model.ckpt'}"
    )
    return 0


def _run_train(args: argparse.Namespace) -> int:
    params = _resolve(
        args,
        _TRAIN_KEYS + _MODEL_KEYS + ["vocab_size"],
        {**_train_defaults(), **_model_defaults(), "vocab_size": 8000},
    )
    params.update(
        {"data": args.data, "format": args.format, "dev": args.dev, "out": args.out}
    )
    return _cmd_train(params)


# ----------------------------------------------------------------------
# cycle


def _cmd_cycle(params: dict) -> int:
    out_dir = Path(params["out"])
    _write_manifest(out_dir, "cycle", params)
    model, vocab = _load_vocab_for(params["checkpoint"], params["vocab"])
    texts = load_text_pool(params["texts"]) if params.get("texts") else []
    graphs = load_graph_pool(params["graphs"]) if params.get("graphs") else []
    supervised = load_parallel(params["supervised"], params["format"])
    if params["supervised_fraction"] is not None:
        supervised, _ = subset_supervised(
            supervised, params["supervised_fraction"], params["seed"]
        )
    train_cfg = TrainConfig(**{k: params[k] for k in _TRAIN_KEYS})
    unlabeled = UnlabeledCorpus(texts=tuple(texts), graphs=tuple(graphs))
    model, state = cycle_train(
        model,
        vocab,
        unlabeled,
        supervised,
        train_cfg,
        log_path=out_dir / "cycle_log.tsv",
    )
    save_checkpoint(out_dir / "model.ckpt", model, vocab.sha256())
    (out_dir / "state.json").write_text(
        json.dumps(dataclasses.asdict(state), indent=2) + "\n", encoding="utf-8"
    )
    print(
        f"cycle training ran {len(state.histories)} iterations, "
        f"wrote {out_dir / 'model.ckpt'}"
    )
    return 0


def _run_cycle(args: argparse.Namespace) -> int:
    params = _resolve(args, _TRAIN_KEYS, _train_defaults())
    params.update(
        {
            "checkpoint": args.checkpoint,
            "vocab": args.vocab,
            "texts": args.texts,
            "graphs": args.graphs,
            "supervised": args.supervised,
            "supervised_fraction": args.supervised_fraction,
            "format": args.format,
            "out": args.out,
        }
    )
    return _cmd_cycle(params)


# ----------------------------------------------------------------------
# generate / parse


def _cmd_generate(params: dict) -> int:
    model, vocab = _load_vocab_for(params["checkpoint"], params["vocab"])
    decode_cfg = DecodeConfig(**{k: params[k] for k in _DECODE_KEYS})
    graphs = load_graph_pool(params["input"])
    lines = []
    for graph in graphs:
        source = prefix_task(G2T_TOKEN, linearize_graph(graph))
        out = generate(model, encode(vocab, source, model.config.max_len), decode_cfg)
        lines.append(decode(vocab, out))
    Path(params["out"]).write_text(
        "".join(line + "\n" for line in lines), encoding="utf-8"
    )
    print(f"generated {len(lines)} texts to {params['out']}")
    return 0


def _cmd_parse(params: dict) -> int:
    model, vocab = _load_vocab_for(params["checkpoint"], params["vocab"])
    decode_cfg = DecodeConfig(**{k: params[k] for k in _DECODE_KEYS})
    texts = load_text_pool(params["input"])
    lines = []
    failures = 0
    for text in texts:
        source = prefix_task(T2G_TOKEN, text)
        out = generate(model, encode(vocab, source, model.config.max_len), decode_cfg)
        raw = decode(vocab, out)
        try:
            lines.append(linearize_graph(parse_graph(raw)))
        except NoTriplesRecoverable:
            lines.append("")
            failures += 1
    Path(params["out"]).write_text(
        "".join(line + "\n" for line in lines), encoding="utf-8"
    )
    print(
        f"parsed {len(lines) - failures}/{len(lines)} texts into graphs, "
        f"wrote {params['out']}"
    )
    return 0


def _run_generate(args: argparse.Namespace) -> int:
    params = _resolve(args, _DECODE_KEYS, _decode_defaults())
    params.update(
        {
            "checkpoint": args.checkpoint,
            "vocab": args.vocab,
            "input": args.input,
            "out": args.out,
        }
    )
    return _cmd_generate(params)


def _run_parse(args: argparse.Namespace) -> int:
    params = _resolve(args, _DECODE_KEYS, _decode_defaults())
    params.update(
        {
            "checkpoint": args.checkpoint,
            "vocab": args.vocab,
            "input": args.input,
            "out": args.out,
        }
    )
    return _cmd_parse(params)


# ----------------------------------------------------------------------
# eval


def _read_lines(path: str) -> list[str]:
    return Path(path).read_text(encoding="utf-8").splitlines()


def _cmd_eval(params: dict) -> int:
    test = load_parallel(params["data"], params["format"])
    train = (
        load_parallel(params["train_data"], params["format"])
        if params.get("train_data")
        else None
    )
    tags = assign_test_split_tags(train, test) if train is not None else None
    hyp_lines = _read_lines(params["hyp"])
    if params["task"] == "g2t":
        instances = test.g2t_instances()
        if len(hyp_lines) != len(instances):
            raise MetricError(
                f"{len(hyp_lines)} hypothesis lines for {len(instances)} "
                "graph instances"
            )
        splits = None
        if tags is not None:
            first_tag: dict[str, str] = {}
            for example, tag in zip(test.examples, tags):
                first_tag.setdefault(linearize_graph(example.graph), tag)
            splits = [
                first_tag[linearize_graph(graph)] for graph, _ in instances
            ]
        report = evaluate_text(
            hyp_lines, [refs for _, refs in instances], splits=splits
        )
    else:
        if len(hyp_lines) != len(test.examples):
            raise MetricError(
                f"{len(hyp_lines)} hypothesis lines for {len(test.examples)} "
                "text instances"
            )
        predicted = []
        for line in hyp_lines:
            if not line.strip():
                predicted.append(None)
                continue
            try:
                predicted.append(parse_graph(line))
            except CodecError:
                predicted.append(None)
        report = evaluate_graphs(
            predicted,
            [example.graph for example in test.examples],
            splits=tags,
            byte_exact=params["byte_exact"],
        )
    print(format_report(report))
    if params.get("out"):
        Path(params["out"]).write_text(
            report_to_json(report) + "\n", encoding="utf-8"
        )
    return 0


def _run_eval(args: argparse.Namespace) -> int:
    return _cmd_eval(
        {
            "task": args.task,
            "data": args.data,
            "train_data": args.train_data,
            "format": args.format,
            "hyp": args.hyp,
            "out": args.out,
            "byte_exact": args.byte_exact,
        }
    )


# ----------------------------------------------------------------------
# crawl


def _cmd_crawl(params: dict) -> int:
    out_dir = Path(params["out"])
    _write_manifest(out_dir, "crawl", params)
    config = CrawlConfig(
        max_depth=params["max_depth"],
        max_paragraphs=params["max_paragraphs"],
        sparql_endpoint=params["sparql_endpoint"],
        wiki_endpoint=params["wiki_endpoint"],
    )
    if params.get("fixture_root"):
        transport = FixtureTransport(params["fixture_root"])
    else:
        transport = HttpTransport(config)
    visited_path = params.get("visited") or out_dir / "visited.txt"
    records = []
    with open(out_dir / "records.jsonl", "w", encoding="utf-8") as handle:
        for record in crawl(params["origins"], transport, config, visited_path):
            records.append(record)
            handle.write(
                json.dumps(
                    {
                        "qid": record.qid,
                        "label": record.label,
                        "depth": record.depth,
                        "triples": [
                            [t.subject, t.predicate, t.object]
                            for t in record.triples
                        ],
                        "paragraphs": list(record.paragraphs),
                    },
                    sort_keys=True,
                )
                + "\n"
            )
    pools = build_pools(records)
    save_text_pool(out_dir / "texts.txt", list(pools.texts))
    save_graph_pool(out_dir / "graphs.txt", list(pools.graphs))
    stats = crawl_stats(records, pools)
    (out_dir / "stats.json").write_text(
        json.dumps(stats, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(
        f"crawled {stats['n_entities']} entities, "
        f"{stats['n_graph_instances']} graph instances, "
        f"{stats['n_text_instances']} text instances"
    )
    return 0


def _run_crawl(args: argparse.Namespace) -> int:
    origins = [o.strip() for o in args.origins.split(",") if o.strip()]
    return _cmd_crawl(
        {
            "origins": origins,
            "out": args.out,
            "max_depth": args.max_depth,
            "max_paragraphs": args.max_paragraphs,
            "fixture_root": args.fixture_root,
            "visited": args.visited,
            "sparql_endpoint": args.sparql_endpoint
            or os.environ.get("GTCYCLE_SPARQL_ENDPOINT")
            or CrawlConfig().sparql_endpoint,
            "wiki_endpoint": args.wiki_endpoint
            or os.environ.get("GTCYCLE_WIKI_ENDPOINT")
            or CrawlConfig().wiki_endpoint,
        }
    )


# ----------------------------------------------------------------------
# rerun


_COMMANDS = {
    "train": _cmd_train,
    "cycle": _cmd_cycle,
    "crawl": _cmd_crawl,
}


def _run_rerun(args: argparse.Namespace) -> int:
    manifest = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
    if manifest.get("format_version") != MANIFEST_VERSION:
        raise CorpusError(
            f"{args.manifest}: unsupported manifest version "
            f"{manifest.get('format_version')}"
        )
    command = manifest.get("command")
    if command not in _COMMANDS:
        raise CorpusError(f"{args.manifest}: cannot rerun command {command!r}")
    params = dict(manifest["params"])
    if args.out:
        params["out"] = args.out
    return _COMMANDS[command](params)


# ----------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gtcycle",
        description="Joint graph-to-text and text-to-graph model workflow.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="supervised fine-tuning on parallel data")
    p.add_argument("--data", required=True, help="parallel corpus file")
    p.add_argument(
        "--format", choices=("webnlg_xml", "tsv_lines"), default="tsv_lines"
    )
    p.add_argument("--dev", help="optional dev corpus for validation")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--vocab-size", dest="vocab_size", type=int)
    _add_train_flags(p)
    _add_model_flags(p)
    p.set_defaults(func=_run_train)

    p = sub.add_parser("cycle", help="cycle training on non-parallel pools")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--texts", help="unlabeled text pool (one per line)")
    p.add_argument("--graphs", help="unlabeled graph pool (one per line)")
    p.add_argument("--supervised", required=True, help="parallel corpus file")
    p.add_argument(
        "--supervised-fraction",
        dest="supervised_fraction",
        type=float,
        help="keep only this fraction of the parallel data",
    )
    p.add_argument(
        "--format", choices=("webnlg_xml", "tsv_lines"), default="tsv_lines"
    )
    p.add_argument("--out", required=True)
    _add_train_flags(p)
    p.set_defaults(func=_run_cycle)

    p = sub.add_parser("generate", help="graphs in, texts out")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--input", required=True, help="linearized graphs, one per line")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON file with parameter defaults")
    _add_decode_flags(p)
    p.set_defaults(func=_run_generate)

    p = sub.add_parser("parse", help="texts in, linearized graphs out")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--input", required=True, help="texts, one per line")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON file with parameter defaults")
    _add_decode_flags(p)
    p.set_defaults(func=_run_parse)

    p = sub.add_parser("eval", help="score generated texts or parsed graphs")
    p.add_argument("--task", choices=("g2t", "t2g"), required=True)
    p.add_argument("--data", required=True, help="reference parallel corpus")
    p.add_argument(
        "--train-data",
        dest="train_data",
        help="training corpus for seen/unseen split reporting",
    )
    p.add_argument(
        "--format", choices=("webnlg_xml", "tsv_lines"), default="tsv_lines"
    )
    p.add_argument("--hyp", required=True, help="hypothesis file, one per line")
    p.add_argument("--out", help="also write the report as JSON")
    p.add_argument(
        "--byte-exact",
        dest="byte_exact",
        action="store_true",
        help="match triples without normalization",
    )
    p.set_defaults(func=_run_eval)

    p = sub.add_parser("crawl", help="build non-parallel pools from a knowledge base")
    p.add_argument("--origins", required=True, help="comma-separated entity ids")
    p.add_argument("--out", required=True)
    p.add_argument("--max-depth", dest="max_depth", type=int, default=5)
    p.add_argument("--max-paragraphs", dest="max_paragraphs", type=int, default=4)
    p.add_argument(
        "--fixture-root",
        dest="fixture_root",
        help="replay a crawl from JSON fixtures instead of the network",
    )
    p.add_argument("--visited", help="visited-id file (default: OUT/visited.txt)")
    p.add_argument("--sparql-endpoint", dest="sparql_endpoint")
    p.add_argument("--wiki-endpoint", dest="wiki_endpoint")
    p.set_defaults(func=_run_crawl)

    p = sub.add_parser("rerun", help="repeat a run recorded in a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", help="override the output directory")
    p.set_defaults(func=_run_rerun)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

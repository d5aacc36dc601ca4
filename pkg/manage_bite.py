#!/usr/bin/env python3
"""
BiTe-GCN Pipeline Manager
Prepare bundles, refine edges, train, evaluate and run the ablation grid from one command
"""

import argparse
import logging
import os
import sys
from typing import Dict, List, Optional, Sequence

import nn
from config import DEFAULT_CONFIG_FILE, ConfigManager
from datasets import (
    DEFAULT_REGISTRY,
    REFINE_REPORT,
    DatasetRegistry,
    builtin_embeddings,
    bundle_stats,
    load_bundle,
    make_planted_dataset,
    prepare_from_files,
    refine_dataset,
    save_bundle,
    save_refined,
)
from embed import load_embeddings
from errors import BiteError, ConfigError
from formats import write_tsv
from model import ModelConfig, Variant, build_inputs, forward_logits, load_checkpoint, parse_variants, save_checkpoint
from refine import RefineConfig
from train import RESULTS_HEADER, TrainConfig, accuracy, make_split, run_ablation, train

logger = logging.getLogger("manage_bite")

EXAMPLES = """
Examples:
  python manage_bite.py prepare --corpus data/toy/corpus.tsv --citations data/toy/citations.tsv --labels data/toy/labels.tsv
  python manage_bite.py refine --t-high 0.95 --t-low 0.5
  python manage_bite.py train --variant b --seed 0
  python manage_bite.py eval --variant b --seed 0
  python manage_bite.py ablation --variants gcn,b,r,a,ra --seeds 0,1,2,3,4
  python manage_bite.py datasets list
"""

# flag destination -> config key
FLAG_KEYS = {
    "bundle": "data.dir",
    "registry": "data.registry",
    "max_n": "corpus.max_n",
    "min_freq": "corpus.min_freq",
    "vocabulary": "corpus.vocabulary",
    "window": "embed.window",
    "dim": "embed.dim",
    "t_high": "refine.t_high",
    "t_low": "refine.t_low",
    "cap": "refine.max_added_per_node",
    "hidden_dim": "model.hidden_dim",
    "heads": "model.heads",
    "dropout": "model.dropout",
    "lr": "train.lr",
    "epochs": "train.epochs",
    "patience": "train.patience",
    "seed": "train.seed",
    "workers": "train.workers",
    "profile": "runtime.profile",
    "timeout": "fetch.timeout",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="manage_bite.py",
        description="🎯 BiTe-GCN pipeline manager",
        epilog=EXAMPLES,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--config", help=f"config file (default: {DEFAULT_CONFIG_FILE} when present)")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")
    parser.add_argument("--profile", choices=("debug", "release"), help="debug enables finite checks")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="warnings only")
    commands = parser.add_subparsers(dest="command", metavar="<command>")
    commands.required = True

    def with_bundle(p):
        p.add_argument("--bundle", help="bundle directory (default: data.dir / BITE_DATA_DIR)")
        return p

    p = with_bundle(commands.add_parser("prepare", help="build a bundle from raw corpus, citations and labels"))
    p.add_argument("--corpus", required=True, help="doc_id<TAB>text file")
    p.add_argument("--citations", required=True, help="src<TAB>dst file")
    p.add_argument("--labels", required=True, help="doc_id<TAB>label file")
    p.add_argument("--vocabulary", help="phrase vocabulary override file")
    p.add_argument("--max-n", type=int)
    p.add_argument("--min-freq", type=int)

    p = with_bundle(commands.add_parser("refine", help="refine DD and WW edges by embedding similarity"))
    p.add_argument("--t-high", type=float)
    p.add_argument("--t-low", type=float)
    p.add_argument("--edge-type", choices=("dd", "ww"), help="refine only this sub-network")
    p.add_argument("--embeddings", metavar="PATH", help="embedding file for --edge-type (default: built-in)")
    p.add_argument("--cap", type=int, help="max added edges per node (0 = add none, -1 = unbounded)")
    p.add_argument("--doc-embeddings", help="document embedding file (default: built-in TF-IDF)")
    p.add_argument("--word-embeddings", help="phrase embedding file (default: built-in PPMI)")
    p.add_argument("--window", type=int)
    p.add_argument("--dim", type=int)

    for name, text in (("train", "train one variant and save a checkpoint"), ("eval", "evaluate a saved checkpoint")):
        p = with_bundle(commands.add_parser(name, help=text))
        p.add_argument("--variant", default="b", help="gcn, b, r, a or ra")
        p.add_argument("--seed", type=int)
        p.add_argument("--checkpoint", help="checkpoint path (default: <bundle>/model-<variant>-seed<seed>.npz)")
        if name == "train":
            _model_flags(p)

    p = with_bundle(commands.add_parser("ablation", help="train every variant over several seeds"))
    p.add_argument("--variants", default="gcn,b,r,a,ra")
    p.add_argument("--seeds", default="0", help="comma-separated seeds")
    p.add_argument("--workers", type=int)
    _model_flags(p)

    p = commands.add_parser("config", help="print the effective configuration")
    p.add_argument("--save", metavar="PATH", help="write it as a config file")

    with_bundle(commands.add_parser("stats", help="degree statistics of a bundle"))

    p = commands.add_parser("datasets", help="dataset registry")
    p.add_argument("--registry")
    actions = p.add_subparsers(dest="action", metavar="<action>")
    actions.required = True
    actions.add_parser("list", help="list registered datasets")
    check = with_bundle(actions.add_parser("check", help="compare a bundle with the registry statistics"))
    check.add_argument("name", nargs="?", help="registry name (default: the registry's default_dataset)")
    fetch = actions.add_parser("fetch", help="download a dataset's raw files")
    fetch.add_argument("name", nargs="?", help="registry name (default: the registry's default_dataset)")
    fetch.add_argument("--out", required=True)
    fetch.add_argument("--timeout", type=int, help="seconds per request")

    p = commands.add_parser("synthetic", help="write the planted-phrase synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--docs", type=int, default=400)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--noise", type=float, default=0.5, help="cross-class citation probability")
    p.add_argument("--seed", type=int, default=0)
    return parser


def _model_flags(p):
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--patience", type=int)
    p.add_argument("--hidden-dim", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--dropout", type=float)


def load_settings(args) -> ConfigManager:
    """Defaults < config file < environment < --set < dedicated flags"""
    config_file = args.config
    if config_file is None and os.path.exists(DEFAULT_CONFIG_FILE):
        config_file = DEFAULT_CONFIG_FILE
    config = ConfigManager(config_file)

    overrides: Dict[str, str] = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = (part.strip() for part in item.split("=", 1))
        overrides[key] = value
    config.apply_overrides(overrides)
    config.apply_overrides({key: getattr(args, dest, None) for dest, key in FLAG_KEYS.items()})
    nn.set_check_finite(config.check_finite)
    return config


def _model_kwargs(config: ConfigManager) -> Dict:
    section = config.section("model")
    return {
        "hidden_dim": section["hidden_dim"],
        "heads": section["heads"],
        "dropout": section["dropout"],
        "activation": section["attention_activation"],
    }


def _refine_config(config: ConfigManager) -> RefineConfig:
    section = config.section("refine")
    cap = section["max_added_per_node"]
    return RefineConfig(
        t_high=section["t_high"],
        t_low=section["t_low"],
        max_added_per_node=None if cap < 0 else cap,
        block_size=section["block_size"],
    )


def _load_dataset(config: ConfigManager, variants: Sequence[Variant]):
    """Bundle with refined edges attached when any variant needs them"""
    bundle = config["data.dir"]
    needs_refined = any(v.refined for v in variants)
    dataset = load_bundle(bundle, refined=None if needs_refined else False)
    if needs_refined and dataset.refined_graph is None:
        logger.warning(f"⚠️ No refined edges in {bundle}; refining in memory with built-in embeddings")
        doc_table, word_table = builtin_embeddings(dataset, config["embed.window"], config["embed.dim"])
        dataset, _ = refine_dataset(dataset, _refine_config(config), doc_table, word_table)
    return dataset


def _checkpoint_path(config: ConfigManager, args, variant: Variant, seed: int) -> str:
    if args.checkpoint:
        return args.checkpoint
    return os.path.join(config["data.dir"], f"model-{variant.value}-seed{seed}.npz")


# Commands ------------------------------------------------------------------------

def cmd_prepare(args, config: ConfigManager) -> int:
    vocabulary = config["corpus.vocabulary"] or None
    dataset = prepare_from_files(
        args.corpus,
        args.citations,
        args.labels,
        vocabulary_path=vocabulary,
        max_n=config["corpus.max_n"],
        min_freq=config["corpus.min_freq"],
    )
    save_bundle(dataset, config["data.dir"])
    labeled = int((dataset.labels >= 0).sum())
    print(f"📊 {dataset.n_docs} documents ({labeled} labeled, {dataset.n_classes} classes), {dataset.n_words} phrases")
    for edge_type, _, edges, *_ in bundle_stats(dataset):
        print(f"   {edge_type.upper()} edges: {edges}")
    return 0


def cmd_refine(args, config: ConfigManager) -> int:
    bundle = config["data.dir"]
    if args.embeddings and not args.edge_type:
        raise ConfigError("--embeddings needs --edge-type dd or ww")
    if args.edge_type:
        if args.doc_embeddings or args.word_embeddings:
            raise ConfigError("--edge-type takes --embeddings, not --doc-embeddings / --word-embeddings")
        dataset = load_bundle(bundle)
        doc_table, word_table = _single_table(config, dataset, args.edge_type, args.embeddings)
    else:
        dataset = load_bundle(bundle, refined=False)
        doc_table, word_table = _both_tables(args, config, dataset)

    dataset, report = refine_dataset(dataset, _refine_config(config), doc_table, word_table)
    save_refined(dataset, bundle, report)
    for row in report:
        print(f"🔧 {row.edge_type.upper()}: {row.before} -> {row.after} (+{row.added} / -{row.removed})")
    print(f"✅ Report written to {os.path.join(bundle, REFINE_REPORT)}")
    return 0


def _single_table(config: ConfigManager, dataset, edge_type: str, path: Optional[str]):
    """(doc_table, word_table) with only the table for edge_type set"""
    if path:
        n_nodes = dataset.n_docs if edge_type == "dd" else dataset.n_words
        table = load_embeddings(path, expected_ids=range(n_nodes))
    else:
        doc_table, word_table = builtin_embeddings(dataset, config["embed.window"], config["embed.dim"])
        table = doc_table if edge_type == "dd" else word_table
    return (table, None) if edge_type == "dd" else (None, table)


def _both_tables(args, config: ConfigManager, dataset):
    if args.doc_embeddings or args.word_embeddings:
        if not (args.doc_embeddings and args.word_embeddings):
            raise ConfigError("--doc-embeddings and --word-embeddings must be given together")
        doc_table = load_embeddings(args.doc_embeddings, expected_ids=range(dataset.n_docs))
        word_table = load_embeddings(args.word_embeddings, expected_ids=range(dataset.n_words))
    else:
        doc_table, word_table = builtin_embeddings(dataset, config["embed.window"], config["embed.dim"])
    return doc_table, word_table


def cmd_train(args, config: ConfigManager) -> int:
    variant = parse_variants(args.variant)[0]
    seed = config["train.seed"]
    dataset = _load_dataset(config, [variant])
    graph = dataset.graph_for(variant)
    model_cfg = ModelConfig.for_variant(variant, out_dim=dataset.n_classes, **_model_kwargs(config))
    split = make_split(dataset.labels, seed)
    result = train(model_cfg, graph, dataset.doc_features, dataset.labels, split, TrainConfig.from_config(config))

    inputs = build_inputs(model_cfg, graph, dataset.doc_features)
    scores = forward_logits(model_cfg, result.params, inputs).values[: inputs.n_docs]
    train_acc = accuracy(scores, dataset.labels, split.train_ids)
    val_acc = accuracy(scores, dataset.labels, split.val_ids or split.train_ids)
    test_acc = accuracy(scores, dataset.labels, split.test_ids) if split.test_ids else float("nan")

    checkpoint = _checkpoint_path(config, args, variant, seed)
    save_checkpoint(checkpoint, result.params, {"variant": variant.value, "seed": seed, "best_epoch": result.best_epoch})
    bundle = config["data.dir"]
    write_tsv(os.path.join(bundle, "train_results.tsv"), RESULTS_HEADER, [(variant.value, seed, val_acc, test_acc)])
    write_tsv(
        os.path.join(bundle, f"history-{variant.value}-seed{seed}.tsv"),
        ("epoch", "loss", "clean_loss", "train_acc", "val_acc", "val_loss"),
        [(r.epoch, r.loss, r.clean_loss, r.train_acc, r.val_acc, r.val_loss) for r in result.history],
    )
    print(f"✅ {variant.label} seed {seed}: train {train_acc:.4f}  val {val_acc:.4f}  test {test_acc:.4f}")
    return 0


def cmd_eval(args, config: ConfigManager) -> int:
    variant = parse_variants(args.variant)[0]
    seed = config["train.seed"]
    params, meta = load_checkpoint(_checkpoint_path(config, args, variant, seed))
    variant = Variant(meta.get("variant", variant.value))
    seed = int(meta.get("seed", seed))
    dataset = _load_dataset(config, [variant])
    inputs = build_inputs(params.cfg, dataset.graph_for(variant), dataset.doc_features)
    scores = forward_logits(params.cfg, params, inputs).values[: inputs.n_docs]
    split = make_split(dataset.labels, seed)

    row: List = [variant.value, seed]
    for ids in (split.train_ids, split.val_ids, split.test_ids):
        row.append(accuracy(scores, dataset.labels, ids) if ids else float("nan"))
    write_tsv(os.path.join(config["data.dir"], "eval_results.tsv"), ("variant", "seed", "train_acc", "val_acc", "test_acc"), [row])
    print(f"📊 {variant.label} seed {seed}: train {row[2]:.4f}  val {row[3]:.4f}  test {row[4]:.4f}")
    return 0


def cmd_ablation(args, config: ConfigManager) -> int:
    variants = parse_variants(args.variants)
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"--seeds expects comma-separated integers, got {args.seeds!r}")
    dataset = _load_dataset(config, variants)
    result = run_ablation(
        dataset,
        variants,
        seeds,
        TrainConfig.from_config(config),
        _model_kwargs(config),
        workers=config["train.workers"],
    )
    bundle = config["data.dir"]
    result.write(os.path.join(bundle, "ablation_results.tsv"), os.path.join(bundle, "ablation_summary.tsv"))
    print("\n📋 Ablation summary (test accuracy)")
    print("=" * 50)
    for s in result.summary:
        print(f"  {s.model:14s} {s.test_mean:.4f} ± {s.test_std:.4f}  ({s.runs} runs)")
    return 0


def cmd_config(args, config: ConfigManager) -> int:
    print(config.describe())
    if args.save:
        config.save_config(args.save)
    return 0


def cmd_stats(args, config: ConfigManager) -> int:
    dataset = load_bundle(config["data.dir"], refined=False)
    print(f"📊 {config['data.dir']}: {dataset.n_docs} documents, {dataset.n_words} words, {dataset.n_classes} classes")
    print(f"  {'type':4s} {'nodes':>7s} {'edges':>8s} {'min':>5s} {'max':>5s} {'mean':>8s} {'isolated':>9s}")
    for edge_type, nodes, edges, lo, hi, mean, isolated in bundle_stats(dataset):
        print(f"  {edge_type.upper():4s} {nodes:7d} {edges:8d} {lo:5d} {hi:5d} {mean:8.3f} {isolated:9d}")
    return 0


def _registry_path(config: ConfigManager) -> str:
    """Relative registry paths resolve against the working directory, then the install directory"""
    path = config["data.registry"]
    if os.path.isabs(path) or os.path.exists(path):
        return path
    return os.path.join(os.path.dirname(DEFAULT_REGISTRY), path)


def cmd_datasets(args, config: ConfigManager) -> int:
    registry = DatasetRegistry(_registry_path(config))
    if args.action == "list":
        print("📋 Registered datasets:")
        print("=" * 50)
        for entry in registry.list_datasets():
            print(f"🟢 {entry.name}: {entry.documents} documents, {entry.edges} links, {entry.classes} classes")
            print(f"   {entry.description}")
            if entry.reference:
                refs = "  ".join(f"{Variant(k).label} {v:.4f}" for k, v in entry.reference.items())
                print(f"   Reference: {refs}")
        return 0
    if args.action == "check":
        dataset = load_bundle(config["data.dir"], refined=False)
        name = registry.resolve(args.name).name
        mismatches = registry.check_bundle(name, dataset)
        if not mismatches:
            print(f"✅ {config['data.dir']} matches {name}")
            return 0
        for field, expected, actual in mismatches:
            print(f"❌ {field}: expected {expected}, got {actual}")
        return 1
    registry.fetch_dataset(args.name, args.out, timeout=config["fetch.timeout"])
    return 0


def cmd_synthetic(args, config: ConfigManager) -> int:
    planted = make_planted_dataset(n_docs=args.docs, n_classes=args.classes, cross_class_noise=args.noise, seed=args.seed)
    planted.write(args.out)
    print(f"✅ Planted dataset: {len(planted.texts)} documents, {len(planted.vocabulary)} phrases in {args.out}")
    print(f"   Prepare with --vocabulary {os.path.join(args.out, 'vocabulary.txt')}")
    return 0


COMMANDS = {
    "prepare": cmd_prepare,
    "refine": cmd_refine,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablation": cmd_ablation,
    "config": cmd_config,
    "stats": cmd_stats,
    "datasets": cmd_datasets,
    "synthetic": cmd_synthetic,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(message)s", force=True)
    try:
        config = load_settings(args)
        return COMMANDS[args.command](args, config)
    except BiteError as e:
        print(f"❌ {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())

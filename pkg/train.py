#!/usr/bin/env python3
"""
Training and Evaluation
Seeded splits, the Adam training loop with early stopping, accuracy and the ablation driver
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

import nn
from errors import DivergenceError, NonFiniteError, TrainingError
from formats import write_tsv
from graph import BiTypedGraph
from model import ModelConfig, ModelInputs, ModelParams, Variant, build_inputs, forward_logits

logger = logging.getLogger(__name__)

TRAIN_PER_CLASS = 20
VAL_SIZE = 500
MIN_TEST_SIZE = 1000
FALLBACK_FRACTIONS = (0.6, 0.2, 0.2)

RESULTS_HEADER = ("variant", "seed", "val_acc", "test_acc")
SUMMARY_HEADER = ("variant", "model", "runs", "val_mean", "val_std", "test_mean", "test_std")


@dataclass(frozen=True)
class Split:
    train_ids: Tuple[int, ...]
    val_ids: Tuple[int, ...]
    test_ids: Tuple[int, ...]

    def __post_init__(self):
        for name in ("train_ids", "val_ids", "test_ids"):
            object.__setattr__(self, name, tuple(sorted(int(i) for i in getattr(self, name))))
        if not self.train_ids:
            raise TrainingError("split has no training documents")
        train, val, test = set(self.train_ids), set(self.val_ids), set(self.test_ids)
        if len(train) != len(self.train_ids) or len(val) != len(self.val_ids) or len(test) != len(self.test_ids):
            raise TrainingError("split contains duplicate ids")
        overlap = (train & val) | (train & test) | (val & test)
        if overlap:
            raise TrainingError(f"split sets overlap at document {min(overlap)}")

    def check_labels(self, labels: np.ndarray, n_classes: int):
        for name, ids in (("train", self.train_ids), ("val", self.val_ids), ("test", self.test_ids)):
            for i in ids:
                if not 0 <= i < labels.shape[0]:
                    raise TrainingError(f"{name} id {i} is not a document")
                if not 0 <= labels[i] < n_classes:
                    raise TrainingError(f"{name} document {i} has no usable label ({labels[i]})")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.01
    epochs: int = 300
    patience: int = 30
    seed: int = 0
    weight_decay: float = 5e-4

    def __post_init__(self):
        if self.lr <= 0:
            raise TrainingError(f"lr must be positive, got {self.lr}")
        if self.epochs < 0:
            raise TrainingError(f"epochs must be non-negative, got {self.epochs}")
        if self.patience < 1:
            raise TrainingError(f"patience must be positive, got {self.patience}")
        if self.weight_decay < 0:
            raise TrainingError(f"weight_decay must be non-negative, got {self.weight_decay}")

    @classmethod
    def from_config(cls, config, seed: Optional[int] = None) -> "TrainConfig":
        section = config.section("train")
        return cls(
            lr=section["lr"],
            epochs=section["epochs"],
            patience=section["patience"],
            seed=section["seed"] if seed is None else seed,
            weight_decay=section["weight_decay"],
        )


@dataclass(frozen=True)
class EpochRecord:
    """loss drives the update (dropout on); clean_loss is the train loss after it, dropout off"""

    epoch: int
    loss: float
    train_acc: float
    val_acc: float
    val_loss: float
    clean_loss: float


@dataclass
class TrainResult:
    params: ModelParams
    history: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0

    @property
    def losses(self) -> List[float]:
        return [record.loss for record in self.history]

    @property
    def clean_losses(self) -> List[float]:
        return [record.clean_loss for record in self.history]


def seed_streams(seed: int) -> Tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    """Independent (init, dropout, split) generators derived from one seed"""
    children = np.random.SeedSequence(seed).spawn(3)
    return tuple(np.random.default_rng(child) for child in children)


def make_split(labels: Sequence[int], seed: int = 0) -> Split:
    """20 per class / 500 val / rest test when classes are large enough, else 60/20/20 per class"""
    labels = np.asarray(labels, dtype=np.int64)
    labeled = np.flatnonzero(labels >= 0)
    if labeled.size == 0:
        raise TrainingError("no labeled documents to split")
    classes = np.unique(labels[labeled])
    rng = seed_streams(seed)[2]
    by_class = {int(c): rng.permutation(labeled[labels[labeled] == c]) for c in classes}

    standard = all(ids.size >= 2 * TRAIN_PER_CLASS for ids in by_class.values()) and (
        labeled.size - TRAIN_PER_CLASS * len(classes) - VAL_SIZE >= MIN_TEST_SIZE
    )
    train, val, test = [], [], []
    if standard:
        rest = []
        for c in sorted(by_class):
            train.extend(by_class[c][:TRAIN_PER_CLASS])
            rest.extend(by_class[c][TRAIN_PER_CLASS:])
        rest = rng.permutation(np.array(rest, dtype=np.int64))
        val, test = rest[:VAL_SIZE], rest[VAL_SIZE:]
    else:
        for c in sorted(by_class):
            ids = by_class[c]
            n_train = max(1, int(round(FALLBACK_FRACTIONS[0] * ids.size)))
            n_val = int(round(FALLBACK_FRACTIONS[1] * ids.size))
            train.extend(ids[:n_train])
            val.extend(ids[n_train:n_train + n_val])
            test.extend(ids[n_train + n_val:])
    split = Split(tuple(train), tuple(val), tuple(test))
    logger.debug(f"Split: {len(split.train_ids)} train / {len(split.val_ids)} val / {len(split.test_ids)} test")
    return split


def _row_labels(labels: np.ndarray, n_rows: int) -> np.ndarray:
    """Labels padded to every model row; unlabeled and word rows hold 0 and are never masked in"""
    rows = np.zeros(n_rows, dtype=np.int64)
    rows[: labels.shape[0]] = np.where(labels >= 0, labels, 0)
    return rows


def accuracy(scores: np.ndarray, labels: Sequence[int], ids: Sequence[int]) -> float:
    """Fraction of ids whose argmax (lowest class on ties) equals the label"""
    ids = np.asarray(list(ids), dtype=np.int64)
    if ids.size == 0:
        raise TrainingError("cannot evaluate on an empty id set")
    labels = np.asarray(labels, dtype=np.int64)
    predictions = np.argmax(scores[ids], axis=1)
    return float(np.mean(predictions == labels[ids]))


def predict(params: ModelParams, inputs: ModelInputs) -> np.ndarray:
    """Predicted class per document"""
    logits = forward_logits(params.cfg, params, inputs, training=False)
    return np.argmax(logits.values[: inputs.n_docs], axis=1)


def evaluate(params: ModelParams, graph: BiTypedGraph, features, labels: Sequence[int], ids: Sequence[int]) -> float:
    inputs = build_inputs(params.cfg, graph, features)
    logits = forward_logits(params.cfg, params, inputs, training=False)
    return accuracy(logits.values[: inputs.n_docs], labels, ids)


def _improved(val_acc: float, val_loss: float, best: Optional[Tuple[float, float]]) -> bool:
    if best is None:
        return True
    return val_acc > best[0] or (val_acc == best[0] and val_loss < best[1])


def train(
    model_cfg: ModelConfig,
    graph: BiTypedGraph,
    features,
    labels: Sequence[int],
    split: Split,
    cfg: TrainConfig = TrainConfig(),
) -> TrainResult:
    """Adam on the masked cross-entropy; returns the best-validation parameters.

    An epoch improves when validation accuracy rises, or stays equal while
    validation loss falls. Training stops after `patience` epochs without
    improvement. A non-finite loss or parameter raises DivergenceError.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape[0] != graph.n_docs:
        raise TrainingError(f"{labels.shape[0]} labels for {graph.n_docs} documents")
    split.check_labels(labels, model_cfg.out_dim)

    inputs = build_inputs(model_cfg, graph, features)
    init_rng, dropout_rng, _ = seed_streams(cfg.seed)
    params = ModelParams.init(model_cfg, inputs.d_in, init_rng)
    result = TrainResult(params=params)
    if cfg.epochs == 0:
        return result

    n_rows = inputs.x.shape[0]
    row_labels = _row_labels(labels, n_rows)
    train_ids = np.array(split.train_ids, dtype=np.int64)
    val_ids = np.array(split.val_ids or split.train_ids, dtype=np.int64)
    state = nn.AdamState()
    best: Optional[Tuple[float, float]] = None
    best_snapshot = params.snapshot()
    stale = 0

    for epoch in range(1, cfg.epochs + 1):
        nn.zero_grad(params.tensors)
        try:
            with nn.Tape() as tape:
                logits = forward_logits(model_cfg, params, inputs, training=True, rng=dropout_rng)
                loss = nn.cross_entropy(logits, row_labels, train_ids)
            loss_value = loss.item()
            if not np.isfinite(loss_value):
                raise DivergenceError(epoch, f"loss {loss_value}")
            tape.backward(loss)
            nn.adam_step(params.tensors, None, state, lr=cfg.lr, weight_decay=cfg.weight_decay)
            for name, tensor in params.tensors.items():
                if not np.all(np.isfinite(tensor.values)):
                    raise DivergenceError(epoch, f"parameter {name} is non-finite")

            eval_logits = forward_logits(model_cfg, params, inputs, training=False)
            val_loss = nn.cross_entropy(eval_logits, row_labels, val_ids).item()
            clean_loss = nn.cross_entropy(eval_logits, row_labels, train_ids).item()
        except NonFiniteError as e:
            raise DivergenceError(epoch, str(e))

        scores = eval_logits.values[: inputs.n_docs]
        record = EpochRecord(
            epoch=epoch,
            loss=loss_value,
            train_acc=accuracy(scores, labels, train_ids),
            val_acc=accuracy(scores, labels, val_ids),
            val_loss=val_loss,
            clean_loss=clean_loss,
        )
        result.history.append(record)
        logger.debug(
            f"epoch {epoch:4d} loss {record.loss:.4f} train {record.train_acc:.4f} "
            f"val {record.val_acc:.4f} ({record.val_loss:.4f})"
        )

        if _improved(record.val_acc, record.val_loss, best):
            best = (record.val_acc, record.val_loss)
            best_snapshot = params.snapshot()
            result.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                logger.debug(f"Early stop at epoch {epoch}")
                break

    params.restore(best_snapshot)
    logger.info(
        f"✅ Trained {model_cfg.variant} (seed {cfg.seed}): best epoch {result.best_epoch}, "
        f"val acc {best[0]:.4f}"
    )
    return result


# Ablation ------------------------------------------------------------------------

@dataclass(frozen=True)
class AblationRow:
    variant: str
    seed: int
    val_acc: float
    test_acc: float


@dataclass(frozen=True)
class SummaryRow:
    variant: str
    model: str
    runs: int
    val_mean: float
    val_std: float
    test_mean: float
    test_std: float


@dataclass
class AblationResult:
    rows: List[AblationRow]
    summary: List[SummaryRow]

    def write(self, results_path: str, summary_path: str):
        write_tsv(results_path, RESULTS_HEADER, [(r.variant, r.seed, r.val_acc, r.test_acc) for r in self.rows])
        write_tsv(
            summary_path,
            SUMMARY_HEADER,
            [(s.variant, s.model, s.runs, s.val_mean, s.val_std, s.test_mean, s.test_std) for s in self.summary],
        )


def summarize(rows: Sequence[AblationRow]) -> List[SummaryRow]:
    """Mean and population std per variant, in first-seen order"""
    order: List[str] = []
    grouped: Dict[str, List[AblationRow]] = {}
    for row in rows:
        if row.variant not in grouped:
            order.append(row.variant)
            grouped[row.variant] = []
        grouped[row.variant].append(row)
    summary = []
    for name in order:
        val = np.array([r.val_acc for r in grouped[name]])
        test = np.array([r.test_acc for r in grouped[name]])
        summary.append(
            SummaryRow(
                variant=name,
                model=Variant(name).label,
                runs=len(grouped[name]),
                val_mean=float(val.mean()),
                val_std=float(val.std()),
                test_mean=float(test.mean()),
                test_std=float(test.std()),
            )
        )
    return summary


def _run_one(dataset, variant: Variant, seed: int, cfg: TrainConfig, model_kwargs: Dict[str, Any]) -> AblationRow:
    graph = dataset.graph_for(variant)
    model_cfg = ModelConfig.for_variant(variant, out_dim=dataset.n_classes, **model_kwargs)
    split = make_split(dataset.labels, seed)
    run_cfg = TrainConfig(lr=cfg.lr, epochs=cfg.epochs, patience=cfg.patience, seed=seed, weight_decay=cfg.weight_decay)
    result = train(model_cfg, graph, dataset.doc_features, dataset.labels, split, run_cfg)
    inputs = build_inputs(model_cfg, graph, dataset.doc_features)
    scores = forward_logits(model_cfg, result.params, inputs).values[: inputs.n_docs]
    val_ids = split.val_ids or split.train_ids
    test_acc = accuracy(scores, dataset.labels, split.test_ids) if split.test_ids else float("nan")
    return AblationRow(variant.value, seed, accuracy(scores, dataset.labels, val_ids), test_acc)


def run_ablation(
    dataset,
    variants: Sequence,
    seeds: Sequence[int],
    cfg: TrainConfig = TrainConfig(),
    model_kwargs: Optional[Dict[str, Any]] = None,
    workers: int = 1,
) -> AblationResult:
    """Train every (variant, seed) pair; rows come back in variant-then-seed order.

    `dataset` provides graph_for(variant), doc_features, labels and n_classes.
    Each seed fixes one split shared by all variants.
    """
    resolved = []
    for v in variants:
        try:
            resolved.append(Variant(v))
        except ValueError:
            raise TrainingError(f"unknown variant {v!r}")
    if not seeds:
        raise TrainingError("ablation needs at least one seed")
    model_kwargs = dict(model_kwargs or {})
    jobs = [(v, int(s)) for v in resolved for s in seeds]
    logger.info(f"🔍 Ablation: {len(resolved)} variants x {len(seeds)} seeds")

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_one, dataset, v, s, cfg, model_kwargs) for v, s in jobs]
            rows = [f.result() for f in futures]
    else:
        rows = [_run_one(dataset, v, s, cfg, model_kwargs) for v, s in jobs]

    summary = summarize(rows)
    for s in summary:
        logger.info(f"📊 {s.model:14s} test {s.test_mean:.4f} ± {s.test_std:.4f} ({s.runs} runs)")
    return AblationResult(rows=rows, summary=summary)

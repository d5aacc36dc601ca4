#!/usr/bin/env python3
"""
BiTe-GCN Model
Per-type GCN sublayers, cross-type aggregation (mean / concat / attention),
the two-layer joint network and the plain GCN baseline
"""

import logging
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

import numpy as np
import scipy.sparse as sp

import nn
from errors import ShapeError, TrainingError
from formats import read_checkpoint, write_checkpoint
from graph import EDGE_TYPES, BiTypedGraph, EdgeType, NormalizedAdjacency, normalize
from nn import Tensor

logger = logging.getLogger(__name__)

N_LAYERS = 2

ACTIVATIONS = {
    "tanh": nn.tanh,
    "relu": nn.relu,
    "identity": nn.identity,
}


class Aggregation(str, Enum):
    MEAN = "mean"
    CONCAT = "concat"
    ATTENTION = "attention"


class Variant(str, Enum):
    """Ablation rows: plain GCN, base, +refinement, +attention, +both"""

    GCN = "gcn"
    B = "b"
    R = "r"
    A = "a"
    RA = "ra"

    @property
    def refined(self) -> bool:
        return self in (Variant.R, Variant.RA)

    @property
    def attention(self) -> bool:
        return self in (Variant.A, Variant.RA)

    @property
    def label(self) -> str:
        return {"gcn": "GCN", "b": "BiTe-GCN-B", "r": "BiTe-GCN-R", "a": "BiTe-GCN-A", "ra": "BiTe-GCN-R-A"}[self.value]


def parse_variants(text: str) -> List[Variant]:
    """'b,r,a,ra' -> [Variant.B, ...]; unknown names raise TrainingError"""
    variants = []
    for name in (part.strip().lower().replace("-", "") for part in text.split(",")):
        if not name:
            continue
        try:
            variants.append(Variant(name))
        except ValueError:
            raise TrainingError(f"unknown variant {name!r} (expected gcn, b, r, a or ra)")
    if not variants:
        raise TrainingError("no variants given")
    return variants


@dataclass(frozen=True)
class ModelConfig:
    out_dim: int
    hidden_dim: int = 16
    agg: Aggregation = Aggregation.MEAN
    heads: int = 4
    dropout: float = 0.5
    activation: str = "tanh"
    messages: Tuple[EdgeType, ...] = EDGE_TYPES
    arch: str = "bite"
    layers: int = N_LAYERS
    variant: str = Variant.B.value

    def __post_init__(self):
        object.__setattr__(self, "agg", Aggregation(self.agg))
        object.__setattr__(self, "messages", tuple(EdgeType(t) for t in self.messages))
        if self.layers != N_LAYERS:
            raise TrainingError(f"the model has exactly {N_LAYERS} layers, got {self.layers}")
        if self.out_dim < 1 or self.hidden_dim < 1:
            raise TrainingError("out_dim and hidden_dim must be positive")
        if self.heads < 1:
            raise TrainingError(f"attention needs at least one head, got {self.heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise TrainingError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.activation not in ACTIVATIONS:
            raise TrainingError(f"unknown attention activation {self.activation!r}")
        if self.arch not in ("bite", "gcn"):
            raise TrainingError(f"unknown architecture {self.arch!r}")
        if not self.messages or len(set(self.messages)) != len(self.messages):
            raise TrainingError("messages must be a non-empty set of edge types")
        if self.agg == Aggregation.ATTENTION and set(self.messages) != set(EDGE_TYPES):
            raise TrainingError("attention aggregation needs all three messages")

    @classmethod
    def for_variant(cls, variant: Union[str, Variant], out_dim: int, **kwargs) -> "ModelConfig":
        variant = Variant(variant)
        if variant == Variant.GCN:
            return cls(out_dim=out_dim, arch="gcn", messages=(EdgeType.DD,), variant=variant.value, **kwargs)
        agg = Aggregation.ATTENTION if variant.attention else Aggregation.MEAN
        return cls(out_dim=out_dim, agg=agg, variant=variant.value, **kwargs)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["agg"] = self.agg.value
        data["messages"] = [t.value for t in self.messages]
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ModelConfig":
        data = dict(data)
        data["messages"] = tuple(data.get("messages", [t.value for t in EDGE_TYPES]))
        return cls(**data)


@dataclass(frozen=True)
class GcnLayerParams:
    edge_type: EdgeType
    weight: Tensor


@dataclass(frozen=True)
class AttentionAggParams:
    heads: int
    rho: Tuple[Tensor, ...]
    projection: Tensor
    activation: str = "tanh"


def glorot(rng: np.random.Generator, d_in: int, d_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (d_in + d_out))
    return rng.uniform(-limit, limit, size=(d_in, d_out))


class ModelParams:
    """Named weights of one model; every tensor requires grad"""

    def __init__(self, cfg: ModelConfig, tensors: Dict[str, Tensor]):
        self.cfg = cfg
        self.tensors = tensors

    @classmethod
    def init(cls, cfg: ModelConfig, d_in: int, rng: np.random.Generator) -> "ModelParams":
        dims = {1: (d_in, cfg.hidden_dim), 2: (cfg.hidden_dim, cfg.out_dim)}
        arrays: Dict[str, np.ndarray] = {}
        for layer in (1, 2):
            d_from, d_to = dims[layer]
            for t in cfg.messages:
                arrays[f"layer{layer}.gcn.{t.value}"] = glorot(rng, d_from, d_to)
            if cfg.arch != "bite":
                continue
            if cfg.agg == Aggregation.CONCAT:
                k = len(cfg.messages) * d_to
                arrays[f"layer{layer}.concat.proj"] = glorot(rng, k, d_to)
            elif cfg.agg == Aggregation.ATTENTION:
                for head in range(cfg.heads):
                    arrays[f"layer{layer}.att.rho{head}"] = glorot(rng, 2 * d_to, 2)
                arrays[f"layer{layer}.att.proj"] = glorot(rng, cfg.heads * d_to, d_to)
        return cls.from_arrays(cfg, arrays)

    @classmethod
    def from_arrays(cls, cfg: ModelConfig, arrays: Mapping[str, np.ndarray]) -> "ModelParams":
        return cls(cfg, {name: Tensor(np.array(a, dtype=np.float64), requires_grad=True) for name, a in arrays.items()})

    def __getitem__(self, name: str) -> Tensor:
        if name not in self.tensors:
            raise ShapeError(f"missing parameter {name!r}")
        return self.tensors[name]

    def sublayer(self, layer: int, t: EdgeType) -> GcnLayerParams:
        return GcnLayerParams(edge_type=t, weight=self[f"layer{layer}.gcn.{EdgeType(t).value}"])

    def aggregation(self, layer: int):
        if self.cfg.agg == Aggregation.CONCAT:
            return self[f"layer{layer}.concat.proj"]
        if self.cfg.agg == Aggregation.ATTENTION:
            return AttentionAggParams(
                heads=self.cfg.heads,
                rho=tuple(self[f"layer{layer}.att.rho{h}"] for h in range(self.cfg.heads)),
                projection=self[f"layer{layer}.att.proj"],
                activation=self.cfg.activation,
            )
        return None

    def snapshot(self) -> Dict[str, np.ndarray]:
        return {name: t.values.copy() for name, t in self.tensors.items()}

    def restore(self, arrays: Mapping[str, np.ndarray]):
        if set(arrays) != set(self.tensors):
            raise ShapeError("snapshot names do not match the model parameters")
        for name, values in arrays.items():
            self.tensors[name].values = np.array(values, dtype=np.float64)


# Graph operators -----------------------------------------------------------------

@dataclass(frozen=True)
class JointOperators:
    """Per-type renormalized adjacency lifted onto the joint (docs then words) node space"""

    n_docs: int
    n_words: int
    matrices: Dict[EdgeType, sp.csr_matrix] = field(default_factory=dict)

    @property
    def doc_mask(self) -> np.ndarray:
        return np.arange(self.n_docs + self.n_words) < self.n_docs

    @classmethod
    def from_adjacencies(cls, adjs: Mapping[EdgeType, NormalizedAdjacency], n_docs: int, n_words: int):
        return cls(n_docs, n_words, {EdgeType(t): adj.joint(n_docs, n_words) for t, adj in adjs.items()})

    @classmethod
    def from_graph(cls, graph: BiTypedGraph) -> "JointOperators":
        adjs = {t: normalize(graph, t) for t in EDGE_TYPES if _has_nodes(graph, t)}
        return cls.from_adjacencies(adjs, graph.n_docs, graph.n_words)


def _has_nodes(graph: BiTypedGraph, t: EdgeType) -> bool:
    return {EdgeType.DD: graph.n_docs, EdgeType.WW: graph.n_words, EdgeType.DW: graph.n_nodes}[t] > 0


def _project(h, weight: Tensor) -> Tensor:
    """h·W where h is a Tensor or a constant sparse input"""
    if isinstance(h, Tensor):
        return nn.matmul(h, weight)
    if h.shape[1] != weight.shape[0]:
        raise ShapeError(f"input width {h.shape[1]} does not match weight {weight.shape}")
    return nn.spmm(h, weight)


def _dropout(h, rate: float, rng, training: bool):
    if isinstance(h, Tensor):
        return nn.dropout(h, rate, rng, training)
    return nn.sparse_dropout(h, rate, rng, training)


# Layers --------------------------------------------------------------------------

def gcn_sublayer(h, adj, params: GcnLayerParams, n_docs: Optional[int] = None) -> Tensor:
    """Â_t · h · W_t over the joint node space"""
    matrix = adj
    n_rows = h.shape[0]
    if isinstance(adj, NormalizedAdjacency):
        matrix = adj.matrix
        if matrix.shape != (n_rows, n_rows):
            if n_docs is None:
                raise ShapeError(f"{adj.edge_type.value} adjacency {matrix.shape} needs n_docs to lift onto {n_rows} nodes")
            matrix = adj.joint(n_docs, n_rows - n_docs)
    if matrix.shape != (n_rows, n_rows):
        raise ShapeError(f"adjacency {matrix.shape} does not match {n_rows} nodes")
    return nn.spmm(matrix, _project(h, params.weight))


def _attention(m1: Tensor, m2: Tensor, params: AttentionAggParams, trace: Optional[List]) -> Tensor:
    if params.heads < 1 or len(params.rho) != params.heads:
        raise ShapeError(f"attention needs heads >= 1 with one score map each, got {params.heads}")
    activation = ACTIVATIONS[params.activation]
    pair = nn.concat_cols([m1, m2])
    heads = []
    for rho in params.rho:
        if rho.shape != (pair.shape[1], 2):
            raise ShapeError(f"score map {rho.shape} does not match message pair width {pair.shape[1]}")
        weights = nn.softmax_rows(activation(nn.matmul(pair, rho)))
        if trace is not None:
            trace.append(weights.values.copy())
        heads.append(
            nn.add(
                nn.scale_rows(m1, nn.slice_cols(weights, 0, 1)),
                nn.scale_rows(m2, nn.slice_cols(weights, 1, 2)),
            )
        )
    return nn.matmul(nn.concat_cols(heads), params.projection)


def aggregate(
    messages: Mapping[EdgeType, Tensor],
    params,
    mode: Union[str, Aggregation],
    doc_mask: Optional[np.ndarray] = None,
    trace: Optional[List] = None,
) -> Tensor:
    """Merge per-type messages into one representation per node.

    Mean averages the messages incident to each node kind (documents:
    DD and DW, words: WW and DW). Concat projects the column-concatenated
    messages. Attention weighs two slots per node: documents attend over
    (H_DD, mean of H_DW and H_WW), words over (H_WW, H_DW).
    """
    mode = Aggregation(mode)
    present = [t for t in EDGE_TYPES if t in messages]
    if not present:
        raise ShapeError("aggregate needs at least one message")
    shape = messages[present[0]].shape
    for t in present:
        if messages[t].shape != shape:
            raise ShapeError(f"message {t.value} has shape {messages[t].shape}, expected {shape}")
    if doc_mask is None:
        doc_mask = np.ones(shape[0], dtype=bool)
    doc_mask = np.asarray(doc_mask, dtype=bool)

    if mode == Aggregation.MEAN:
        doc_msgs = [messages[t] for t in present if t in (EdgeType.DD, EdgeType.DW)] or [messages[t] for t in present]
        word_msgs = [messages[t] for t in present if t in (EdgeType.WW, EdgeType.DW)] or [messages[t] for t in present]
        doc_mean = nn.mean(doc_msgs)
        if doc_mask.all():
            return doc_mean
        word_mean = nn.mean(word_msgs)
        if not doc_mask.any():
            return word_mean
        return nn.select_rows(doc_mask, doc_mean, word_mean)

    if mode == Aggregation.CONCAT:
        return nn.matmul(nn.concat_cols([messages[t] for t in present]), params)

    missing = [t.value for t in EDGE_TYPES if t not in messages]
    if missing:
        raise ShapeError(f"attention aggregation needs all three messages, missing {', '.join(missing)}")
    h_dd, h_ww, h_dw = messages[EdgeType.DD], messages[EdgeType.WW], messages[EdgeType.DW]
    m1 = nn.select_rows(doc_mask, h_dd, h_ww)
    m2 = nn.select_rows(doc_mask, nn.mean([h_dw, h_ww]), h_dw)
    return _attention(m1, m2, params, trace)


def _as_operators(adjs, n_rows: int) -> JointOperators:
    if isinstance(adjs, JointOperators):
        return adjs
    if EdgeType.DD not in adjs:
        raise ShapeError("adjacency map needs a DD entry to size the document block")
    n_docs = adjs[EdgeType.DD].shape[0]
    return JointOperators.from_adjacencies(adjs, n_docs, n_rows - n_docs)


def bite_logits(
    x,
    adjs,
    cfg: ModelConfig,
    params: ModelParams,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
    trace: Optional[Dict[int, List[np.ndarray]]] = None,
) -> Tensor:
    """Two joint-convolution layers; returns pre-softmax class scores"""
    ops = _as_operators(adjs, x.shape[0])
    h = x
    for layer in (1, 2):
        h = _dropout(h, cfg.dropout, rng, training)
        messages = {t: gcn_sublayer(h, ops.matrices[t], params.sublayer(layer, t)) for t in cfg.messages}
        layer_trace = None
        if trace is not None:
            layer_trace = trace.setdefault(layer, [])
        h = aggregate(messages, params.aggregation(layer), cfg.agg, ops.doc_mask, layer_trace)
        if layer == 1:
            h = nn.relu(h)
    return h


def bite_forward(x, adjs, cfg: ModelConfig, params: ModelParams, training: bool = False, rng=None, trace=None) -> Tensor:
    """Per-node class distribution Z"""
    return nn.softmax_rows(bite_logits(x, adjs, cfg, params, training, rng, trace))


def gcn_baseline_logits(x, adj_dd, params: ModelParams, training: bool = False, rng=None, dropout: float = 0.0) -> Tensor:
    h = x
    for layer in (1, 2):
        h = _dropout(h, dropout, rng, training)
        h = gcn_sublayer(h, adj_dd, params.sublayer(layer, EdgeType.DD))
        if layer == 1:
            h = nn.relu(h)
    return h


def gcn_baseline_forward(x, adj_dd, params: ModelParams, training: bool = False, rng=None, dropout: float = 0.0) -> Tensor:
    """softmax(Â ReLU(Â X W0) W1) on the document sub-network"""
    return nn.softmax_rows(gcn_baseline_logits(x, adj_dd, params, training, rng, dropout))


# Inputs and checkpoints ---------------------------------------------------------

@dataclass(frozen=True)
class ModelInputs:
    """Everything a forward pass needs besides the parameters"""

    x: Any
    operators: Any
    n_docs: int

    @property
    def d_in(self) -> int:
        return self.x.shape[1]


def build_inputs(cfg: ModelConfig, graph: BiTypedGraph, doc_features: sp.spmatrix) -> ModelInputs:
    from corpus import joint_features

    if cfg.arch == "gcn":
        return ModelInputs(x=sp.csr_matrix(doc_features), operators=normalize(graph, EdgeType.DD), n_docs=graph.n_docs)
    x = joint_features(doc_features, graph.n_words)
    return ModelInputs(x=x, operators=JointOperators.from_graph(graph), n_docs=graph.n_docs)


def forward_logits(cfg: ModelConfig, params: ModelParams, inputs: ModelInputs, training: bool = False, rng=None, trace=None) -> Tensor:
    """Pre-softmax scores; document rows come first, word rows (BiTe only) follow"""
    if cfg.arch == "gcn":
        return gcn_baseline_logits(inputs.x, inputs.operators, params, training, rng, cfg.dropout)
    return bite_logits(inputs.x, inputs.operators, cfg, params, training, rng, trace)


def save_checkpoint(path: str, params: ModelParams, meta: Optional[Dict[str, Any]] = None):
    payload = {"model": params.cfg.to_dict()}
    payload.update(meta or {})
    write_checkpoint(path, params.snapshot(), payload)
    logger.info(f"💾 Saved checkpoint {path}")


def load_checkpoint(path: str) -> Tuple[ModelParams, Dict[str, Any]]:
    arrays, meta = read_checkpoint(path)
    if "model" not in meta:
        raise ShapeError(f"{path}: checkpoint has no model config")
    cfg = ModelConfig.from_dict(meta["model"])
    return ModelParams.from_arrays(cfg, arrays), meta

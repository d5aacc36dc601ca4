#!/usr/bin/env python3
"""
Reverse-Mode Differentiation Core
Dense float64 tensors, a recording tape, the ops the GCN models need, and Adam
"""

import threading
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from errors import NonFiniteError, ShapeError, TapeError, TrainingError

_local = threading.local()
_settings = {"check_finite": True}


def set_check_finite(enabled: bool):
    """Toggle NaN/Inf detection after every forward op (debug vs release profile)"""
    _settings["check_finite"] = bool(enabled)


def check_finite_enabled() -> bool:
    return _settings["check_finite"]


class Tensor:
    """2-D float64 value with an optional gradient"""

    __slots__ = ("values", "requires_grad", "grad", "parents", "backward_fn", "op")

    def __init__(self, values, requires_grad: bool = False, op: str = "leaf"):
        array = np.array(values, dtype=np.float64)
        if array.ndim == 0:
            array = array.reshape(1, 1)
        elif array.ndim == 1:
            array = array.reshape(1, -1)
        elif array.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got shape {array.shape}")
        self.values = array
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.parents: Tuple["Tensor", ...] = ()
        self.backward_fn: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None
        self.op = op

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.values[0, 0])

    def numpy(self) -> np.ndarray:
        return self.values

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"


def _stack() -> List["Tape"]:
    if not hasattr(_local, "tapes"):
        _local.tapes = []
    return _local.tapes


def active_tape() -> Optional["Tape"]:
    stack = _stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of executed ops; confined to the thread that opened it"""

    def __init__(self):
        self.nodes: List[Tensor] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        stack = _stack()
        if stack and stack[-1] is self:
            stack.pop()
        return False

    def record(self, node: Tensor):
        if self.consumed:
            raise TapeError("tape already ran backward; call reset() before recording again")
        self.nodes.append(node)

    def backward(self, loss: Tensor):
        """Populate .grad of every requires_grad tensor reachable from loss"""
        if self.consumed:
            raise TapeError("backward already called on this tape; call reset() first")
        if loss.shape != (1, 1):
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not loss.requires_grad:
            raise TapeError("loss does not depend on any tensor that requires grad")
        self.consumed = True

        for node in self.nodes:
            node.grad = None
        loss.grad = np.ones((1, 1))

        for node in reversed(self.nodes):
            if node.grad is None or node.backward_fn is None:
                continue
            for parent, parent_grad in zip(node.parents, node.backward_fn(node.grad)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = np.array(parent_grad, dtype=np.float64)
                else:
                    parent.grad = parent.grad + parent_grad

    def reset(self):
        self.nodes = []
        self.consumed = False


def backward(loss: Tensor, tape: Optional[Tape] = None):
    tape = tape or active_tape()
    if tape is None:
        raise TapeError("no tape recorded this loss; run the forward pass inside `with Tape():`")
    tape.backward(loss)


def _make(values: np.ndarray, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    if _settings["check_finite"] and not np.all(np.isfinite(values)):
        raise NonFiniteError(f"non-finite values produced by {op}")
    out = Tensor.__new__(Tensor)
    out.values = values
    out.grad = None
    out.op = op
    tape = active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.backward_fn = backward_fn
        tape.record(out)
    else:
        out.requires_grad = False
        out.parents = ()
        out.backward_fn = None
    return out


def _same_shape(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# Linear algebra ----------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ {a.shape} x {b.shape}")
    av, bv = a.values, b.values

    def grad(g):
        return g @ bv.T, av.T @ g

    return _make(av @ bv, (a, b), grad, "matmul")


def _sparse_of(adj) -> sp.csr_matrix:
    matrix = getattr(adj, "matrix", adj)
    if not sp.issparse(matrix):
        raise ShapeError("spmm expects a sparse matrix or NormalizedAdjacency")
    return matrix


def spmm(adj, x: Tensor) -> Tensor:
    """Constant sparse matrix times tensor; ∂L/∂x = Aᵀ g"""
    matrix = _sparse_of(adj)
    if matrix.shape[1] != x.shape[0]:
        raise ShapeError(f"spmm: inner dimensions differ {matrix.shape} x {x.shape}")
    transposed = matrix.T.tocsr()

    def grad(g):
        return (np.asarray(transposed @ g),)

    return _make(np.asarray(matrix @ x.values), (x,), grad, "spmm")


# Elementwise ---------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return _make(a.values + b.values, (a, b), lambda g: (g, g), "add")


def scale(x: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    return _make(x.values * factor, (x,), lambda g: (g * factor,), "scale")


def relu(x: Tensor) -> Tensor:
    mask = x.values > 0
    return _make(np.where(mask, x.values, 0.0), (x,), lambda g: (g * mask,), "relu")


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.values)
    return _make(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def identity(x: Tensor) -> Tensor:
    return x


def softmax_rows(x: Tensor) -> Tensor:
    shifted = x.values - x.values.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    out = exp / exp.sum(axis=1, keepdims=True)

    def grad(g):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return _make(out, (x,), grad, "softmax_rows")


def dropout(x: Tensor, rate: float, rng: Optional[np.random.Generator], training: bool = True) -> Tensor:
    """Inverted dropout; identity when not training or rate is 0"""
    if not training or rate <= 0.0:
        return x
    if rate >= 1.0:
        raise TrainingError(f"dropout rate must be < 1, got {rate}")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _make(x.values * keep, (x,), lambda g: (g * keep,), "dropout")


def sparse_dropout(matrix: sp.spmatrix, rate: float, rng: Optional[np.random.Generator], training: bool = True):
    """Dropout on the stored entries of a constant sparse input"""
    if not training or rate <= 0.0:
        return matrix
    out = sp.csr_matrix(matrix, copy=True)
    keep = (rng.random(out.nnz) >= rate) / (1.0 - rate)
    out.data = out.data * keep
    out.eliminate_zeros()
    return out


# Structural ----------------------------------------------------------------------

def concat_cols(tensors: Sequence[Tensor]) -> Tensor:
    if not tensors:
        raise ShapeError("concat_cols needs at least one tensor")
    rows = tensors[0].shape[0]
    for t in tensors:
        if t.shape[0] != rows:
            raise ShapeError(f"concat_cols: row count mismatch {t.shape[0]} vs {rows}")
    bounds = np.cumsum([0] + [t.shape[1] for t in tensors])

    def grad(g):
        return tuple(g[:, bounds[k]:bounds[k + 1]] for k in range(len(tensors)))

    return _make(np.concatenate([t.values for t in tensors], axis=1), tuple(tensors), grad, "concat_cols")


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    if not 0 <= start < stop <= x.shape[1]:
        raise ShapeError(f"slice_cols: [{start}, {stop}) outside {x.shape[1]} columns")

    def grad(g):
        full = np.zeros(x.shape)
        full[:, start:stop] = g
        return (full,)

    return _make(x.values[:, start:stop].copy(), (x,), grad, "slice_cols")


def mean(tensors: Sequence[Tensor]) -> Tensor:
    """Elementwise average of equally shaped tensors"""
    if not tensors:
        raise ShapeError("mean needs at least one tensor")
    for t in tensors[1:]:
        _same_shape(tensors[0], t, "mean")
    if len(tensors) == 1:
        return tensors[0]
    k = float(len(tensors))
    total = tensors[0].values.copy()
    for t in tensors[1:]:
        total = total + t.values
    return _make(total / k, tuple(tensors), lambda g: tuple(g / k for _ in tensors), "mean")


def scale_rows(x: Tensor, weights: Tensor) -> Tensor:
    """Row i of x multiplied by weights[i, 0]"""
    if weights.shape != (x.shape[0], 1):
        raise ShapeError(f"scale_rows: weights {weights.shape} do not match {x.shape[0]} rows")
    xv, wv = x.values, weights.values

    def grad(g):
        return g * wv, (g * xv).sum(axis=1, keepdims=True)

    return _make(xv * wv, (x, weights), grad, "scale_rows")


def select_rows(mask: np.ndarray, a: Tensor, b: Tensor) -> Tensor:
    """Row i from a where mask[i], else from b"""
    _same_shape(a, b, "select_rows")
    mask = np.asarray(mask, dtype=bool).reshape(-1, 1)
    if mask.shape[0] != a.shape[0]:
        raise ShapeError(f"select_rows: mask length {mask.shape[0]} vs {a.shape[0]} rows")
    return _make(np.where(mask, a.values, b.values), (a, b), lambda g: (g * mask, g * ~mask), "select_rows")


def sum_all(x: Tensor) -> Tensor:
    return _make(np.array([[x.values.sum()]]), (x,), lambda g: (np.full(x.shape, g[0, 0]),), "sum")


# Loss ------------------------------------------------------------------------------

def cross_entropy(z: Tensor, labels: Sequence[int], mask) -> Tensor:
    """Mean of -ln softmax(z)[label] over masked rows (log-sum-exp stabilized)"""
    labels = np.asarray(labels, dtype=np.int64).ravel()
    n, n_classes = z.shape
    if labels.shape[0] != n:
        raise ShapeError(f"cross_entropy: {labels.shape[0]} labels for {n} rows")
    mask = np.asarray(mask)
    rows = np.flatnonzero(mask) if mask.dtype == bool else np.unique(mask.astype(np.int64))
    if rows.size == 0:
        raise TrainingError("cross_entropy: empty label mask")
    picked = labels[rows]
    if np.any(picked < 0) or np.any(picked >= n_classes):
        bad = int(picked[(picked < 0) | (picked >= n_classes)][0])
        raise TrainingError(f"cross_entropy: label {bad} outside [0, {n_classes})")

    logits = z.values[rows]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    loss = -log_probs[np.arange(rows.size), picked].mean()

    def grad(g):
        probs = np.exp(log_probs)
        probs[np.arange(rows.size), picked] -= 1.0
        full = np.zeros(z.shape)
        full[rows] = probs * (g[0, 0] / rows.size)
        return (full,)

    return _make(np.array([[loss]]), (z,), grad, "cross_entropy")


# Optimizer -------------------------------------------------------------------------

@dataclass
class AdamState:
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def zero_grad(params: Mapping[str, Tensor]):
    for tensor in params.values():
        tensor.grad = None


def adam_step(
    params: Mapping[str, Tensor],
    grads: Optional[Mapping[str, np.ndarray]],
    state: AdamState,
    lr: float = 0.01,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
):
    """One bias-corrected Adam update with L2 weight decay folded into the gradient.

    grads defaults to each tensor's .grad; a missing gradient counts as zero.
    """
    state.step += 1
    t = state.step
    for name in sorted(params):
        tensor = params[name]
        g = grads.get(name) if grads is not None else tensor.grad
        g = np.zeros(tensor.shape) if g is None else np.asarray(g, dtype=np.float64)
        if g.shape != tensor.shape:
            raise ShapeError(f"adam_step: gradient for {name} has shape {g.shape}, expected {tensor.shape}")
        if weight_decay:
            g = g + weight_decay * tensor.values

        m = state.m.get(name)
        v = state.v.get(name)
        m = (1 - beta1) * g if m is None else beta1 * m + (1 - beta1) * g
        v = (1 - beta2) * g * g if v is None else beta2 * v + (1 - beta2) * g * g
        state.m[name] = m
        state.v[name] = v

        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        tensor.values = tensor.values - lr * m_hat / (np.sqrt(v_hat) + eps)

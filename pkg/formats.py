#!/usr/bin/env python3
"""
File Formats
Strict parsers and deterministic writers for every artifact the pipeline reads or writes.
The format reference lives in PIPELINE_GUIDE.md.
"""

import io
import json
import logging
import math
import os
import zipfile
from dataclasses import dataclass
from typing import Any, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from corpus import Document, load_stopwords, tokenize
from errors import FormatError

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
# Fixed zip member timestamp so identical checkpoints are byte-identical
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)

NODE_KINDS = ("document", "word")


def _data_lines(path: str) -> Iterator[Tuple[int, str]]:
    """(line number, line) for every non-blank, non-comment line"""
    if not os.path.exists(path):
        raise FormatError("file not found", path=path)
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            yield line_no, line


def _int(value: str, what: str, path: str, line_no: int) -> int:
    try:
        number = int(value)
    except ValueError:
        raise FormatError(f"{what} must be an integer, got {value!r}", path=path, line=line_no)
    if number < 0:
        raise FormatError(f"{what} must be non-negative, got {number}", path=path, line=line_no)
    return number


def _float(value: str, what: str, path: str, line_no: int) -> float:
    try:
        number = float(value)
    except ValueError:
        raise FormatError(f"{what} must be a real number, got {value!r}", path=path, line=line_no)
    if not math.isfinite(number):
        raise FormatError(f"{what} must be finite, got {value!r}", path=path, line=line_no)
    return number


def _write_lines(path: str, lines: Iterable[str], header: Optional[str] = None):
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        if header:
            f.write(f"# {header}\n")
        for line in lines:
            f.write(line + "\n")


# Edge lists ------------------------------------------------------------------

def parse_edge_list(path: str) -> List[Tuple[int, int, float]]:
    """`src<TAB>dst[<TAB>weight]` lines"""
    edges = []
    for line_no, line in _data_lines(path):
        parts = line.split("\t")
        if len(parts) not in (2, 3):
            raise FormatError(f"expected 2 or 3 tab-separated fields, got {len(parts)}", path=path, line=line_no)
        src = _int(parts[0], "source id", path, line_no)
        dst = _int(parts[1], "target id", path, line_no)
        weight = _float(parts[2], "weight", path, line_no) if len(parts) == 3 else 1.0
        if weight <= 0:
            raise FormatError(f"weight must be positive, got {weight}", path=path, line=line_no)
        edges.append((src, dst, weight))
    return edges


def write_edge_list(path: str, edges: Iterable[Tuple[int, int, float]], header: Optional[str] = None):
    def render(edge):
        src, dst, weight = edge
        if weight == 1.0:
            return f"{src}\t{dst}"
        return f"{src}\t{dst}\t{weight!r}"

    _write_lines(path, (render(e) for e in edges), header=header)


# Node manifest ---------------------------------------------------------------

@dataclass(frozen=True)
class ManifestRow:
    index: int
    kind: str
    label: str = ""
    name: str = ""


@dataclass(frozen=True)
class NodeTable:
    documents: Tuple[ManifestRow, ...]
    words: Tuple[ManifestRow, ...]


def parse_manifest(path: str) -> NodeTable:
    """`id<TAB>kind[<TAB>label[<TAB>name]]` lines; ids dense per kind"""
    rows: Dict[str, Dict[int, ManifestRow]] = {kind: {} for kind in NODE_KINDS}
    for line_no, line in _data_lines(path):
        parts = line.split("\t")
        if len(parts) < 2 or len(parts) > 4:
            raise FormatError(f"expected 2 to 4 tab-separated fields, got {len(parts)}", path=path, line=line_no)
        index = _int(parts[0], "node id", path, line_no)
        kind = parts[1].strip().lower()
        if kind not in NODE_KINDS:
            raise FormatError(f"unknown node kind {parts[1]!r}", path=path, line=line_no)
        if index in rows[kind]:
            raise FormatError(f"duplicate {kind} id {index}", path=path, line=line_no)
        label = parts[2] if len(parts) > 2 else ""
        name = parts[3] if len(parts) > 3 else ""
        if kind == "word" and label:
            raise FormatError("word nodes carry no label", path=path, line=line_no)
        rows[kind][index] = ManifestRow(index=index, kind=kind, label=label, name=name)

    for kind, by_index in rows.items():
        if sorted(by_index) != list(range(len(by_index))):
            raise FormatError(f"{kind} ids must be contiguous from 0", path=path)
    return NodeTable(
        documents=tuple(rows["document"][i] for i in range(len(rows["document"]))),
        words=tuple(rows["word"][i] for i in range(len(rows["word"]))),
    )


def write_manifest(path: str, table: NodeTable):
    lines = [f"{row.index}\t{row.kind}\t{row.label}\t{row.name}" for row in table.documents + table.words]
    _write_lines(path, lines, header="id\tkind\tlabel\tname")


# Corpus, citations, labels, vocabulary --------------------------------------

def parse_corpus(path: str) -> List[Document]:
    """`doc_id<TAB>raw text` lines; documents get dense ids in file order"""
    stopwords = load_stopwords()
    documents: List[Document] = []
    seen = set()
    for line_no, line in _data_lines(path):
        if "\t" not in line:
            raise FormatError("expected 'doc_id<TAB>text'", path=path, line=line_no)
        name, text = line.split("\t", 1)
        name = name.strip()
        if not name:
            raise FormatError("empty document id", path=path, line=line_no)
        if name in seen:
            raise FormatError(f"duplicate document id {name!r}", path=path, line=line_no)
        seen.add(name)
        documents.append(Document(doc_id=len(documents), tokens=tokenize(text, stopwords), name=name))
    return documents


def parse_citations(path: str) -> List[Tuple[str, str, int]]:
    """`src<TAB>dst` raw document ids; returns (src, dst, line number)"""
    citations = []
    for line_no, line in _data_lines(path):
        parts = [part.strip() for part in line.split("\t")]
        if len(parts) != 2 or not parts[0] or not parts[1]:
            raise FormatError("expected 'src<TAB>dst'", path=path, line=line_no)
        citations.append((parts[0], parts[1], line_no))
    return citations


def parse_labels(path: str) -> Dict[str, str]:
    """`doc_id<TAB>label` lines"""
    labels: Dict[str, str] = {}
    for line_no, line in _data_lines(path):
        parts = [part.strip() for part in line.split("\t")]
        if len(parts) != 2 or not parts[0] or not parts[1]:
            raise FormatError("expected 'doc_id<TAB>label'", path=path, line=line_no)
        if parts[0] in labels:
            raise FormatError(f"duplicate label for document {parts[0]!r}", path=path, line=line_no)
        labels[parts[0]] = parts[1]
    return labels


def parse_vocabulary(path: str) -> List[str]:
    """One phrase per line, words joined by `_`"""
    names: List[str] = []
    seen = set()
    for line_no, line in _data_lines(path):
        name = line.strip().lower()
        if any(ch.isspace() for ch in name):
            raise FormatError(f"phrase {name!r} contains whitespace", path=path, line=line_no)
        if not all(name.split("_")):
            raise FormatError(f"phrase {name!r} has an empty word", path=path, line=line_no)
        if name in seen:
            raise FormatError(f"duplicate phrase {name!r}", path=path, line=line_no)
        seen.add(name)
        names.append(name)
    return names


def write_vocabulary(path: str, names: Sequence[str]):
    _write_lines(path, names)


# Embeddings ------------------------------------------------------------------

def parse_embeddings(path: str) -> Tuple[List[int], np.ndarray]:
    """`id<TAB>v1 v2 ... vD` lines"""
    ids: List[int] = []
    rows: List[List[float]] = []
    seen = set()
    dim: Optional[int] = None
    for line_no, line in _data_lines(path):
        if "\t" not in line:
            raise FormatError("expected 'id<TAB>v1 v2 ...'", path=path, line=line_no)
        raw_id, raw_vec = line.split("\t", 1)
        node_id = _int(raw_id.strip(), "embedding id", path, line_no)
        if node_id in seen:
            raise FormatError(f"duplicate embedding id {node_id}", path=path, line=line_no)
        values = [_float(v, "embedding value", path, line_no) for v in raw_vec.split()]
        if not values:
            raise FormatError("empty embedding vector", path=path, line=line_no)
        if dim is None:
            dim = len(values)
        elif len(values) != dim:
            raise FormatError(f"dimension {len(values)} does not match {dim}", path=path, line=line_no)
        seen.add(node_id)
        ids.append(node_id)
        rows.append(values)
    matrix = np.asarray(rows, dtype=np.float64).reshape(len(rows), dim or 0)
    return ids, matrix


def write_embeddings(path: str, ids: Sequence[int], matrix: np.ndarray):
    lines = (f"{node_id}\t" + " ".join(repr(float(v)) for v in row) for node_id, row in zip(ids, matrix))
    _write_lines(path, lines)


# Document features -------------------------------------------------------------

def parse_features(path: str, shape: Tuple[int, int]) -> sp.csr_matrix:
    """`row<TAB>col<TAB>value` nonzeros of the document feature matrix"""
    rows, cols, vals = [], [], []
    seen = set()
    for line_no, line in _data_lines(path):
        parts = line.split("\t")
        if len(parts) != 3:
            raise FormatError("expected 'row<TAB>col<TAB>value'", path=path, line=line_no)
        row = _int(parts[0], "row", path, line_no)
        col = _int(parts[1], "column", path, line_no)
        if row >= shape[0] or col >= shape[1]:
            raise FormatError(f"entry ({row}, {col}) outside {shape}", path=path, line=line_no)
        if (row, col) in seen:
            raise FormatError(f"duplicate entry ({row}, {col})", path=path, line=line_no)
        seen.add((row, col))
        rows.append(row)
        cols.append(col)
        vals.append(_float(parts[2], "value", path, line_no))
    matrix = sp.csr_matrix((vals, (rows, cols)), shape=shape, dtype=np.float64)
    matrix.sort_indices()
    return matrix


def write_features(path: str, matrix: sp.spmatrix):
    coo = sp.csr_matrix(matrix)
    coo.sort_indices()
    coo = coo.tocoo()
    lines = (f"{r}\t{c}\t{float(v)!r}" for r, c, v in zip(coo.row, coo.col, coo.data))
    _write_lines(path, lines, header="row\tcol\tvalue")


# Results tables --------------------------------------------------------------

def write_tsv(path: str, header: Sequence[str], rows: Iterable[Sequence[Any]]):
    def cell(value):
        if isinstance(value, float):
            return f"{value:.6f}"
        return str(value)

    lines = ["\t".join(header)] + ["\t".join(cell(v) for v in row) for row in rows]
    _write_lines(path, lines)


def read_tsv(path: str) -> List[Dict[str, str]]:
    """Header + rows as dicts (no comment handling beyond the base rules)"""
    lines = list(_data_lines(path))
    if not lines:
        return []
    header = lines[0][1].split("\t")
    records = []
    for line_no, line in lines[1:]:
        parts = line.split("\t")
        if len(parts) != len(header):
            raise FormatError(f"expected {len(header)} fields, got {len(parts)}", path=path, line=line_no)
        records.append(dict(zip(header, parts)))
    return records


# Checkpoints -------------------------------------------------------------------

def write_checkpoint(path: str, arrays: Dict[str, np.ndarray], meta: Optional[Dict[str, Any]] = None):
    """Named float64 matrices in an .npz-compatible zip with fixed timestamps.

    Members: `__version__.npy` (int64 scalar), `__meta__.npy` (JSON text),
    then one `<name>.npy` per matrix in sorted name order.
    """
    members: List[Tuple[str, np.ndarray]] = [
        ("__version__", np.asarray(CHECKPOINT_VERSION, dtype=np.int64)),
        ("__meta__", np.asarray(json.dumps(meta or {}, sort_keys=True))),
    ]
    for name in sorted(arrays):
        if name.startswith("__"):
            raise FormatError(f"reserved checkpoint name {name!r}", path=path)
        members.append((name, np.ascontiguousarray(arrays[name], dtype=np.float64)))

    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as archive:
        for name, array in members:
            buffer = io.BytesIO()
            np.lib.format.write_array(buffer, array, allow_pickle=False)
            info = zipfile.ZipInfo(f"{name}.npy", date_time=_ZIP_EPOCH)
            info.external_attr = 0o644 << 16
            archive.writestr(info, buffer.getvalue())


def read_checkpoint(path: str) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    if not os.path.exists(path):
        raise FormatError("checkpoint not found", path=path)
    try:
        with np.load(path, allow_pickle=False) as data:
            if "__version__" not in data.files:
                raise FormatError("not a checkpoint (missing version)", path=path)
            version = int(data["__version__"])
            if version != CHECKPOINT_VERSION:
                raise FormatError(f"unsupported checkpoint version {version}", path=path)
            meta = json.loads(str(data["__meta__"]))
            arrays = {name: np.array(data[name]) for name in data.files if not name.startswith("__")}
    except (zipfile.BadZipFile, ValueError, OSError) as e:
        if isinstance(e, FormatError):
            raise
        raise FormatError(f"unreadable checkpoint: {e}", path=path)
    return arrays, meta

#!/usr/bin/env python3
"""
Embedding Tables
Ingested or built-in (TF-IDF, PPMI eigendecomposition) vectors and cosine similarity
"""

import logging
from dataclasses import dataclass
from typing import Dict, Iterable, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh

from corpus import Document, Phrase, PhraseIndex, phrase_count_matrix
from errors import EmbeddingError, FormatError
from formats import parse_embeddings, write_embeddings

logger = logging.getLogger(__name__)

# Above this vocabulary size the PPMI factorization switches to sparse Lanczos
DENSE_EIGH_LIMIT = 2000


@dataclass(frozen=True)
class EmbeddingTable:
    """Immutable id -> vector map; rows of `matrix` follow `ids`"""

    ids: Tuple[int, ...]
    matrix: np.ndarray

    def __post_init__(self):
        matrix = np.array(self.matrix, dtype=np.float64, copy=True)
        if matrix.ndim != 2 or matrix.shape[0] != len(self.ids):
            raise EmbeddingError(f"matrix shape {matrix.shape} does not match {len(self.ids)} ids")
        if matrix.shape[1] < 1:
            raise EmbeddingError("embedding dimension must be positive")
        if not np.all(np.isfinite(matrix)):
            bad = self.ids[int(np.argwhere(~np.isfinite(matrix))[0][0])]
            raise EmbeddingError(f"non-finite value in vector for id {bad}")
        if len(set(self.ids)) != len(self.ids):
            raise EmbeddingError("duplicate ids in embedding table")
        matrix.setflags(write=False)
        object.__setattr__(self, "ids", tuple(int(i) for i in self.ids))
        object.__setattr__(self, "matrix", matrix)
        object.__setattr__(self, "_rows", {node_id: row for row, node_id in enumerate(self.ids)})

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, node_id: int) -> bool:
        return node_id in self._rows

    def vector(self, node_id: int) -> np.ndarray:
        if node_id not in self._rows:
            raise EmbeddingError(f"no embedding for id {node_id}")
        return self.matrix[self._rows[node_id]]

    @property
    def vectors(self) -> Dict[int, np.ndarray]:
        return {node_id: self.matrix[row] for node_id, row in self._rows.items()}

    def rows_for(self, node_ids: Iterable[int]) -> np.ndarray:
        """Stacked vectors for the given ids; errors name the first missing id"""
        node_ids = list(node_ids)
        missing = [i for i in node_ids if i not in self._rows]
        if missing:
            raise EmbeddingError(f"no embedding for id {missing[0]} ({len(missing)} missing)")
        return self.matrix[[self._rows[i] for i in node_ids]]


def load_embeddings(path: str, expected_ids: Optional[Iterable[int]] = None) -> EmbeddingTable:
    """Read an embedding file; with expected_ids the table holds exactly those ids"""
    try:
        ids, matrix = parse_embeddings(path)
    except FormatError as e:
        raise EmbeddingError(str(e))
    table = EmbeddingTable(ids=tuple(ids), matrix=matrix)
    if expected_ids is None:
        return table

    expected = sorted(set(int(i) for i in expected_ids))
    missing = [i for i in expected if i not in table]
    if missing:
        raise EmbeddingError(f"{path}: missing embedding for id {missing[0]} ({len(missing)} missing)")
    logger.info(f"✅ Loaded {len(expected)} embeddings of dim {table.dim} from {path}")
    return EmbeddingTable(ids=tuple(expected), matrix=table.rows_for(expected))


def save_embeddings(path: str, table: EmbeddingTable):
    write_embeddings(path, table.ids, table.matrix)


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """u·v / (|u||v|), defined as 0 when either vector is zero"""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise EmbeddingError(f"dimension mismatch: {u.shape[0]} vs {v.shape[0]}")
    norm = float(np.linalg.norm(u)) * float(np.linalg.norm(v))
    if norm == 0.0:
        return 0.0
    return float(np.clip(np.dot(u, v) / norm, -1.0, 1.0))


def unit_rows(matrix):
    """Rows scaled to unit L2 norm; zero rows stay zero and sparse input stays sparse"""
    if sp.issparse(matrix):
        matrix = sp.csr_matrix(matrix, dtype=np.float64)
        norms = np.sqrt(np.asarray(matrix.multiply(matrix).sum(axis=1)).ravel())
        scale = np.divide(1.0, norms, out=np.zeros_like(norms), where=norms > 0)
        return (sp.diags(scale) @ matrix).tocsr()
    norms = np.linalg.norm(matrix, axis=1)
    scale = np.divide(1.0, norms, out=np.zeros_like(norms), where=norms > 0)
    return matrix * scale[:, None]


def tfidf_doc_embeddings(corpus: Sequence[Document], phrases: Sequence[Phrase]) -> EmbeddingTable:
    """tf·log(N/df) bag-of-phrases rows, L2-normalized"""
    counts = phrase_count_matrix(corpus, phrases)
    n_docs = counts.shape[0]
    if counts.shape[1] == 0:
        return EmbeddingTable(ids=tuple(doc.doc_id for doc in corpus), matrix=np.zeros((n_docs, 1)))
    df = np.asarray((counts > 0).sum(axis=0)).ravel().astype(np.float64)
    idf = np.log(np.divide(n_docs, df, out=np.ones_like(df), where=df > 0))
    weighted = unit_rows(counts @ sp.diags(idf))
    return EmbeddingTable(ids=tuple(doc.doc_id for doc in corpus), matrix=weighted.toarray())


def cooccurrence_counts(corpus: Sequence[Document], phrases: Sequence[Phrase], window: int) -> sp.csr_matrix:
    """Symmetric counts of distinct phrases whose start positions lie within `window` tokens"""
    if window < 1:
        raise EmbeddingError(f"window must be >= 1, got {window}")
    index = PhraseIndex(phrases)
    n = len(phrases)
    rows, cols = [], []
    for doc in corpus:
        occurrences = index.occurrences(doc.tokens)
        for a, (pos_a, phrase_a) in enumerate(occurrences):
            for pos_b, phrase_b in occurrences[a + 1:]:
                if pos_b - pos_a > window:
                    break
                if phrase_a != phrase_b:
                    rows.extend((phrase_a, phrase_b))
                    cols.extend((phrase_b, phrase_a))
    # duplicate coordinates are summed on conversion
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    counts = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n)).tocsr()
    counts.sort_indices()
    return counts


def ppmi(counts) -> sp.csr_matrix:
    """max(log(p(i,j) / (p(i) p(j))), 0), evaluated on positive counts only"""
    counts = sp.csr_matrix(counts, dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        return sp.csr_matrix(counts.shape, dtype=np.float64)
    row = np.asarray(counts.sum(axis=1)).ravel()
    col = np.asarray(counts.sum(axis=0)).ravel()
    cells = counts.tocoo()
    positive = cells.data > 0
    i, j, c = cells.row[positive], cells.col[positive], cells.data[positive]
    values = np.log(c * total / (row[i] * col[j]))
    keep = values > 0
    out = sp.csr_matrix((values[keep], (i[keep], j[keep])), shape=counts.shape)
    out.sort_indices()
    return out


def ppmi_matrix(corpus: Sequence[Document], phrases: Sequence[Phrase], window: int) -> sp.csr_matrix:
    return ppmi(cooccurrence_counts(corpus, phrases, window))


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Make the largest-magnitude entry of every column positive"""
    if vectors.size == 0:
        return vectors
    pivots = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[pivots, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def truncated_eigh(matrix, k: int) -> Tuple[np.ndarray, np.ndarray]:
    """Top-k eigenpairs of a symmetric (dense or sparse) matrix ranked by |eigenvalue|.

    Ties in magnitude keep the larger eigenvalue first. Returns
    (eigenvalues, eigenvectors) with a fixed sign convention.
    """
    n = matrix.shape[0]
    if not 1 <= k <= n:
        raise EmbeddingError(f"k must be in [1, {n}], got {k}")

    if n > DENSE_EIGH_LIMIT and k < n - 1:
        v0 = np.ones(n) / np.sqrt(n)
        values, vectors = eigsh(sp.csr_matrix(matrix, dtype=np.float64), k=k, which="LM", v0=v0)
    else:
        dense = matrix.toarray() if sp.issparse(matrix) else np.asarray(matrix, dtype=np.float64)
        values, vectors = np.linalg.eigh(dense)

    order = np.lexsort((-values, -np.abs(values)))[:k]
    return values[order], _fix_signs(vectors[:, order])


def ppmi_word_embeddings(
    corpus: Sequence[Document], phrases: Sequence[Phrase], window: int = 5, dim: int = 32
) -> EmbeddingTable:
    """Phrase vectors U_k sqrt(|λ_k|) from the PPMI co-occurrence matrix"""
    n = len(phrases)
    if n < 2:
        raise EmbeddingError(f"PPMI embeddings need at least 2 phrases, got {n}")
    if dim > n:
        raise EmbeddingError(f"dim {dim} exceeds vocabulary size {n}")

    matrix = ppmi_matrix(corpus, phrases, window)
    values, vectors = truncated_eigh(matrix, dim)
    embedding = vectors * np.sqrt(np.abs(values))[None, :]
    embedding[matrix.getnnz(axis=1) == 0] = 0.0
    logger.info(f"📊 PPMI embeddings: {n} phrases, dim {dim}, window {window}, {matrix.nnz} nonzeros")
    return EmbeddingTable(ids=tuple(p.phrase_id for p in phrases), matrix=embedding)

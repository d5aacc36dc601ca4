#!/usr/bin/env python3
"""
Data Refinement
Trim low-similarity edges and add high-similarity edges inside one sub-network
"""

import logging
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from embed import EmbeddingTable, unit_rows
from errors import RefineError

logger = logging.getLogger(__name__)

DEFAULT_T_HIGH = 0.95
DEFAULT_T_LOW = 0.5


@dataclass(frozen=True)
class RefineConfig:
    """Similarity thresholds; max_added_per_node None means unbounded, 0 adds nothing"""

    t_high: float = DEFAULT_T_HIGH
    t_low: float = DEFAULT_T_LOW
    max_added_per_node: Optional[int] = None
    block_size: int = 2048

    def __post_init__(self):
        if not 0.0 < self.t_high <= 1.0:
            raise RefineError(f"t_high must be in (0, 1], got {self.t_high}")
        if not 0.0 <= self.t_low < 1.0:
            raise RefineError(f"t_low must be in [0, 1), got {self.t_low}")
        if not self.t_low < self.t_high:
            raise RefineError(f"t_low ({self.t_low}) must be smaller than t_high ({self.t_high})")
        if self.max_added_per_node is not None and self.max_added_per_node < 0:
            raise RefineError("max_added_per_node must be non-negative")
        if self.block_size < 1:
            raise RefineError("block_size must be positive")

    @property
    def cap(self) -> Optional[int]:
        return self.max_added_per_node


def _canonical(edges: Iterable[Tuple]) -> Dict[Tuple[int, int], float]:
    """Undirected (min, max) -> weight, first occurrence wins"""
    out: Dict[Tuple[int, int], float] = {}
    for edge in edges:
        u, v = int(edge[0]), int(edge[1])
        weight = float(edge[2]) if len(edge) > 2 else 1.0
        if u == v:
            continue
        key = (u, v) if u < v else (v, u)
        out.setdefault(key, weight)
    return out


def _high_pairs(unit: np.ndarray, threshold: float, block_size: int) -> List[Tuple[float, int, int]]:
    """Exact blocked scan for pairs i < j with cosine > threshold"""
    found = []
    n = unit.shape[0]
    for start in range(0, n, block_size):
        stop = min(start + block_size, n)
        sims = np.clip(unit[start:stop] @ unit.T, -1.0, 1.0)
        rows, cols = np.nonzero(sims > threshold)
        for r, c in zip(rows, cols):
            i = start + int(r)
            j = int(c)
            if i < j:
                found.append((float(sims[r, c]), i, j))
    return found


def refine_edges(
    edges: Iterable[Tuple],
    table: EmbeddingTable,
    cfg: RefineConfig = RefineConfig(),
    nodes: Optional[Sequence[int]] = None,
) -> List[Tuple[int, int, float]]:
    """Keep edges with cosine >= t_low, add non-edges with cosine > t_high.

    t_low = 0 disables trimming, including edges with negative similarity.

    Candidate additions are taken in descending similarity with (i, j)
    tie-break. With a cap, a node accepts new edges only while fewer than
    `cap` of its edges exceed t_high, so a second pass adds nothing.
    Returns canonical (u, v, weight) triples with u < v, sorted.
    """
    existing = _canonical(edges)
    scope = sorted(set(table.ids) if nodes is None else set(int(n) for n in nodes))
    endpoints = {u for pair in existing for u in pair}
    missing = sorted(endpoints - set(table.ids))
    if missing:
        raise RefineError(f"missing embedding for node {missing[0]} ({len(missing)} missing)")
    scope = sorted(set(scope) | endpoints)

    unit = unit_rows(table.rows_for(scope))
    position = {node: row for row, node in enumerate(scope)}

    kept: Dict[Tuple[int, int], float] = {}
    high_degree: Dict[int, int] = {}
    for (u, v), weight in existing.items():
        sim = float(np.clip(unit[position[u]] @ unit[position[v]], -1.0, 1.0))
        if cfg.t_low > 0 and sim < cfg.t_low:
            continue
        kept[(u, v)] = weight
        if sim > cfg.t_high:
            high_degree[u] = high_degree.get(u, 0) + 1
            high_degree[v] = high_degree.get(v, 0) + 1

    candidates = _high_pairs(unit, cfg.t_high, cfg.block_size)
    candidates.sort(key=lambda item: (-item[0], scope[item[1]], scope[item[2]]))

    cap = cfg.cap
    added = 0
    for _, i, j in candidates:
        u, v = scope[i], scope[j]
        if (u, v) in kept:
            continue
        if cap is not None and (high_degree.get(u, 0) >= cap or high_degree.get(v, 0) >= cap):
            continue
        kept[(u, v)] = 1.0
        high_degree[u] = high_degree.get(u, 0) + 1
        high_degree[v] = high_degree.get(v, 0) + 1
        added += 1

    logger.info(
        f"🔧 Refined {len(existing)} edges -> {len(kept)} "
        f"(+{added} added, -{len(existing) - (len(kept) - added)} trimmed)"
    )
    return [(u, v, w) for (u, v), w in sorted(kept.items())]


@dataclass(frozen=True)
class RefineSummary:
    edge_type: str
    before: int
    after: int
    added: int
    removed: int
    retained: int


def refine_report(
    before: Mapping[str, Iterable[Tuple]], after: Mapping[str, Iterable[Tuple]]
) -> List[RefineSummary]:
    """Added / removed / retained counts per sub-network"""
    if set(before) != set(after):
        raise RefineError("before and after must cover the same sub-networks")
    rows = []
    for name in sorted(before):
        old = set(_canonical(before[name]))
        new = set(_canonical(after[name]))
        rows.append(
            RefineSummary(
                edge_type=name,
                before=len(old),
                after=len(new),
                added=len(new - old),
                removed=len(old - new),
                retained=len(old & new),
            )
        )
    return rows

#!/usr/bin/env python3
"""
Corpus Processing
Tokenization, frequent phrase mining, word network and document-word inclusion edges
"""

import logging
import os
import re
from collections import Counter, defaultdict
from dataclasses import dataclass
from itertools import combinations
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from errors import CorpusError

logger = logging.getLogger(__name__)

STOPWORDS_FILE = os.path.join(os.path.dirname(os.path.abspath(__file__)), "data", "stopwords.txt")
PHRASE_JOINER = "_"

_SPLIT = re.compile(r"[^0-9a-z]+")


@dataclass(frozen=True)
class Document:
    doc_id: int
    tokens: Tuple[str, ...]
    name: str = ""


@dataclass(frozen=True)
class Phrase:
    phrase_id: int
    words: Tuple[str, ...]
    frequency: int = 0

    @property
    def name(self) -> str:
        return PHRASE_JOINER.join(self.words)


_stopwords_cache: Optional[FrozenSet[str]] = None


def load_stopwords(path: str = STOPWORDS_FILE) -> FrozenSet[str]:
    """Read the shipped stopword list (one word per line, # comments)"""
    global _stopwords_cache
    if path == STOPWORDS_FILE and _stopwords_cache is not None:
        return _stopwords_cache
    words = set()
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            word = line.strip().lower()
            if word and not word.startswith("#"):
                words.add(word)
    result = frozenset(words)
    if path == STOPWORDS_FILE:
        _stopwords_cache = result
    return result


def tokenize(text: str, stopwords: Optional[FrozenSet[str]] = None) -> Tuple[str, ...]:
    """Lowercase, split on non-alphanumerics, drop short tokens and stopwords"""
    if stopwords is None:
        stopwords = load_stopwords()
    return tuple(tok for tok in _SPLIT.split(text.lower()) if len(tok) >= 2 and tok not in stopwords)


def make_corpus(texts: Sequence[Tuple[str, str]]) -> List[Document]:
    """Documents from (name, raw text) pairs, ids assigned in input order"""
    stopwords = load_stopwords()
    return [Document(doc_id=i, tokens=tokenize(text, stopwords), name=name) for i, (name, text) in enumerate(texts)]


class PhraseIndex:
    """Exact lookup of phrase token sequences inside documents"""

    def __init__(self, phrases: Sequence[Phrase]):
        self.lookup: Dict[Tuple[str, ...], int] = {}
        for phrase in phrases:
            self.lookup[tuple(phrase.words)] = phrase.phrase_id
        self.lengths = sorted({len(words) for words in self.lookup}, reverse=True)

    def occurrences(self, tokens: Sequence[str]) -> List[Tuple[int, int]]:
        """All (start position, phrase id) occurrences, overlapping ones included"""
        found = []
        n_tokens = len(tokens)
        for start in range(n_tokens):
            for length in self.lengths:
                if start + length > n_tokens:
                    continue
                phrase_id = self.lookup.get(tuple(tokens[start:start + length]))
                if phrase_id is not None:
                    found.append((start, phrase_id))
        return found

    def counts(self, tokens: Sequence[str]) -> Counter:
        return Counter(phrase_id for _, phrase_id in self.occurrences(tokens))


def _ngram_counts(corpus: Sequence[Document], max_n: int) -> Counter:
    counts: Counter = Counter()
    for doc in corpus:
        tokens = doc.tokens
        for n in range(1, max_n + 1):
            for start in range(len(tokens) - n + 1):
                counts[tuple(tokens[start:start + n])] += 1
    return counts


def _greedy_counts(corpus: Sequence[Document], candidates: Iterable[Tuple[str, ...]], max_n: int) -> Counter:
    """Left-to-right longest-match segmentation against a candidate set"""
    candidate_set = set(candidates)
    counts: Counter = Counter()
    for doc in corpus:
        tokens = doc.tokens
        pos = 0
        while pos < len(tokens):
            for n in range(min(max_n, len(tokens) - pos), 0, -1):
                gram = tuple(tokens[pos:pos + n])
                if gram in candidate_set:
                    counts[gram] += 1
                    pos += n
                    break
            else:
                pos += 1
    return counts


class FrequentNgramMiner:
    """Frequent contiguous n-grams with greedy longest-match counting"""

    def __init__(self, max_n: int = 3, min_freq: int = 2):
        if max_n < 1:
            raise CorpusError(f"max_n must be >= 1, got {max_n}")
        if min_freq < 1:
            raise CorpusError(f"min_freq must be >= 1, got {min_freq}")
        self.max_n = max_n
        self.min_freq = min_freq

    def mine(self, corpus: Sequence[Document]) -> List[Phrase]:
        if not corpus:
            raise CorpusError("cannot mine phrases from an empty corpus")

        raw = _ngram_counts(corpus, self.max_n)
        selected = {gram for gram, count in raw.items() if count >= self.min_freq}

        # Dropping a long phrase frees its positions for shorter ones, so iterate to a fixpoint.
        while True:
            counts = _greedy_counts(corpus, selected, self.max_n)
            survivors = {gram for gram in selected if counts[gram] >= self.min_freq}
            if survivors == selected:
                break
            selected = survivors

        ranked = sorted(selected, key=lambda gram: (-counts[gram], PHRASE_JOINER.join(gram)))
        phrases = [Phrase(phrase_id=i, words=gram, frequency=counts[gram]) for i, gram in enumerate(ranked)]
        logger.info(f"🔍 Mined {len(phrases)} phrases (max_n={self.max_n}, min_freq={self.min_freq})")
        return phrases


class FixedVocabularyMiner:
    """Phrase vocabulary supplied up front (e.g. read from an override file) instead of mined"""

    def __init__(self, names: Sequence[str], source: str = "override"):
        self.names = list(names)
        self.source = source

    def mine(self, corpus: Sequence[Document]) -> List[Phrase]:
        names = self.names
        if len(set(names)) != len(names):
            raise CorpusError(f"duplicate phrases in vocabulary from {self.source}")
        index = PhraseIndex([Phrase(i, tuple(name.split(PHRASE_JOINER))) for i, name in enumerate(names)])
        totals: Counter = Counter()
        for doc in corpus:
            totals.update(index.counts(doc.tokens))
        phrases = [
            Phrase(phrase_id=i, words=tuple(name.split(PHRASE_JOINER)), frequency=totals[i])
            for i, name in enumerate(names)
        ]
        logger.info(f"📋 Using {len(phrases)} phrases from {self.source}")
        return phrases


def mine_phrases(corpus: Sequence[Document], max_n: int = 3, min_freq: int = 2) -> List[Phrase]:
    return FrequentNgramMiner(max_n=max_n, min_freq=min_freq).mine(corpus)


def build_word_network(phrases: Sequence[Phrase]) -> List[Tuple[int, int]]:
    """Edges between phrases sharing at least one constituent word"""
    postings: Dict[str, List[int]] = defaultdict(list)
    for phrase in phrases:
        for word in set(phrase.words):
            postings[word].append(phrase.phrase_id)

    edges = set()
    for ids in postings.values():
        for a, b in combinations(sorted(set(ids)), 2):
            edges.add((a, b))
    return sorted(edges)


def build_inclusion_edges(corpus: Sequence[Document], phrases: Sequence[Phrase]) -> List[Tuple[int, int]]:
    """(document, phrase) pairs where the phrase occurs contiguously in the document"""
    index = PhraseIndex(phrases)
    edges = set()
    for doc in corpus:
        for _, phrase_id in index.occurrences(doc.tokens):
            edges.add((doc.doc_id, phrase_id))
    return sorted(edges)


def phrase_count_matrix(corpus: Sequence[Document], phrases: Sequence[Phrase]) -> sp.csr_matrix:
    """Raw occurrence counts, one row per document and one column per phrase"""
    index = PhraseIndex(phrases)
    rows, cols, vals = [], [], []
    for doc in corpus:
        for phrase_id, count in sorted(index.counts(doc.tokens).items()):
            rows.append(doc.doc_id)
            cols.append(phrase_id)
            vals.append(float(count))
    matrix = sp.csr_matrix((vals, (rows, cols)), shape=(len(corpus), len(phrases)), dtype=np.float64)
    matrix.sort_indices()
    return matrix


def bag_of_words_features(corpus: Sequence[Document], phrases: Sequence[Phrase]) -> sp.csr_matrix:
    """Document features: phrase counts, each nonzero row scaled to unit L1 norm"""
    if not phrases:
        raise CorpusError("phrase vocabulary is empty")
    counts = phrase_count_matrix(corpus, phrases)
    row_sums = np.asarray(counts.sum(axis=1)).ravel()
    scale = np.divide(1.0, row_sums, out=np.zeros_like(row_sums), where=row_sums > 0)
    features = (sp.diags(scale) @ counts).tocsr()
    features.sort_indices()
    return features


def joint_features(doc_features: sp.spmatrix, n_words: int) -> sp.csr_matrix:
    """Stack document rows over one-hot word rows (word i -> column i)"""
    n_cols = doc_features.shape[1]
    if n_words != n_cols:
        raise CorpusError(f"word count {n_words} does not match feature width {n_cols}")
    joint = sp.vstack([sp.csr_matrix(doc_features), sp.identity(n_words, format="csr")], format="csr")
    joint.sort_indices()
    return joint

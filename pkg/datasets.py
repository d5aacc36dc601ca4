#!/usr/bin/env python3
"""
Datasets
Prepared bundles, the planted synthetic dataset and the dataset registry
"""

import json
import logging
import os
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import requests
import scipy.sparse as sp

from corpus import (
    Document,
    FixedVocabularyMiner,
    FrequentNgramMiner,
    Phrase,
    bag_of_words_features,
    build_inclusion_edges,
    build_word_network,
    make_corpus,
)
from embed import EmbeddingTable, ppmi_word_embeddings, tfidf_doc_embeddings
from errors import DatasetError, FetchError, FormatError
from formats import (
    ManifestRow,
    NodeTable,
    parse_citations,
    parse_corpus,
    parse_edge_list,
    parse_features,
    parse_labels,
    parse_manifest,
    parse_vocabulary,
    write_edge_list,
    write_features,
    write_manifest,
    write_tsv,
    write_vocabulary,
)
from graph import BiTypedGraph, EdgeType, build_graph, degree_stats, replace_edges
from refine import RefineConfig, RefineSummary, refine_edges, refine_report

logger = logging.getLogger(__name__)

MANIFEST = "manifest.tsv"
CORPUS = "corpus.tsv"
FEATURES = "features.tsv"
VOCABULARY = "vocabulary.txt"
EDGE_FILES = {EdgeType.DD: "dd.edges", EdgeType.WW: "ww.edges", EdgeType.DW: "dw.edges"}
REFINED_FILES = {EdgeType.DD: "dd.refined.edges", EdgeType.WW: "ww.refined.edges"}
REFINE_REPORT = "refine_report.tsv"

DEFAULT_REGISTRY = os.path.join(os.path.dirname(os.path.abspath(__file__)), "datasets.json")


@dataclass(frozen=True)
class Dataset:
    """A prepared bi-typed network with labels; labels hold -1 for unlabeled documents"""

    graph: BiTypedGraph
    doc_features: sp.csr_matrix
    labels: np.ndarray
    class_names: Tuple[str, ...]
    doc_names: Tuple[str, ...]
    phrases: Tuple[Phrase, ...]
    corpus: Tuple[Document, ...] = ()
    refined_graph: Optional[BiTypedGraph] = None

    @property
    def n_docs(self) -> int:
        return self.graph.n_docs

    @property
    def n_words(self) -> int:
        return self.graph.n_words

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def graph_for(self, variant) -> BiTypedGraph:
        """Raw graph, or the refined one for variants that use data refinement"""
        if not getattr(variant, "refined", False):
            return self.graph
        if self.refined_graph is None:
            raise DatasetError(f"variant {variant.value} needs refined edges; run refine first")
        return self.refined_graph

    def joint_features(self) -> sp.csr_matrix:
        from corpus import joint_features

        return joint_features(self.doc_features, self.n_words)


# Preparation ---------------------------------------------------------------------

def prepare_dataset(
    corpus: Sequence[Document],
    citations: Sequence[Tuple],
    labels: Dict[str, str],
    miner=None,
    citations_path: Optional[str] = None,
) -> Dataset:
    """Mine phrases, build the three edge sets and bag-of-phrase features.

    citations are (src name, dst name) or (src, dst, line) tuples naming
    documents; labels map document names to class names.
    """
    if not corpus:
        raise DatasetError("corpus is empty")
    miner = miner or FrequentNgramMiner()
    phrases = miner.mine(corpus)
    if not phrases:
        raise DatasetError("phrase vocabulary is empty; lower corpus.min_freq or supply a vocabulary")

    index = {doc.name: doc.doc_id for doc in corpus}
    dd = []
    for citation in citations:
        src, dst = citation[0], citation[1]
        for name in (src, dst):
            if name not in index:
                line = citation[2] if len(citation) > 2 else None
                if citations_path is not None:
                    raise FormatError(f"unknown document id {name!r}", path=citations_path, line=line)
                raise DatasetError(f"citation names unknown document {name!r}")
        dd.append((index[src], index[dst]))

    unknown = sorted(set(labels) - set(index))
    if unknown:
        raise DatasetError(f"label for unknown document {unknown[0]!r}")
    class_names = tuple(sorted(set(labels.values())))
    class_index = {name: i for i, name in enumerate(class_names)}
    label_array = np.array([class_index.get(labels.get(doc.name), -1) for doc in corpus], dtype=np.int64)

    graph = build_graph(
        dd,
        build_word_network(phrases),
        build_inclusion_edges(corpus, phrases),
        n_docs=len(corpus),
        n_words=len(phrases),
    )
    return Dataset(
        graph=graph,
        doc_features=bag_of_words_features(corpus, phrases),
        labels=label_array,
        class_names=class_names,
        doc_names=tuple(doc.name for doc in corpus),
        phrases=tuple(phrases),
        corpus=tuple(corpus),
    )


def prepare_from_files(
    corpus_path: str,
    citations_path: str,
    labels_path: str,
    vocabulary_path: Optional[str] = None,
    max_n: int = 3,
    min_freq: int = 2,
) -> Dataset:
    corpus = parse_corpus(corpus_path)
    if vocabulary_path:
        miner = FixedVocabularyMiner(parse_vocabulary(vocabulary_path), source=vocabulary_path)
    else:
        miner = FrequentNgramMiner(max_n=max_n, min_freq=min_freq)
    return prepare_dataset(corpus, parse_citations(citations_path), parse_labels(labels_path), miner, citations_path)


# Bundles -------------------------------------------------------------------------

def save_bundle(dataset: Dataset, out_dir: str):
    """Write manifest, corpus tokens, edge lists, features and vocabulary"""
    os.makedirs(out_dir, exist_ok=True)
    documents = tuple(
        ManifestRow(
            index=i,
            kind="document",
            label=dataset.class_names[label] if label >= 0 else "",
            name=dataset.doc_names[i],
        )
        for i, label in enumerate(dataset.labels)
    )
    words = tuple(ManifestRow(index=p.phrase_id, kind="word", name=p.name) for p in dataset.phrases)
    write_manifest(os.path.join(out_dir, MANIFEST), NodeTable(documents=documents, words=words))

    with open(os.path.join(out_dir, CORPUS), "w", encoding="utf-8", newline="\n") as f:
        for doc in dataset.corpus:
            f.write(f"{doc.name}\t{' '.join(doc.tokens)}\n")

    for t, name in EDGE_FILES.items():
        write_edge_list(os.path.join(out_dir, name), dataset.graph.pairs(t), header="src\tdst[\tweight]")
    write_features(os.path.join(out_dir, FEATURES), dataset.doc_features)
    write_vocabulary(os.path.join(out_dir, VOCABULARY), [p.name for p in dataset.phrases])
    if dataset.refined_graph is not None:
        save_refined(dataset, out_dir)
    logger.info(f"✅ Wrote bundle {out_dir}")


def save_refined(dataset: Dataset, out_dir: str, report: Optional[Sequence[RefineSummary]] = None):
    for t, name in REFINED_FILES.items():
        write_edge_list(os.path.join(out_dir, name), dataset.refined_graph.pairs(t), header="src\tdst[\tweight]")
    if report is not None:
        write_tsv(
            os.path.join(out_dir, REFINE_REPORT),
            ("edge_type", "before", "after", "added", "removed", "retained"),
            [(r.edge_type, r.before, r.after, r.added, r.removed, r.retained) for r in report],
        )


def has_refined(bundle_dir: str) -> bool:
    return all(os.path.exists(os.path.join(bundle_dir, name)) for name in REFINED_FILES.values())


def load_bundle(bundle_dir: str, refined: Optional[bool] = None) -> Dataset:
    """Read a prepared bundle.

    refined=True requires the refined edge lists, False ignores them and
    None loads them when present.
    """
    if not os.path.isdir(bundle_dir):
        raise DatasetError(f"bundle directory {bundle_dir} not found")
    table = parse_manifest(os.path.join(bundle_dir, MANIFEST))
    n_docs, n_words = len(table.documents), len(table.words)
    edges = {t: parse_edge_list(os.path.join(bundle_dir, name)) for t, name in EDGE_FILES.items()}
    graph = build_graph(edges[EdgeType.DD], edges[EdgeType.WW], edges[EdgeType.DW], n_docs=n_docs, n_words=n_words)

    vocabulary = parse_vocabulary(os.path.join(bundle_dir, VOCABULARY))
    if len(vocabulary) != n_words:
        raise DatasetError(f"{bundle_dir}: vocabulary has {len(vocabulary)} phrases, manifest {n_words} words")
    phrases = tuple(Phrase(phrase_id=i, words=tuple(name.split("_"))) for i, name in enumerate(vocabulary))

    corpus: Tuple[Document, ...] = ()
    corpus_path = os.path.join(bundle_dir, CORPUS)
    if os.path.exists(corpus_path):
        corpus = tuple(parse_corpus(corpus_path))
        if len(corpus) != n_docs:
            raise DatasetError(f"{bundle_dir}: corpus has {len(corpus)} documents, manifest {n_docs}")

    class_names = tuple(sorted({row.label for row in table.documents if row.label}))
    class_index = {name: i for i, name in enumerate(class_names)}
    labels = np.array([class_index.get(row.label, -1) for row in table.documents], dtype=np.int64)

    refined_graph = None
    if refined is True and not has_refined(bundle_dir):
        raise DatasetError(f"{bundle_dir}: refined edge lists missing; run refine first")
    if refined is not False and has_refined(bundle_dir):
        replacements = {t: parse_edge_list(os.path.join(bundle_dir, name)) for t, name in REFINED_FILES.items()}
        refined_graph = replace_edges(graph, replacements)

    return Dataset(
        graph=graph,
        doc_features=parse_features(os.path.join(bundle_dir, FEATURES), (n_docs, n_words)),
        labels=labels,
        class_names=class_names,
        doc_names=tuple(row.name for row in table.documents),
        phrases=phrases,
        corpus=corpus,
        refined_graph=refined_graph,
    )


# Refinement ----------------------------------------------------------------------

def builtin_embeddings(dataset: Dataset, window: int = 5, dim: int = 32) -> Tuple[EmbeddingTable, EmbeddingTable]:
    """TF-IDF document vectors and PPMI phrase vectors computed from the bundle corpus"""
    if not dataset.corpus:
        raise DatasetError("bundle has no corpus tokens; supply document and word embeddings")
    doc_table = tfidf_doc_embeddings(dataset.corpus, dataset.phrases)
    word_table = ppmi_word_embeddings(dataset.corpus, dataset.phrases, window=window, dim=min(dim, len(dataset.phrases)))
    return doc_table, word_table


def refine_dataset(
    dataset: Dataset,
    cfg: RefineConfig,
    doc_table: Optional[EmbeddingTable] = None,
    word_table: Optional[EmbeddingTable] = None,
) -> Tuple[Dataset, List[RefineSummary]]:
    """Refine the DD and/or WW sub-networks from the raw edges; DW inclusion edges are never touched.

    A sub-network without a table keeps its current refined edges, or the raw ones
    when the dataset has none. The report covers only the refined sub-networks.
    """
    tables = {EdgeType.DD: (doc_table, dataset.n_docs), EdgeType.WW: (word_table, dataset.n_words)}
    chosen = [t for t, (table, _) in tables.items() if table is not None]
    if not chosen:
        raise DatasetError("refinement needs a document or a word embedding table")

    before = {t.value: dataset.graph.pairs(t) for t in chosen}
    after = {}
    for t in chosen:
        table, n_nodes = tables[t]
        after[t.value] = refine_edges(before[t.value], table, cfg, nodes=range(n_nodes))
    base = dataset.refined_graph if dataset.refined_graph is not None else dataset.graph
    refined_graph = replace_edges(base, {EdgeType(name): edges for name, edges in after.items()})
    return replace(dataset, refined_graph=refined_graph), refine_report(before, after)


# Planted synthetic dataset ---------------------------------------------------------

@dataclass(frozen=True)
class PlantedDataset:
    """Raw files for a dataset whose labels are fixed by class-specific phrases"""

    texts: Tuple[Tuple[str, str], ...]
    vocabulary: Tuple[str, ...]
    citations: Tuple[Tuple[str, str], ...]
    labels: Dict[str, str] = field(default_factory=dict)

    def write(self, out_dir: str):
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "corpus.tsv"), "w", encoding="utf-8", newline="\n") as f:
            for name, text in self.texts:
                f.write(f"{name}\t{text}\n")
        with open(os.path.join(out_dir, "citations.tsv"), "w", encoding="utf-8", newline="\n") as f:
            for src, dst in self.citations:
                f.write(f"{src}\t{dst}\n")
        with open(os.path.join(out_dir, "labels.tsv"), "w", encoding="utf-8", newline="\n") as f:
            for name, _ in self.texts:
                f.write(f"{name}\t{self.labels[name]}\n")
        write_vocabulary(os.path.join(out_dir, "vocabulary.txt"), self.vocabulary)
        logger.info(f"✅ Wrote planted dataset ({len(self.texts)} documents) to {out_dir}")

    def to_dataset(self) -> Dataset:
        return prepare_dataset(
            make_corpus(self.texts),
            self.citations,
            self.labels,
            FixedVocabularyMiner(self.vocabulary, source="planted vocabulary"),
        )


def make_planted_dataset(
    n_docs: int = 400,
    n_classes: int = 4,
    cross_class_noise: float = 0.5,
    seed: int = 0,
    phrases_per_class: int = 200,
    phrases_per_doc: int = 2,
    noise_words: int = 200,
    noise_per_doc: int = 8,
    citations_per_doc: int = 2,
) -> PlantedDataset:
    """Documents of class k hold phrases `ck ckwj`; every class pool shares its class word.

    Citation partners come from another class with probability
    cross_class_noise, so the citation graph alone is a weak signal.
    """
    if n_classes < 2 or n_docs < n_classes:
        raise DatasetError("need at least two classes and one document per class")
    if not 0.0 <= cross_class_noise <= 1.0:
        raise DatasetError(f"cross_class_noise must be in [0, 1], got {cross_class_noise}")
    rng = np.random.default_rng(seed)

    pools = [[f"c{k} c{k}w{j}" for j in range(phrases_per_class)] for k in range(n_classes)]
    vocabulary = tuple(phrase.replace(" ", "_") for pool in pools for phrase in pool)
    names = [f"doc{i:04d}" for i in range(n_docs)]
    classes = np.arange(n_docs) % n_classes
    rng.shuffle(classes)

    texts = []
    for i in range(n_docs):
        pool = pools[classes[i]]
        units = [pool[j] for j in rng.choice(len(pool), size=phrases_per_doc, replace=False)]
        units += [f"n{j}" for j in rng.integers(0, noise_words, size=noise_per_doc)]
        order = rng.permutation(len(units))
        texts.append((names[i], " ".join(units[j] for j in order)))

    members = [np.flatnonzero(classes == k) for k in range(n_classes)]
    citations = []
    for i in range(n_docs):
        for _ in range(citations_per_doc):
            if rng.random() < cross_class_noise:
                k = rng.choice([c for c in range(n_classes) if c != classes[i]])
            else:
                k = classes[i]
            j = int(rng.choice(members[k]))
            if j != i:
                citations.append((names[i], names[j]))

    labels = {names[i]: f"class{classes[i]}" for i in range(n_docs)}
    return PlantedDataset(texts=tuple(texts), vocabulary=vocabulary, citations=tuple(citations), labels=labels)


# Registry ------------------------------------------------------------------------

@dataclass(frozen=True)
class RegistryEntry:
    name: str
    description: str
    documents: int
    edges: int
    classes: int
    reference: Dict[str, float]
    homepage: str = ""
    files: Dict[str, str] = field(default_factory=dict)


class DatasetRegistry:
    """Known datasets with their published statistics and download locations"""

    def __init__(self, registry_file: str = DEFAULT_REGISTRY):
        self.registry_file = registry_file
        self.entries: Dict[str, RegistryEntry] = {}
        self.settings: Dict[str, object] = {}
        self.default_name: Optional[str] = None
        self.load_registry()

    def load_registry(self):
        if not os.path.exists(self.registry_file):
            raise DatasetError(f"dataset registry {self.registry_file} not found")
        try:
            with open(self.registry_file, "r", encoding="utf-8") as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            raise DatasetError(f"{self.registry_file}: invalid JSON ({e})")
        self.settings = data.get("settings", {})
        self.default_name = data.get("default_dataset")
        for name, entry in data.get("datasets", {}).items():
            self.entries[name] = RegistryEntry(
                name=name,
                description=entry.get("description", ""),
                documents=int(entry["documents"]),
                edges=int(entry["edges"]),
                classes=int(entry["classes"]),
                reference={k: float(v) for k, v in entry.get("reference", {}).items()},
                homepage=entry.get("homepage", ""),
                files=dict(entry.get("files", {})),
            )
        logger.debug(f"Loaded {len(self.entries)} registry entries from {self.registry_file}")

    def get(self, name: str) -> RegistryEntry:
        if name not in self.entries:
            raise DatasetError(f"unknown dataset {name!r} (known: {', '.join(sorted(self.entries))})")
        return self.entries[name]

    def resolve(self, name: Optional[str]) -> RegistryEntry:
        """Entry for name, or for the registry's default_dataset when name is None"""
        if name is None:
            if self.default_name is None:
                raise DatasetError(f"no dataset named and {self.registry_file} sets no default_dataset")
            name = self.default_name
        return self.get(name)

    def list_datasets(self) -> List[RegistryEntry]:
        return [self.entries[name] for name in sorted(self.entries)]

    def check_bundle(self, name: Optional[str], dataset: Dataset) -> List[Tuple[str, int, int]]:
        """(field, expected, actual) rows that differ from the registry statistics"""
        entry = self.resolve(name)
        actual = {
            "documents": dataset.n_docs,
            "edges": dataset.graph.count(EdgeType.DD),
            "classes": dataset.n_classes,
        }
        expected = {"documents": entry.documents, "edges": entry.edges, "classes": entry.classes}
        return [(key, expected[key], actual[key]) for key in expected if expected[key] != actual[key]]

    def fetch_dataset(self, name: Optional[str], out_dir: str, timeout: Optional[float] = None) -> List[str]:
        """Download every raw file the entry lists; returns the written paths"""
        entry = self.resolve(name)
        name = entry.name
        if not entry.files:
            raise FetchError(f"no download URLs configured for {name}; place the raw files manually (see {entry.homepage or 'the registry'})")
        timeout = timeout or float(self.settings.get("timeout", 30))
        os.makedirs(out_dir, exist_ok=True)
        written = []
        for filename, url in sorted(entry.files.items()):
            logger.info(f"🌐 Downloading {filename} for {name}")
            try:
                response = requests.get(url, timeout=timeout, headers={"User-Agent": "bite-gcn/1.0"})
            except requests.exceptions.Timeout:
                raise FetchError(f"timeout fetching {url}")
            except requests.exceptions.RequestException as e:
                raise FetchError(f"error fetching {url}: {e}")
            if response.status_code == 200:
                path = os.path.join(out_dir, filename)
                with open(path, "wb") as f:
                    f.write(response.content)
                written.append(path)
            elif response.status_code == 404:
                raise FetchError(f"{url} not found (404)")
            else:
                raise FetchError(f"{url} returned status {response.status_code}")
        logger.info(f"✅ Fetched {len(written)} files for {name} into {out_dir}")
        return written


def bundle_stats(dataset: Dataset) -> List[Tuple[str, int, int, int, int, float, int]]:
    """(edge type, nodes, edges, min, max, mean degree, isolated) rows"""
    rows = []
    for t, summary in degree_stats(dataset.graph).items():
        rows.append(
            (t.value, summary.nodes, summary.edges, summary.min_degree, summary.max_degree, summary.mean_degree, summary.isolated)
        )
    return rows

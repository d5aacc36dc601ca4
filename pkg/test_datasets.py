#!/usr/bin/env python3
"""
Dataset tests
Bundles on disk, in-memory refinement, the planted dataset and the registry
"""

import json
import os

import numpy as np
import numpy.testing as npt
import pytest
import requests

import datasets
from datasets import (
    DatasetRegistry,
    builtin_embeddings,
    has_refined,
    load_bundle,
    make_planted_dataset,
    prepare_from_files,
    refine_dataset,
    save_bundle,
    save_refined,
)
from errors import DatasetError, FetchError, FormatError
from graph import EdgeType
from refine import RefineConfig


def test_toy_dataset_shape(toy_dataset):
    assert toy_dataset.n_docs == 30
    assert toy_dataset.class_names == ("graphs", "markets", "proteins")
    assert np.all(toy_dataset.labels >= 0)
    assert toy_dataset.graph.count(EdgeType.DW) > 0
    assert toy_dataset.joint_features().shape == (30 + toy_dataset.n_words, toy_dataset.n_words)


def test_bundle_round_trip(toy_dataset, tmp_path):
    bundle = str(tmp_path / "bundle")
    save_bundle(toy_dataset, bundle)
    loaded = load_bundle(bundle)

    assert loaded.graph == toy_dataset.graph
    npt.assert_array_equal(loaded.labels, toy_dataset.labels)
    npt.assert_array_equal(loaded.doc_features.toarray(), toy_dataset.doc_features.toarray())
    assert loaded.class_names == toy_dataset.class_names
    assert loaded.doc_names == toy_dataset.doc_names
    assert [p.name for p in loaded.phrases] == [p.name for p in toy_dataset.phrases]
    assert [d.tokens for d in loaded.corpus] == [d.tokens for d in toy_dataset.corpus]
    assert loaded.refined_graph is None


def test_refined_edges_are_saved_and_loaded(toy_dataset, tmp_path):
    bundle = str(tmp_path / "bundle")
    save_bundle(toy_dataset, bundle)
    with pytest.raises(DatasetError, match="refine"):
        load_bundle(bundle, refined=True)

    doc_table, word_table = builtin_embeddings(toy_dataset, window=5, dim=8)
    refined, report = refine_dataset(toy_dataset, RefineConfig(), doc_table, word_table)
    assert refined.refined_graph.pairs(EdgeType.DW) == toy_dataset.graph.pairs(EdgeType.DW)
    assert [row.edge_type for row in report] == ["dd", "ww"]

    save_refined(refined, bundle, report)
    assert has_refined(bundle)
    assert os.path.exists(os.path.join(bundle, datasets.REFINE_REPORT))
    loaded = load_bundle(bundle, refined=True)
    for t in (EdgeType.DD, EdgeType.WW):
        assert loaded.refined_graph.pairs(t) == refined.refined_graph.pairs(t)
    assert load_bundle(bundle, refined=False).refined_graph is None


def test_refine_one_sub_network_keeps_the_other(toy_dataset):
    doc_table, word_table = builtin_embeddings(toy_dataset, window=5, dim=8)
    refined, report = refine_dataset(toy_dataset, RefineConfig(t_high=0.5, t_low=0.1), word_table=word_table)
    assert [row.edge_type for row in report] == ["ww"]
    assert refined.refined_graph.pairs(EdgeType.DD) == toy_dataset.graph.pairs(EdgeType.DD)

    both, _ = refine_dataset(toy_dataset, RefineConfig(t_high=0.5, t_low=0.1), doc_table, word_table)
    again, report = refine_dataset(both, RefineConfig(), doc_table=doc_table)
    assert [row.edge_type for row in report] == ["dd"]
    assert again.refined_graph.pairs(EdgeType.WW) == both.refined_graph.pairs(EdgeType.WW)

    with pytest.raises(DatasetError):
        refine_dataset(toy_dataset, RefineConfig())


def test_graph_for_refined_variant_needs_refined_edges(toy_dataset):
    from model import Variant

    assert toy_dataset.graph_for(Variant.A) is toy_dataset.graph
    with pytest.raises(DatasetError):
        toy_dataset.graph_for(Variant.RA)


def test_missing_bundle_raises(tmp_path):
    with pytest.raises(DatasetError):
        load_bundle(str(tmp_path / "nowhere"))


def test_unknown_cited_document_reports_line(toy_paths, tmp_path):
    citations = tmp_path / "citations.tsv"
    citations.write_text("g02\tg01\ng03\tzz99\n", encoding="utf-8")
    with pytest.raises(FormatError) as info:
        prepare_from_files(toy_paths["corpus"], str(citations), toy_paths["labels"])
    assert info.value.line == 2


def test_planted_dataset_is_deterministic():
    first = make_planted_dataset(n_docs=40, n_classes=4, seed=1)
    assert first == make_planted_dataset(n_docs=40, n_classes=4, seed=1)
    assert first != make_planted_dataset(n_docs=40, n_classes=4, seed=2)
    assert len(first.vocabulary) == 4 * 200
    counts = {}
    for label in first.labels.values():
        counts[label] = counts.get(label, 0) + 1
    assert counts == {"class0": 10, "class1": 10, "class2": 10, "class3": 10}


def test_planted_phrases_carry_the_label():
    planted = make_planted_dataset(n_docs=40, n_classes=4, seed=3)
    dataset = planted.to_dataset()
    assert dataset.n_words == 800
    words = dict(zip(range(dataset.n_words), dataset.phrases))
    for d, w, _ in dataset.graph.pairs(EdgeType.DW):
        klass = dataset.class_names[dataset.labels[d]]
        assert words[w].words[0] == "c" + klass[len("class"):]


def test_planted_files_prepare_to_the_same_graph(tmp_path):
    planted = make_planted_dataset(n_docs=40, n_classes=4, seed=5)
    out = str(tmp_path / "planted")
    planted.write(out)
    from_files = prepare_from_files(
        os.path.join(out, "corpus.tsv"),
        os.path.join(out, "citations.tsv"),
        os.path.join(out, "labels.tsv"),
        vocabulary_path=os.path.join(out, "vocabulary.txt"),
    )
    assert from_files.graph == planted.to_dataset().graph


def test_planted_dataset_rejects_bad_parameters():
    with pytest.raises(DatasetError):
        make_planted_dataset(n_docs=10, n_classes=1)
    with pytest.raises(DatasetError):
        make_planted_dataset(cross_class_noise=1.5)


def test_registry_lists_and_checks(toy_dataset):
    registry = DatasetRegistry()
    assert [e.name for e in registry.list_datasets()] == ["cora-enrich", "dblp-five", "hep-large", "hep-small"]
    assert registry.get("cora-enrich").documents == 2708
    assert registry.get("hep-small").reference["ra"] == pytest.approx(0.6667)
    fields = [row[0] for row in registry.check_bundle("hep-small", toy_dataset)]
    assert fields == ["documents", "edges"]
    with pytest.raises(DatasetError):
        registry.get("imagenet")


class FakeResponse:
    def __init__(self, status_code, content=b""):
        self.status_code = status_code
        self.content = content


@pytest.fixture
def fetch_registry(tmp_path):
    path = tmp_path / "registry.json"
    entry = {"documents": 1, "edges": 0, "classes": 1, "files": {"corpus.tsv": "https://example.org/corpus.tsv"}}
    path.write_text(json.dumps({"datasets": {"tiny": entry, "bare": dict(entry, files={})}, "settings": {"timeout": 7}}))
    return DatasetRegistry(str(path))


def test_fetch_writes_downloaded_files(fetch_registry, tmp_path, monkeypatch):
    calls = []

    def fake_get(url, timeout=None, headers=None):
        calls.append((url, timeout))
        return FakeResponse(200, b"d1\tsome text\n")

    monkeypatch.setattr(datasets.requests, "get", fake_get)
    written = fetch_registry.fetch_dataset("tiny", str(tmp_path / "raw"))
    assert calls == [("https://example.org/corpus.tsv", 7.0)]
    with open(written[0], "rb") as f:
        assert f.read() == b"d1\tsome text\n"


def test_registry_falls_back_to_default_dataset(fetch_registry, toy_dataset):
    registry = DatasetRegistry()
    assert registry.resolve(None).name == "cora-enrich"
    assert registry.check_bundle(None, toy_dataset) == registry.check_bundle("cora-enrich", toy_dataset)
    with pytest.raises(DatasetError):
        fetch_registry.resolve(None)


def test_fetch_without_a_name_uses_default_dataset(tmp_path, monkeypatch):
    path = tmp_path / "registry.json"
    entry = {"documents": 1, "edges": 0, "classes": 1, "files": {"corpus.tsv": "https://example.org/corpus.tsv"}}
    path.write_text(json.dumps({"default_dataset": "tiny", "datasets": {"tiny": entry}}))
    monkeypatch.setattr(datasets.requests, "get", lambda url, timeout=None, headers=None: FakeResponse(200, b"x"))
    written = DatasetRegistry(str(path)).fetch_dataset(None, str(tmp_path / "raw"))
    assert [os.path.basename(p) for p in written] == ["corpus.tsv"]


@pytest.mark.parametrize("outcome", [FakeResponse(404), FakeResponse(500), requests.exceptions.Timeout()])
def test_fetch_failures_raise(fetch_registry, tmp_path, monkeypatch, outcome):
    def fake_get(url, timeout=None, headers=None):
        if isinstance(outcome, Exception):
            raise outcome
        return outcome

    monkeypatch.setattr(datasets.requests, "get", fake_get)
    with pytest.raises(FetchError):
        fetch_registry.fetch_dataset("tiny", str(tmp_path / "raw"), timeout=1)


def test_fetch_without_urls_raises(fetch_registry, tmp_path):
    with pytest.raises(FetchError, match="no download URLs"):
        fetch_registry.fetch_dataset("bare", str(tmp_path / "raw"))

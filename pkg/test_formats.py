#!/usr/bin/env python3
"""
Format tests
Parser error locations, comment handling and deterministic writers
"""

import numpy as np
import numpy.testing as npt
import pytest

from errors import FormatError
from formats import (
    ManifestRow,
    NodeTable,
    parse_citations,
    parse_edge_list,
    parse_labels,
    parse_manifest,
    parse_vocabulary,
    read_checkpoint,
    read_tsv,
    write_checkpoint,
    write_edge_list,
    write_manifest,
    write_tsv,
)


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


def test_empty_edge_list(tmp_path):
    assert parse_edge_list(write(tmp_path, "empty.edges", "")) == []


def test_edge_list_skips_comments_and_reads_weights(tmp_path):
    path = write(tmp_path, "dd.edges", "# src\tdst\n0\t1\n\n2\t3\t0.25\n")
    assert parse_edge_list(path) == [(0, 1, 1.0), (2, 3, 0.25)]


def test_bad_field_reports_line(tmp_path):
    path = write(tmp_path, "bad.edges", "3\ta\n")
    with pytest.raises(FormatError) as info:
        parse_edge_list(path)
    assert info.value.line == 1
    assert info.value.path == path
    assert f"{path}:1:" in str(info.value)


@pytest.mark.parametrize("text", ["0\t1\t-2\n", "0\t1\tnan\n", "0\n", "-1\t2\n"])
def test_invalid_edges_raise(tmp_path, text):
    with pytest.raises(FormatError):
        parse_edge_list(write(tmp_path, "x.edges", text))


def test_missing_file_raises(tmp_path):
    with pytest.raises(FormatError, match="not found"):
        parse_edge_list(str(tmp_path / "absent.edges"))


def test_edge_list_writer_is_stable(tmp_path):
    path = str(tmp_path / "out" / "ww.edges")
    write_edge_list(path, [(0, 1, 1.0), (1, 2, 0.5)], header="src\tdst\tweight")
    assert parse_edge_list(path) == [(0, 1, 1.0), (1, 2, 0.5)]
    with open(path, encoding="utf-8") as f:
        assert f.read() == "# src\tdst\tweight\n0\t1\n1\t2\t0.5\n"


def test_manifest_requires_contiguous_ids(tmp_path):
    path = write(tmp_path, "manifest.tsv", "0\tdocument\tgraphs\n2\tdocument\tgraphs\n")
    with pytest.raises(FormatError, match="contiguous"):
        parse_manifest(path)
    path = write(tmp_path, "manifest2.tsv", "0\tword\tgraphs\n")
    with pytest.raises(FormatError, match="no label"):
        parse_manifest(path)


def test_manifest_writer_output_parses(tmp_path):
    table = NodeTable(
        documents=(ManifestRow(0, "document", "graphs", "g01"), ManifestRow(1, "document", "markets", "s01")),
        words=(ManifestRow(0, "word", "", "data_mining"),),
    )
    path = str(tmp_path / "manifest.tsv")
    write_manifest(path, table)
    assert parse_manifest(path) == table


def test_citation_label_and_vocabulary_errors(tmp_path):
    with pytest.raises(FormatError):
        parse_citations(write(tmp_path, "c.tsv", "a\tb\tc\n"))
    with pytest.raises(FormatError, match="duplicate"):
        parse_labels(write(tmp_path, "l.tsv", "a\tx\na\ty\n"))
    with pytest.raises(FormatError, match="whitespace"):
        parse_vocabulary(write(tmp_path, "v.txt", "data mining\n"))
    assert parse_vocabulary(write(tmp_path, "v2.txt", "Data_Mining\ngraph\n")) == ["data_mining", "graph"]


def test_tsv_tables(tmp_path):
    path = str(tmp_path / "results.tsv")
    write_tsv(path, ["variant", "seed", "test_acc"], [["b", 0, 0.5], ["r", 1, 1.0 / 3]])
    rows = read_tsv(path)
    assert rows[1] == {"variant": "r", "seed": "1", "test_acc": "0.333333"}


def test_checkpoint_is_bit_and_byte_identical(tmp_path, rng):
    arrays = {"layer1.gcn.dd": rng.normal(size=(4, 3)), "layer2.gcn.dd": rng.normal(size=(3, 2))}
    first, second = str(tmp_path / "a.npz"), str(tmp_path / "b.npz")
    write_checkpoint(first, arrays, meta={"variant": "b", "seed": 3})
    write_checkpoint(second, dict(reversed(list(arrays.items()))), meta={"seed": 3, "variant": "b"})

    with open(first, "rb") as a, open(second, "rb") as b:
        assert a.read() == b.read()

    loaded, meta = read_checkpoint(first)
    assert meta == {"variant": "b", "seed": 3}
    assert sorted(loaded) == sorted(arrays)
    for name, values in arrays.items():
        npt.assert_array_equal(loaded[name], values)
        assert loaded[name].tobytes() == values.tobytes()


def test_checkpoint_errors(tmp_path):
    with pytest.raises(FormatError):
        read_checkpoint(str(tmp_path / "missing.npz"))
    with pytest.raises(FormatError, match="reserved"):
        write_checkpoint(str(tmp_path / "x.npz"), {"__meta__": np.zeros((1, 1))})
    garbage = write(tmp_path, "garbage.npz", "not a zip")
    with pytest.raises(FormatError):
        read_checkpoint(garbage)

# ABOUTME: Tests for atomic writes and the CSV, matrix and key-value file helpers
# ABOUTME: Verifies failed writes leave no temp files behind
"""Tests for staci.utils"""

import json
import os

import numpy as np
import pandas as pd
import pytest

from staci.exceptions import DataError
from staci.utils import (
    atomic_json_write,
    atomic_write,
    read_key_values,
    read_matrix_csv,
    write_key_values,
    write_matrix_csv,
    write_table_csv,
)


class TestAtomicWrite:
    def test_creates_parents(self, tmp_path):
        path = tmp_path / "a" / "b" / "out.txt"
        atomic_write(path, "hello")
        assert path.read_text() == "hello"

    def test_replaces_existing(self, tmp_path):
        path = tmp_path / "out.txt"
        path.write_text("old")
        atomic_write(path, "new")
        assert path.read_text() == "new"
        assert os.listdir(tmp_path) == ["out.txt"]

    def test_failure_cleans_up(self, tmp_path):
        with pytest.raises(DataError, match="Failed to write"):
            atomic_write(tmp_path / "out.bin", "text", mode="wb")
        assert list(tmp_path.iterdir()) == []

    def test_json_sorted(self, tmp_path):
        atomic_json_write(tmp_path / "out.json", {"b": 1, "a": 2})
        text = (tmp_path / "out.json").read_text()
        assert text.index('"a"') < text.index('"b"')
        assert json.loads(text) == {"a": 2, "b": 1}


class TestTables:
    def test_table_without_index(self, tmp_path):
        write_table_csv(tmp_path / "t.csv", pd.DataFrame({"x": [1, 2], "y": [0.5, 1.5]}))
        assert (tmp_path / "t.csv").read_text() == "x,y\n1,0.5\n2,1.5\n"

    def test_matrix_round_trip(self, tmp_path):
        matrix = np.array([[1.0, 0.1], [1 / 3, 2e-12]])
        write_matrix_csv(tmp_path / "m.csv", matrix)
        np.testing.assert_array_equal(read_matrix_csv(tmp_path / "m.csv"), matrix)

    def test_matrix_text_format(self, tmp_path):
        write_matrix_csv(tmp_path / "m.csv", np.array([[1.0, -0.5], [0.25, 3.0]]))
        assert (tmp_path / "m.csv").read_text().splitlines() == ["1,-0.5", "0.25,3"]

    def test_matrix_missing(self, tmp_path):
        with pytest.raises(DataError, match="not found"):
            read_matrix_csv(tmp_path / "absent.csv")

    def test_matrix_not_numeric(self, tmp_path):
        (tmp_path / "m.csv").write_text("1,x\n2,3\n")
        with pytest.raises(DataError, match="Invalid matrix"):
            read_matrix_csv(tmp_path / "m.csv")


class TestKeyValues:
    def test_round_trip(self, tmp_path):
        write_key_values(tmp_path / "kv.txt", {"sigma2": 1.25, "phi": 0.1})
        assert read_key_values(tmp_path / "kv.txt") == {"sigma2": 1.25, "phi": 0.1}

    def test_comments_and_blanks(self, tmp_path):
        (tmp_path / "kv.txt").write_text("# fitted\n\nphi = 2\n")
        assert read_key_values(tmp_path / "kv.txt") == {"phi": 2.0}

    def test_malformed_line(self, tmp_path):
        (tmp_path / "kv.txt").write_text("phi\n")
        with pytest.raises(DataError, match="kv.txt:1"):
            read_key_values(tmp_path / "kv.txt")

    def test_non_numeric(self, tmp_path):
        (tmp_path / "kv.txt").write_text("phi=abc\n")
        with pytest.raises(DataError, match="not a number"):
            read_key_values(tmp_path / "kv.txt")

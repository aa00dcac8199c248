# tests/test_backends.py
import json
import math

import pytest

from src.backends.fs_backend import (
    atomic_write_text,
    csv_text,
    dumps_json,
    format_float,
    read_csv,
    sha256_hex,
    write_csv,
)
from src.core.errors import ValidationError


def test_floats_keep_round_trip_precision():
    value = 0.1 + 0.2
    assert float(format_float(value)) == value
    assert format_float(0.5, ".3f") == "0.500"
    assert format_float(math.nan) == "nan"
    assert format_float(True) == "true"
    assert format_float(7) == "7"


def test_json_is_sorted_and_nan_free():
    text = dumps_json({"b": math.nan, "a": [1.0, math.inf], "c": (0.25,)})
    assert text.endswith("\n")
    assert list(json.loads(text)) == ["a", "b", "c"]
    assert json.loads(text) == {"a": [1.0, None], "b": None, "c": [0.25]}
    assert dumps_json({"x": 1}) == dumps_json({"x": 1})


def test_csv_text_shape_check():
    assert csv_text(["a", "b"], [[1, 0.5], [2, False]]) == "a,b\n1,0.5\n2,false\n"
    with pytest.raises(ValidationError):
        csv_text(["a", "b"], [[1]])


def test_atomic_write_replaces_and_cleans_up(tmp_path):
    target = tmp_path / "nested" / "out.txt"
    atomic_write_text(target, "first")
    atomic_write_text(target, "second")
    assert target.read_text(encoding="utf-8") == "second"
    assert [p.name for p in target.parent.iterdir()] == ["out.txt"]


def test_csv_round_trip(tmp_path):
    path = tmp_path / "rows.csv"
    write_csv(path, ["n", "tv"], [[2, 0.75], [4, 1 / 3]])
    rows = read_csv(path)
    assert rows[0] == {"n": "2", "tv": "0.75"}
    assert float(rows[1]["tv"]) == 1 / 3


def test_digest():
    assert sha256_hex(b"") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"

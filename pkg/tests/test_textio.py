import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vimocap import textio

finite = st.floats(allow_nan=False, allow_infinity=False)


@given(finite)
def test_float_round_trip_is_exact(x):
    assert json.loads(textio.dumps(x)) == x


@given(st.lists(finite, max_size=20))
def test_array_round_trip(xs):
    arr = np.array(xs, dtype=np.float64)
    assert np.array_equal(np.array(json.loads(textio.dumps(arr)), dtype=np.float64), arr)


def test_integral_floats_stay_floats():
    assert textio.dumps(2.0) == "2.0"
    assert isinstance(json.loads(textio.dumps(np.float64(3.0))), float)
    assert textio.dumps(np.int64(3)) == "3"


def test_at_least_fifteen_significant_digits():
    text = textio.dumps(math.pi)
    assert len(text.replace(".", "").lstrip("0")) >= 15


def test_non_finite_rejected():
    with pytest.raises(ValueError):
        textio.dumps(float("nan"))
    with pytest.raises(TypeError):
        textio.dumps(object())


def test_nested_structures_and_lines(tmp_path):
    doc = {"a": [1, 2.5, None, True], "b": {"c": np.eye(2)}, "s": "x\"y"}
    path = tmp_path / "d.json"
    textio.dump(doc, path)
    assert textio.load(path) == {"a": [1, 2.5, None, True], "b": {"c": [[1.0, 0.0], [0.0, 1.0]]}, "s": "x\"y"}
    textio.dump_lines([{"k": 1}, {"k": 2}], tmp_path / "l.jsonl")
    assert textio.load_lines(tmp_path / "l.jsonl") == [{"k": 1}, {"k": 2}]

import json
import math

import numpy as np
import pytest

from cone_contraction.errors import DimensionError, NotSymmetricError
from cone_contraction.io import (dumps, matrix_from_json, matrix_to_json, sym_from_json, to_jsonable,
                                 trajectory_from_csv, upper_triangle_header, vector_from_json, write_atomic)


def test_matrix_round_trip():
    x = np.arange(6.0).reshape(2, 3)
    obj = matrix_to_json(x)
    assert "dim" not in obj
    assert np.array_equal(matrix_from_json(obj), x)
    sq = np.array([[1.0, 2.0], [2.0, 5.0]])
    assert matrix_to_json(sq)["dim"] == 2
    assert np.array_equal(sym_from_json(matrix_to_json(sq)), sq)
    assert np.array_equal(matrix_from_json([[1, 2], [3, 4]]), [[1, 2], [3, 4]])


def test_declared_dim_checked():
    with pytest.raises(DimensionError):
        matrix_from_json({"dim": 3, "rows": [[1.0, 0.0], [0.0, 1.0]]})
    with pytest.raises(ValueError):
        matrix_from_json({"dim": 1})


def test_symmetry_enforced():
    with pytest.raises(NotSymmetricError):
        sym_from_json([[1.0, 2.0], [0.0, 1.0]])


def test_vector():
    assert np.array_equal(vector_from_json([1, 2]), [1.0, 2.0])
    with pytest.raises(DimensionError):
        vector_from_json([[1.0]])


def test_nonfinite_and_numpy_scalars():
    obj = to_jsonable({"a": math.nan, "b": np.float64(math.inf), "c": -math.inf,
                       "d": np.int64(3), "e": np.bool_(True), "f": np.array([1.0, 2.0])})
    assert obj == {"a": "nan", "b": "inf", "c": "-inf", "d": 3, "e": True, "f": [1.0, 2.0]}
    json.dumps(obj, allow_nan=False)


def test_dumps_canonical():
    assert dumps({"b": 1, "a": [1.5]}) == dumps({"a": [1.5], "b": 1})
    assert dumps({}).endswith("\n")


def test_write_atomic(tmp_path):
    path = tmp_path / "x.txt"
    write_atomic(str(path), "one")
    write_atomic(str(path), "two")
    assert path.read_text() == "two"
    assert [p.name for p in tmp_path.iterdir()] == ["x.txt"]


def test_headers():
    assert upper_triangle_header(2) == ["t", "p11", "p12", "p22"]
    h = upper_triangle_header(10)
    assert len(h) == 1 + 55 and h[1] == "p1_1" and h[-1] == "p10_10"


def test_csv_bad_width():
    with pytest.raises(DimensionError):
        trajectory_from_csv("t,a,b\n0,1,2\n")

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from taps.factors_io import FactorFileError, dimension_from_dict, dimension_to_dict, load_factors, save_factors
from taps.grid_basis import BasisConfig, DimensionSpec, shape_table
from taps.td import TDField, evaluate


def _dims(p=2):
    return {
        "x": DimensionSpec("x", "spatial", (0.0, 1.0), 5, BasisConfig(p, p + 1, 0.3), (0, -1)),
        "k": DimensionSpec("k", "parametric", (1.0, 2.0), 3, BasisConfig(p)),
        "t": DimensionSpec("t", "temporal", (0.0, 2.0), 4, BasisConfig(p), (0,)),
    }


def _field(dims, M, seed):
    rng = np.random.default_rng(seed)
    return TDField("u", tuple(dims), {d: rng.normal(size=(s.n_nodes, M)) for d, s in dims.items()})


@pytest.mark.parametrize("binary", [True, False])
def test_round_trip_preserves_factors_and_evaluation(tmp_path, binary):
    dims = _dims()
    f = _field(dims, 3, 0)
    path = save_factors(tmp_path / "u.taps", f, dims, binary=binary)
    g, gd = load_factors(path)
    assert g.dims == f.dims and g.name == "u"
    for d in f.dims:
        assert np.array_equal(g.factors[d], f.factors[d])
    assert gd == dims
    tables = {d: shape_table(s) for d, s in gd.items()}
    rng = np.random.default_rng(1)
    pts = {d: rng.uniform(*s.domain, 100) for d, s in dims.items()}
    assert np.max(np.abs(evaluate(g, tables, pts) - evaluate(f, {d: shape_table(s) for d, s in dims.items()}, pts))) <= 1e-12


@settings(max_examples=20, deadline=None)
@given(M=st.integers(1, 5), seed=st.integers(0, 2 ** 16), binary=st.booleans())
def test_round_trip_property(tmp_path_factory, M, seed, binary):
    dims = _dims(1)
    f = _field(dims, M, seed)
    path = save_factors(tmp_path_factory.mktemp("io") / "f.taps", f, dims, binary=binary)
    g, _ = load_factors(path)
    assert all(np.array_equal(g.factors[d], f.factors[d]) for d in f.dims)


def test_binary_layout(tmp_path):
    dims = {"x": DimensionSpec("x", "spatial", (0.0, 1.0), 1, BasisConfig(1))}
    f = TDField("u", ("x",), {"x": np.array([[1.0, 3.0], [2.0, 4.0]])})
    raw = save_factors(tmp_path / "a.taps", f, dims).read_bytes()
    assert raw.startswith(b"TAPS1\n")
    assert np.array_equal(np.frombuffer(raw[-32:], "<f8"), [1.0, 2.0, 3.0, 4.0])


def test_text_layout(tmp_path):
    dims = {"x": DimensionSpec("x", "spatial", (0.0, 1.0), 1, BasisConfig(1))}
    f = TDField("u", ("x",), {"x": np.array([[0.1, 3.0], [2.0, 4.0]])})
    lines = save_factors(tmp_path / "a.txt", f, dims, binary=False).read_text().splitlines()
    assert lines[0] == "TAPS1 text"
    assert lines[2:] == ["0.1", "2.0", "3.0", "4.0"]


def test_rejects_bad_files(tmp_path):
    bad = tmp_path / "bad.taps"
    bad.write_bytes(b"hello")
    with pytest.raises(FactorFileError):
        load_factors(bad)
    dims = _dims()
    path = save_factors(tmp_path / "u.taps", _field(dims, 2, 0), dims)
    truncated = tmp_path / "t.taps"
    truncated.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(FactorFileError):
        load_factors(truncated)
    text = save_factors(tmp_path / "v.txt", _field(dims, 2, 0), dims, binary=False)
    text.write_text(text.read_text().replace('"version": 1', '"version": 9'))
    with pytest.raises(FactorFileError, match="version"):
        load_factors(text)


def test_save_checks_dimensions(tmp_path):
    dims = _dims()
    f = _field(dims, 2, 0)
    with pytest.raises(FactorFileError):
        save_factors(tmp_path / "x", f, {"x": dims["x"]})
    wrong = dict(dims, k=DimensionSpec("k", "parametric", (1.0, 2.0), 7, BasisConfig(2)))
    with pytest.raises(FactorFileError):
        save_factors(tmp_path / "x", f, wrong)


def test_dimension_dict_round_trip():
    for d in _dims().values():
        assert dimension_from_dict(dimension_to_dict(d)) == d

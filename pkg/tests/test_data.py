import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gmcopula.data import (ColumnSpec, DataFormatError, MixedDataset, SchemaError, expand_rpl, load_dataset,
                           write_dataset, write_schema)


def _write(tmp_path, header, rows, schema):
    csv_path = tmp_path / "d.csv"
    csv_path.write_text("\n".join([",".join(header)] + [",".join(r) for r in rows]) + "\n")
    schema_path = tmp_path / "s.json"
    schema_path.write_text(json.dumps({"columns": schema}))
    return csv_path, schema_path


SCHEMA = [
    {"name": "Age", "kind": "count"},
    {"name": "BMI", "kind": "continuous"},
    {"name": "FI", "kind": "categorical", "levels": ["Low", "Middle", "High"]},
]


def test_empty_cell_and_na_are_missing(tmp_path):
    c, s = _write(tmp_path, ["Age", "BMI", "FI"],
                  [["30", "22.5", "Low"], ["41", "NA", "High"], ["55", "", "Middle"]], SCHEMA)
    d = load_dataset(c, s)
    assert d.mask[:, 1].tolist() == [False, True, True]
    assert not d.mask[:, [0, 2]].any()


def test_categorical_level_lookup(tmp_path):
    c, s = _write(tmp_path, ["Age", "BMI", "FI"], [["30", "22.5", "High"]], SCHEMA)
    assert load_dataset(c, s).cells[0, 2] == 2


def test_unknown_level_names_row_and_column(tmp_path):
    c, s = _write(tmp_path, ["Age", "BMI", "FI"], [["30", "22.5", "Low"], ["31", "20", "Huge"]], SCHEMA)
    with pytest.raises(SchemaError, match=r"row 2.*'FI'"):
        load_dataset(c, s)


@pytest.mark.parametrize("token", ["abc", "1,5", "nan", "inf"])
def test_bad_numeric_token(tmp_path, token):
    c, s = _write(tmp_path, ["Age", "BMI", "FI"], [["30", f'"{token}"', "Low"]], SCHEMA)
    with pytest.raises(DataFormatError):
        load_dataset(c, s)


def test_row_length_mismatch(tmp_path):
    c, s = _write(tmp_path, ["Age", "BMI", "FI"], [["30", "22.5"]], SCHEMA)
    with pytest.raises(DataFormatError, match="expected 3"):
        load_dataset(c, s)


def test_header_mismatch(tmp_path):
    c, s = _write(tmp_path, ["Age", "FI", "BMI"], [["30", "Low", "1"]], SCHEMA)
    with pytest.raises(SchemaError):
        load_dataset(c, s)


def test_schema_rejects_unknown_kind():
    with pytest.raises(SchemaError):
        ColumnSpec("x", "nominal")


def test_expand_rpl_indicator_row():
    spec = [ColumnSpec("v", "categorical", ("A", "B", "C"))]
    view = expand_rpl(MixedDataset(spec, np.array([[1.0], [np.nan]])))
    assert view.gamma[0].tolist() == [0, 1, 0]
    assert view.gamma[1].tolist() == [-1, -1, -1]


def test_binary_is_one_signed_column():
    spec = [ColumnSpec("smoke", "categorical", ("No", "Yes"))]
    view = expand_rpl(MixedDataset(spec, np.array([[1.0], [0.0]])))
    assert view.p_star == 1
    assert view.col_map[0].kind == "binary"
    assert view.gamma[:, 0].tolist() == [1, 0]


def test_p_star_two_continuous_one_three_level():
    spec = [ColumnSpec("a", "continuous"), ColumnSpec("b", "continuous"),
            ColumnSpec("c", "categorical", ("x", "y", "z"))]
    assert expand_rpl(MixedDataset(spec, np.zeros((2, 3)))).p_star == 5


def test_ordinal_as_orthant_expands():
    spec = [ColumnSpec("o", "ordinal", ("1", "2", "3"), as_orthant=True)]
    view = expand_rpl(MixedDataset(spec, np.array([[2.0]])))
    assert view.p_star == 3 and view.gamma[0].tolist() == [0, 0, 1]


@st.composite
def datasets(draw):
    n = draw(st.integers(1, 12))
    kinds = draw(st.lists(st.sampled_from(["continuous", "count", "ordinal", "categorical"]), min_size=1, max_size=4))
    schema, cols = [], []
    for j, kind in enumerate(kinds):
        levels = ("a", "b", "c") if kind in ("ordinal", "categorical") else ()
        schema.append(ColumnSpec(f"v{j}", kind, levels))
        if kind == "continuous":
            vals = draw(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=n, max_size=n))
        elif kind == "count":
            vals = draw(st.lists(st.integers(0, 1000), min_size=n, max_size=n))
        else:
            vals = draw(st.lists(st.integers(0, 2), min_size=n, max_size=n))
        cols.append(vals)
    mask = np.array(draw(st.lists(st.lists(st.booleans(), min_size=len(kinds), max_size=len(kinds)),
                                  min_size=n, max_size=n)))
    return MixedDataset(schema, np.array(cols, dtype=float).T, mask)


@settings(max_examples=60, deadline=None)
@given(datasets())
def test_round_trip_bit_exact(tmp_path_factory, d):
    tmp = tmp_path_factory.mktemp("rt")
    write_dataset(d, tmp / "d.csv")
    write_schema(d.schema, tmp / "s.json")
    back = load_dataset(tmp / "d.csv", tmp / "s.json")
    assert np.array_equal(back.mask, d.mask)
    assert np.array_equal(back.cells[~d.mask], d.cells[~d.mask])


@settings(max_examples=60, deadline=None)
@given(datasets(), st.randoms())
def test_expand_rpl_indicators_and_row_order(d, rnd):
    view = expand_rpl(d)
    for var, cols in view.variable_groups().items():
        if view.col_map[cols[0]].kind != "orthant":
            continue
        g = view.gamma[:, cols]
        obs = ~d.mask[:, var]
        assert (g[obs].sum(axis=1) == 1).all()
        assert (g[~obs] == -1).all()
    perm = list(range(d.n))
    rnd.shuffle(perm)
    shuffled = expand_rpl(d.subset_rows(perm))
    assert shuffled.col_map == view.col_map
    assert np.array_equal(shuffled.gamma, view.gamma[perm])

import logging

import numpy as np
import pytest

from dncb.data import (
    ParseError,
    ReadCountPair,
    biseq_beta,
    biseq_to_beta,
    column_variance,
    load_array,
    load_biseq,
    load_matrix,
    read_labels,
    save_array,
    save_matrix,
    variance_filter,
)
from dncb.errors import DomainError
from dncb.model import BoundedMatrix


def _write(path, text):
    path.write_text(text)
    return path


# --- matrices ---------------------------------------------------------------


def test_load_simple_csv(tmp_path):
    p = _write(tmp_path / "m.csv", ",a,b\nr1,0.25,0.25\nr2,0.25,0.25\n")
    m = load_matrix(p)
    assert m.shape == (2, 2)
    np.testing.assert_array_equal(m.values, np.full((2, 2), 0.25))
    assert m.row_labels == ["r1", "r2"] and m.col_labels == ["a", "b"]


def test_load_tsv_without_labels(tmp_path):
    p = _write(tmp_path / "m.tsv", "0.1\t0.2\n0.3\t0.4\n")
    m = load_matrix(p, header=False, rownames=False)
    np.testing.assert_array_equal(m.values, [[0.1, 0.2], [0.3, 0.4]])
    assert m.row_labels is None and m.col_labels is None


def test_load_clamps_with_warning(tmp_path, caplog):
    p = _write(tmp_path / "m.csv", ",a,b\nr1,1.0,0.5\nr2,0.5,0.5\n")
    with caplog.at_level(logging.WARNING, logger="dncb.data"):
        m = load_matrix(p)
    assert m.n_clamped == 1
    assert m.values[0, 0] == 1 - 1e-6
    assert "clamped 1 value" in caplog.text


def test_load_missing_tokens(tmp_path):
    p = _write(tmp_path / "m.csv", ",a,b,c\nr1,NA,,0.5\nr2,nan,0.2,null\n")
    m = load_matrix(p)
    np.testing.assert_array_equal(m.mask, [[False, False, True], [False, True, False]])


@pytest.mark.parametrize(
    "text, line, column",
    [
        (",a,b\nr1,0.5,x\n", 2, 3),
        (",a,b\nr1,0.5,0.5\nr2,0.5\n", 3, 2),
        (",a,b\nr1,0.5,inf\n", 2, 3),
    ],
)
def test_parse_errors_carry_location(tmp_path, text, line, column):
    p = _write(tmp_path / "m.csv", text)
    with pytest.raises(ParseError) as err:
        load_matrix(p)
    assert (err.value.line, err.value.column) == (line, column)
    assert f"{p}:{line}:{column}" in str(err.value)


def test_parse_error_empty_and_header_mismatch(tmp_path):
    with pytest.raises(ParseError):
        load_matrix(_write(tmp_path / "e.csv", ""))
    with pytest.raises(ParseError):
        load_matrix(_write(tmp_path / "h.csv", ",a\nr1,0.5,0.5\n"))
    with pytest.raises(DomainError):
        load_matrix(_write(tmp_path / "x.csv", ",a\nr1,0.5\n"), fmt="xlsx")


def test_roundtrip_is_bit_stable(tmp_path):
    rng = np.random.default_rng(0)
    vals = rng.uniform(size=(5, 7))
    mask = rng.random((5, 7)) > 0.2
    m = BoundedMatrix(vals, mask, [f"s{i}" for i in range(5)], [f"f{j}" for j in range(7)])
    save_matrix(tmp_path / "m.csv", m)
    back = load_matrix(tmp_path / "m.csv")
    np.testing.assert_array_equal(back.mask, m.mask)
    np.testing.assert_array_equal(back.values[m.mask], m.values[m.mask])
    assert back.row_labels == m.row_labels and back.col_labels == m.col_labels
    save_matrix(tmp_path / "m2.csv", back)
    assert (tmp_path / "m.csv").read_text() == (tmp_path / "m2.csv").read_text()


def test_save_array_roundtrip(tmp_path):
    a = np.random.default_rng(1).gamma(1, 1, (3, 4))
    save_array(tmp_path / "a.csv", a, ["x", "y", "z"])
    np.testing.assert_array_equal(load_array(tmp_path / "a.csv"), a)
    save_array(tmp_path / "i.csv", np.arange(6).reshape(2, 3))
    assert (tmp_path / "i.csv").read_text().splitlines()[1] == "0,0,1,2"


# --- bisulfite --------------------------------------------------------------


def test_biseq_examples():
    assert biseq_to_beta(ReadCountPair(0, 0, 0.1)) == pytest.approx(0.5, rel=1e-15)
    assert biseq_to_beta(ReadCountPair(10, 0, 0.1)) == pytest.approx(10.1 / 10.2, rel=1e-15)
    for s0 in (0.01, 0.1, 3.0):
        assert biseq_to_beta(ReadCountPair(7, 7, s0)) == pytest.approx(0.5, rel=1e-15)


def test_biseq_strictly_inside():
    b = biseq_beta(np.array([0, 10_000, 0]), np.array([10_000, 0, 0]))
    assert np.all((b > 0) & (b < 1))


def test_biseq_validation():
    with pytest.raises(DomainError):
        ReadCountPair(-1, 0)
    with pytest.raises(DomainError):
        ReadCountPair(1, 1, 0.0)
    with pytest.raises(DomainError):
        biseq_beta([1], [-1])
    with pytest.raises(DomainError):
        biseq_beta([1], [1], s0=-0.1)


def test_load_biseq_long_format(tmp_path):
    p = _write(
        tmp_path / "reads.csv",
        "sample,feature,methylated,unmethylated\n"
        "s1,cg1,10,0\n"
        "s1,cg2,3,3\n"
        "s2,cg1,0,4\n"
        "s1,cg1,5,5\n",
    )
    m = load_biseq(p)
    assert m.row_labels == ["s1", "s2"] and m.col_labels == ["cg1", "cg2"]
    assert m.values[0, 0] == pytest.approx(15.1 / 20.2)
    assert m.values[0, 1] == pytest.approx(0.5)
    assert m.values[1, 0] == pytest.approx(0.1 / 4.2)
    # s2/cg2 has no row: zero reads give 0.5, or stays unobserved with 'mask'
    assert m.values[1, 1] == 0.5 and m.mask[1, 1]
    assert not load_biseq(p, missing="mask").mask[1, 1]


def test_load_biseq_errors(tmp_path):
    with pytest.raises(ParseError):
        load_biseq(_write(tmp_path / "a.csv", "sample,feature,reads\ns1,cg1,3\n"))
    with pytest.raises(ParseError) as err:
        load_biseq(_write(tmp_path / "b.csv", "sample,feature,methylated,unmethylated\ns1,cg1,3,x\n"))
    assert (err.value.line, err.value.column) == (2, 4)
    with pytest.raises(ParseError):
        load_biseq(_write(tmp_path / "c.csv", "sample,feature,methylated,unmethylated\ns1,cg1,-3,1\n"))
    with pytest.raises(ParseError):
        load_biseq(_write(tmp_path / "d.csv", "sample,feature,methylated,unmethylated\n"))
    with pytest.raises(DomainError):
        load_biseq(tmp_path / "d.csv", missing="drop")


# --- variance filter --------------------------------------------------------


def test_variance_filter_identity():
    m = BoundedMatrix(np.random.default_rng(2).uniform(size=(6, 4)), col_labels=list("abcd"))
    out = variance_filter(m, 4)
    np.testing.assert_array_equal(out.values, m.values)
    assert out.col_labels == list("abcd")


def test_variance_filter_skips_constant_column():
    vals = np.random.default_rng(3).uniform(size=(6, 4))
    vals[:, 1] = 0.5
    out = variance_filter(BoundedMatrix(vals, col_labels=list("abcd")), 3)
    assert out.col_labels == ["a", "c", "d"]


def test_variance_filter_hand_case():
    cols = np.array([
        [0.1, 0.5, 0.2, 0.9, 0.4],
        [0.3, 0.5, 0.8, 0.1, 0.4],
        [0.5, 0.5, 0.2, 0.5, 0.6],
    ])
    m = BoundedMatrix(cols, col_labels=list("abcde"))
    var = [np.var(cols[:, j], ddof=1) for j in range(5)]
    np.testing.assert_allclose(column_variance(m), var, rtol=1e-14)
    ranked = sorted(range(5), key=lambda j: (-var[j], j))
    out = variance_filter(m, 2)
    assert out.col_labels == [list("abcde")[j] for j in sorted(ranked[:2])]


def test_variance_filter_ties_prefer_lower_index():
    vals = np.array([[0.2, 0.8, 0.2], [0.8, 0.2, 0.8]])
    out = variance_filter(BoundedMatrix(vals, col_labels=list("xyz")), 2)
    assert out.col_labels == ["x", "y"]


def test_variance_filter_ignores_unobserved():
    vals = np.array([[0.1, 0.5], [0.9, 0.5], [0.5, 0.99]])
    mask = np.array([[True, True], [True, True], [True, False]])
    var = column_variance(BoundedMatrix(vals, mask))
    assert var[1] == 0.0


def test_variance_filter_range():
    m = BoundedMatrix(np.full((2, 3), 0.5))
    with pytest.raises(DomainError):
        variance_filter(m, 4)
    with pytest.raises(DomainError):
        variance_filter(m, 0)


def test_read_labels(tmp_path):
    assert read_labels(_write(tmp_path / "l.txt", "label\na\nb\n\nc\n")) == ["a", "b", "c"]
    assert read_labels(_write(tmp_path / "m.txt", "s1,0\ns2,1\n")) == ["0", "1"]

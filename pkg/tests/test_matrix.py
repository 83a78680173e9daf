"""Matrix text files: round trips and error locations."""

from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from mmaemu.formats import FormatId, spec_of
from mmaemu.matrix import MatrixBuffer, MatrixFileError, emit, parse, read, stack_rows, write


@st.composite
def matrices(draw):
    fmt = draw(st.sampled_from(list(FormatId)))
    rows, cols = draw(st.integers(0, 5)), draw(st.integers(1, 5))
    bits = spec_of(fmt).storage_bits
    elems = draw(st.lists(st.integers(0, 2**bits - 1), min_size=rows * cols, max_size=rows * cols))
    return MatrixBuffer(fmt, rows, cols, tuple(elems))


@given(matrices())
def test_round_trip(m):
    assert parse(emit(m)) == m


def test_file_round_trip(tmp_path):
    m = MatrixBuffer.from_rows("FP16", [[0x3C00, 0xBC00], [0, 0x7C00]])
    write(tmp_path / "m.txt", m)
    assert (tmp_path / "m.txt").read_text() == "mmat FP16 2 2\n3c00 bc00\n0000 7c00\n"
    assert read(tmp_path / "m.txt") == m


def test_accessors():
    m = MatrixBuffer.from_rows("E2M1", [[1, 2, 3], [4, 5, 6]])
    assert (m[1, 2], m.row(0), m.col(1)) == (6, (1, 2, 3), (2, 5))
    assert stack_rows([m, m]).rows == 4


@pytest.mark.parametrize(
    "text, line, col",
    [
        ("", None, None),
        ("matrix FP16 1 1\n3c00\n", 1, None),
        ("mmat FP17 1 1\n3c00\n", 1, None),
        ("mmat FP16 one 1\n3c00\n", 1, None),
        ("mmat FP16 2 1\n3c00\n", 2, None),
        ("mmat FP16 1 2\n3c00\n", 2, None),
        ("mmat FP16 1 2\n3c00 3C00\n", 2, 2),
        ("mmat FP16 1 2\n3c00 c00\n", 2, 2),
        ("mmat FP16 2 1\n3c00\nxyzw\n", 3, 1),
        ("mmat E2M3 1 1\n7f\n", 2, 1),
    ],
)
def test_parse_errors_report_location(text, line, col):
    with pytest.raises(MatrixFileError) as e:
        parse(text, source="m.txt")
    assert (e.value.line, e.value.col) == (line, col)
    want = "m.txt" + (f":{line}" if line else "") + (f":{col}" if col else "")
    assert str(e.value).startswith(want + ":")


def test_trailing_blank_lines_allowed():
    assert parse("mmat FP32 1 1\n3f800000\n\n\n").elements == (0x3F800000,)
    assert parse("mmat E2M1 1 2\nf 0\n").elements == (0xF, 0)


def test_buffer_rejects_oversized_elements():
    with pytest.raises(ValueError):
        MatrixBuffer(FormatId.E2M1, 1, 1, (0x10,))
    with pytest.raises(ValueError):
        MatrixBuffer(FormatId.FP16, 2, 2, (0, 0, 0))

"""Bit-pattern matrices and their text file format.

A matrix file is a header line ``mmat <format-id> <rows> <cols>`` followed by
``rows`` lines of ``cols`` whitespace-separated lowercase hex tokens, each
exactly ``ceil(storage_bits / 4)`` digits wide.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .formats import FormatId, spec_of


class MatrixFileError(ValueError):
    def __init__(self, msg: str, line: int | None = None, col: int | None = None, source: str = "<string>"):
        loc = source
        if line is not None:
            loc += f":{line}"
            if col is not None:
                loc += f":{col}"
        super().__init__(f"{loc}: {msg}")
        self.line = line
        self.col = col


@dataclass(frozen=True)
class MatrixBuffer:
    fmt: FormatId
    rows: int
    cols: int
    elements: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "fmt", FormatId(self.fmt))
        object.__setattr__(self, "elements", tuple(self.elements))
        if len(self.elements) != self.rows * self.cols:
            raise ValueError(f"{self.rows}x{self.cols} matrix needs {self.rows * self.cols} elements, got {len(self.elements)}")
        width = spec_of(self.fmt).storage_bits
        for x in self.elements:
            if x < 0 or x >> width:
                raise ValueError(f"0x{x:x} does not fit {width}-bit {self.fmt}")

    @classmethod
    def from_rows(cls, fmt: FormatId | str, rows: Sequence[Sequence[int]]) -> "MatrixBuffer":
        rows = [list(r) for r in rows]
        ncols = len(rows[0]) if rows else 0
        return cls(FormatId(fmt), len(rows), ncols, tuple(x for r in rows for x in r))

    @classmethod
    def filled(cls, fmt: FormatId | str, rows: int, cols: int, value: int = 0) -> "MatrixBuffer":
        return cls(FormatId(fmt), rows, cols, (value,) * (rows * cols))

    def __getitem__(self, ij: tuple[int, int]) -> int:
        i, j = ij
        return self.elements[i * self.cols + j]

    def row(self, i: int) -> tuple[int, ...]:
        return self.elements[i * self.cols : (i + 1) * self.cols]

    def col(self, j: int) -> tuple[int, ...]:
        return self.elements[j :: self.cols]


def emit(m: MatrixBuffer) -> str:
    digits = spec_of(m.fmt).hex_digits
    lines = [f"mmat {m.fmt.value} {m.rows} {m.cols}"]
    for i in range(m.rows):
        lines.append(" ".join(f"{x:0{digits}x}" for x in m.row(i)))
    return "\n".join(lines) + "\n"


def parse(text: str, source: str = "<string>") -> MatrixBuffer:
    lines = text.splitlines()
    if not lines:
        raise MatrixFileError("empty file", source=source)
    head = lines[0].split()
    if len(head) != 4 or head[0] != "mmat":
        raise MatrixFileError("header must be 'mmat <format-id> <rows> <cols>'", 1, source=source)
    try:
        fmt = FormatId(head[1])
    except ValueError:
        raise MatrixFileError(f"unknown format {head[1]!r}", 1, source=source) from None
    try:
        rows, cols = int(head[2]), int(head[3])
    except ValueError:
        raise MatrixFileError("rows and cols must be integers", 1, source=source) from None
    if rows < 0 or cols < 0:
        raise MatrixFileError("negative dimension", 1, source=source)
    fs = spec_of(fmt)
    digits = fs.hex_digits
    body = lines[1:]
    while body and not body[-1].strip():
        body.pop()
    if len(body) != rows:
        raise MatrixFileError(f"expected {rows} rows, found {len(body)}", len(lines), source=source)
    elems: list[int] = []
    for i, line in enumerate(body, start=2):
        toks = line.split()
        if len(toks) != cols:
            raise MatrixFileError(f"expected {cols} tokens, found {len(toks)}", i, source=source)
        for j, tok in enumerate(toks, start=1):
            if len(tok) != digits or any(ch not in "0123456789abcdef" for ch in tok):
                raise MatrixFileError(f"token {tok!r} is not {digits} lowercase hex digits", i, j, source)
            x = int(tok, 16)
            if x >> fs.storage_bits:
                raise MatrixFileError(f"0x{tok} does not fit {fs.storage_bits}-bit {fmt.value}", i, j, source)
            elems.append(x)
    return MatrixBuffer(fmt, rows, cols, tuple(elems))


def read(path: str | Path) -> MatrixBuffer:
    path = Path(path)
    return parse(path.read_text(), source=str(path))


def write(path: str | Path, m: MatrixBuffer) -> None:
    Path(path).write_text(emit(m))


def stack_rows(mats: Iterable[MatrixBuffer]) -> MatrixBuffer:
    mats = list(mats)
    fmt, cols = mats[0].fmt, mats[0].cols
    return MatrixBuffer(fmt, sum(m.rows for m in mats), cols, tuple(x for m in mats for x in m.elements))

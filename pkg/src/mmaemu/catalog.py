"""Instruction catalog and the matrix multiply-add dispatcher.

The catalog lives in ``data/instructions.tsv``: one record per
(architecture, instruction) with shape, operand formats and the algorithm
that reproduces the instruction's arithmetic.  ``matmul`` evaluates every
output element as an independent dot-add.
"""

from __future__ import annotations

import csv
import difflib
import enum
from dataclasses import dataclass, replace
from functools import lru_cache
from importlib import resources
from typing import Sequence

from .algorithms import Algorithm, AlgorithmParams, DotAddRequest, run
from .exact import RoundingMode
from .formats import FormatId, fixup
from .matrix import MatrixBuffer


class Architecture(str, enum.Enum):
    Volta = "Volta"
    Turing = "Turing"
    Ampere = "Ampere"
    AdaLovelace = "AdaLovelace"
    Hopper = "Hopper"
    Blackwell = "Blackwell"
    RTXBlackwell = "RTXBlackwell"
    CDNA2 = "CDNA2"
    CDNA3 = "CDNA3"

    def __str__(self) -> str:
        return self.value


class InstructionNotFound(KeyError):
    def __init__(self, arch: str, name: str, suggestions: Sequence[str] = ()):
        msg = f"{name!r} is not available on {arch}"
        if suggestions:
            msg += f"; did you mean {', '.join(repr(s) for s in suggestions)}?"
        super().__init__(msg)
        self.suggestions = list(suggestions)

    def __str__(self) -> str:
        return self.args[0]


class OperandError(ValueError):
    """An operand does not match the instruction's shape or formats."""


@dataclass(frozen=True)
class ScaleSpec:
    sf_fmt: FormatId
    block: int


@dataclass(frozen=True)
class InstructionDescriptor:
    name: str
    arch: Architecture
    M: int
    N: int
    K: int
    a_fmt: FormatId
    b_fmt: FormatId
    c_fmt: FormatId
    d_fmt: FormatId
    params: AlgorithmParams
    scale: ScaleSpec | None = None
    aliases: tuple[str, ...] = ()
    hypothetical: bool = False

    @property
    def algorithm(self) -> Algorithm:
        return self.params.algorithm

    @property
    def flexible_mn(self) -> bool:
        """Shape M, N is chosen by the caller (descriptor-driven instructions)."""
        return self.name.startswith("UTC")

    def request(
        self,
        c: int,
        a: Sequence[int],
        b: Sequence[int],
        a_sf: Sequence[int] | None = None,
        b_sf: Sequence[int] | None = None,
    ) -> DotAddRequest:
        scale = {}
        if self.scale is not None:
            if a_sf is None or b_sf is None:
                raise OperandError(f"{self.name} requires scale factors for both a and b")
            scale = dict(a_sf=tuple(a_sf), b_sf=tuple(b_sf), sf_fmt=self.scale.sf_fmt, block=self.scale.block)
        elif a_sf is not None or b_sf is not None:
            raise OperandError(f"{self.name} takes no scale factors")
        try:
            return DotAddRequest(c, tuple(a), tuple(b), self.a_fmt, self.b_fmt, self.c_fmt, self.d_fmt, **scale)
        except ValueError as e:
            raise OperandError(str(e)) from None


def _params(row: dict[str, str]) -> AlgorithmParams:
    def opt(key: str) -> int | None:
        return int(row[key]) if row[key] else None

    return AlgorithmParams(
        Algorithm(row["algorithm"]),
        F=opt("F"),
        G=opt("G"),
        round_bit=opt("round_bit") or 23,
    )


@lru_cache(maxsize=None)
def load_catalog() -> tuple[InstructionDescriptor, ...]:
    text = resources.files("mmaemu").joinpath("data/instructions.tsv").read_text()
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    out = []
    for row in csv.DictReader(lines, delimiter="\t"):
        scale = ScaleSpec(FormatId(row["sf_fmt"]), int(row["S"])) if row["sf_fmt"] else None
        out.append(
            InstructionDescriptor(
                name=row["name"],
                arch=Architecture(row["arch"]),
                M=int(row["M"]),
                N=int(row["N"]),
                K=int(row["K"]),
                a_fmt=FormatId(row["a"]),
                b_fmt=FormatId(row["b"]),
                c_fmt=FormatId(row["c"]),
                d_fmt=FormatId(row["d"]),
                params=_params(row),
                scale=scale,
                aliases=tuple(x for x in row["aliases"].split(",") if x),
            )
        )
    return tuple(out)


@lru_cache(maxsize=None)
def _index() -> dict[tuple[Architecture, str], InstructionDescriptor]:
    idx = {}
    for d in load_catalog():
        for n in (d.name, *d.aliases):
            idx[d.arch, n] = d
    return idx


HYPOTHETICAL_RZ_SUFFIX = "_rz"


def hypothetical_rz(desc: InstructionDescriptor) -> InstructionDescriptor:
    """The round-down family instruction with every round-down replaced by RZ."""
    if desc.algorithm.inner not in (Algorithm.FDRDA, Algorithm.GFDRDA):
        raise ValueError(f"{desc.name} does not round down")
    return replace(
        desc,
        name=desc.name + HYPOTHETICAL_RZ_SUFFIX,
        params=replace(desc.params, down_mode=RoundingMode.RZ),
        aliases=(),
        hypothetical=True,
    )


def lookup(arch: Architecture | str, name: str) -> InstructionDescriptor:
    """Find an instruction; ``<mfma>_rz`` names resolve to the hypothetical RZ variant."""
    try:
        arch = Architecture(arch)
    except ValueError:
        raise InstructionNotFound(str(arch), name, difflib.get_close_matches(str(arch), [a.value for a in Architecture])) from None
    idx = _index()
    if (arch, name) in idx:
        return idx[arch, name]
    if name.endswith(HYPOTHETICAL_RZ_SUFFIX) and (arch, name[: -len(HYPOTHETICAL_RZ_SUFFIX)]) in idx:
        base = idx[arch, name[: -len(HYPOTHETICAL_RZ_SUFFIX)]]
        if base.algorithm.inner in (Algorithm.FDRDA, Algorithm.GFDRDA):
            return hypothetical_rz(base)
    here = [n for (a, n) in idx if a is arch]
    everywhere = sorted({n for (_, n) in idx})
    suggestions = difflib.get_close_matches(name, here, n=3) or difflib.get_close_matches(name, everywhere, n=3)
    raise InstructionNotFound(arch.value, name, suggestions)


def instructions(arch: Architecture | str | None = None) -> list[InstructionDescriptor]:
    cat = load_catalog()
    if arch is None:
        return list(cat)
    arch = Architecture(arch)
    return [d for d in cat if d.arch is arch]


def _check_formats(desc: InstructionDescriptor, req: DotAddRequest) -> None:
    for op, got, want in (
        ("a", req.a_fmt, desc.a_fmt),
        ("b", req.b_fmt, desc.b_fmt),
        ("c", req.c_fmt, desc.c_fmt),
        ("d", req.d_fmt, desc.d_fmt),
    ):
        if got is not want:
            raise OperandError(f"operand {op} of {desc.name} must be {want}, got {got}")
    if req.K != desc.K:
        raise OperandError(f"{desc.name} has K={desc.K}, got {req.K} elements in a and b")
    if (req.a_sf is None) != (desc.scale is None):
        raise OperandError(
            f"{desc.name} requires scale factors" if desc.scale else f"{desc.name} takes no scale factors"
        )
    if desc.scale and (req.sf_fmt is not desc.scale.sf_fmt or req.block != desc.scale.block):
        raise OperandError(f"scale factors of {desc.name} must be {desc.scale.sf_fmt} with block {desc.scale.block}")


def dot_add(desc: InstructionDescriptor, req: DotAddRequest) -> int:
    """One output element ``d = c + sum_k a_k b_k`` through the instruction's arithmetic."""
    _check_formats(desc, req)
    req = replace(
        req,
        a=tuple(fixup(x, req.a_fmt) for x in req.a),
        b=tuple(fixup(x, req.b_fmt) for x in req.b),
        a_sf=None if req.a_sf is None else tuple(fixup(x, req.sf_fmt) for x in req.a_sf),
        b_sf=None if req.b_sf is None else tuple(fixup(x, req.sf_fmt) for x in req.b_sf),
    )
    return run(desc.params, req)


def _expect(m: MatrixBuffer | None, name: str, fmt: FormatId, rows: int, cols: int) -> MatrixBuffer:
    if m is None:
        raise OperandError(f"missing operand {name}")
    if m.fmt is not fmt:
        raise OperandError(f"operand {name} must be {fmt}, got {m.fmt}")
    if (m.rows, m.cols) != (rows, cols):
        raise OperandError(f"operand {name} must be {rows}x{cols}, got {m.rows}x{m.cols}")
    return m


def check_shape(desc: InstructionDescriptor, M: int, N: int) -> None:
    if desc.flexible_mn:
        if M <= 0 or N <= 0 or M % desc.M or N % desc.N:
            raise OperandError(f"{desc.name} needs M a multiple of {desc.M} and N a multiple of {desc.N}")
    elif (M, N) != (desc.M, desc.N):
        raise OperandError(f"{desc.name} computes {desc.M}x{desc.N} outputs, got {M}x{N}")


def matmul(
    desc: InstructionDescriptor,
    A: MatrixBuffer,
    B: MatrixBuffer,
    C: MatrixBuffer,
    A_sf: MatrixBuffer | None = None,
    B_sf: MatrixBuffer | None = None,
) -> MatrixBuffer:
    """``D = A x B + C`` with each element an independent dot-add."""
    M, N = C.rows, C.cols
    check_shape(desc, M, N)
    _expect(A, "A", desc.a_fmt, M, desc.K)
    _expect(B, "B", desc.b_fmt, desc.K, N)
    _expect(C, "C", desc.c_fmt, M, N)
    if desc.scale is not None:
        nb = desc.K // desc.scale.block
        A_sf = _expect(A_sf, "A_sf (scale factors)", desc.scale.sf_fmt, M, nb)
        B_sf = _expect(B_sf, "B_sf (scale factors)", desc.scale.sf_fmt, nb, N)
    elif A_sf is not None or B_sf is not None:
        raise OperandError(f"{desc.name} takes no scale factors")

    cols = [B.col(j) for j in range(N)]
    sf_cols = [B_sf.col(j) for j in range(N)] if B_sf is not None else None
    out = []
    for i in range(M):
        a = A.row(i)
        a_sf = A_sf.row(i) if A_sf is not None else None
        for j in range(N):
            req = desc.request(C[i, j], a, cols[j], a_sf, sf_cols[j] if sf_cols else None)
            out.append(dot_add(desc, req))
    return MatrixBuffer(desc.d_fmt, M, N, tuple(out))

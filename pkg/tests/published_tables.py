"""Hand transcription of the published per-architecture algorithm tables.

Kept independent of ``data/instructions.tsv`` so the catalog can be audited
against it.  Cells read ``SFMA``, ``GPS4`` (G=4), ``FDA25`` (F=25),
``CoFDA13``, ``GDFS``, ``FDRDA`` ...; ``None`` marks N/A.  Name patterns use
``{f8}`` (E4M3, E5M2), ``{f8f6f4}`` (adds E2M3, E3M2, E2M1) and ``{out}``
(F32, F16); a trailing ``*`` matches every catalog name with that prefix.
"""

from __future__ import annotations

import itertools
import re

from mmaemu.algorithms import Algorithm
from mmaemu.catalog import InstructionDescriptor, InstructionNotFound, instructions, lookup

NV = ("Volta", "Turing", "Ampere", "AdaLovelace", "Hopper", "Blackwell", "RTXBlackwell")
AMD = ("CDNA2", "CDNA3")
_ = None

NVIDIA_ROWS = [
    (("HMMA.884.F32.F32", "HMMA.884.F32.F16", "HMMA.884.F16.F16"), ("FDA23", "FDA24", _, _, _, _, _)),
    (("HMMA.1688.F32", "HMMA.1688.F16"), (_, "FDA24", "FDA24", "FDA24", "FDA25", "FDA25", "FDA25")),
    (("DMMA.884", "DMMA.8x8x4"), (_, _, "SFMA", "SFMA", "SFMA", "SFMA", "SFMA")),
    (
        ("HMMA.1688.F32.TF32", "HMMA.16816.F32", "HMMA.16816.F16", "HMMA.16816.F32.BF16"),
        (_, _, "CoFDA24", "CoFDA24", "FDA25", "FDA25", "FDA25"),
    ),
    (("HMMA.1684.F32.TF32", "HMMA.1688.F32.BF16"), (_, _, "FDA24", "FDA24", "FDA25", "FDA25", "FDA25")),
    (("QMMA.16832.{out}.{f8}.{f8}",), (_, _, _, "CoFDA13", _, _, "FDA25")),
    (("QMMA.16816.{out}.{f8}.{f8}",), (_, _, _, "FDA13", _, _, "FDA25")),
    (("DMMA.16x8x16", "DMMA.16x8x8", "DMMA.16x8x4"), (_, _, _, _, "SFMA", _, _)),
    (
        ("HGMMA.64x8x8.F32.TF32", "HGMMA.64x8x16.F32", "HGMMA.64x8x16.F16", "HGMMA.64x8x16.F32.BF16"),
        (_, _, _, _, "FDA25", _, _),
    ),
    (("QGMMA.64x8x32.{out}.{f8}.{f8}",), (_, _, _, _, "FDA13", _, _)),
    (("UTCHMMA*", "UTCQMMA*"), (_, _, _, _, _, "FDA25", _)),
    (("UTCOMMA*",), (_, _, _, _, _, "GDFS", _)),
    (
        ("QMMA.16832.{out}.{f8f6f4}.{f8f6f4}", "QMMA.SF.16832.F32.{f8f6f4}.{f8f6f4}.E8"),
        (_, _, _, _, _, _, "FDA25"),
    ),
    (
        ("OMMA.SF.16864.F32.E2M1.E2M1.E8", "OMMA.SF.16864.F32.E2M1.E2M1.UE4M3.4X"),
        (_, _, _, _, _, _, "GDFS"),
    ),
]

_FP8 = ("bf8_bf8", "bf8_fp8", "fp8_bf8", "fp8_fp8")
AMD_ROWS = [
    (
        (
            "f64_16x16x4_f64", "f64_4x4x4_4b_f64", "f32_32x32x1_2b_f32", "f32_16x16x1_4b_f32",
            "f32_4x4x1_16b_f32", "f32_32x32x2_f32", "f32_16x16x4_f32",
        ),
        ("SFMA", "SFMA"),
    ),
    (("f32_16x16x8_xf32",), (_, "CoFDRDA")),
    (("f32_32x32x4_xf32",), (_, "FDRDA")),
    (("f32_32x32x4_2b_f16", "f32_16x16x4_4b_f16", "f32_4x4x4_16b_f16", "f32_32x32x8_f16"), ("GPS4", "FDRDA")),
    (("f32_16x16x16_f16",), ("GPS4", "CoFDRDA")),
    (("f32_32x32x2bf16", "f32_16x16x2bf16", "f32_4x4x2bf16", "f32_32x32x4bf16", "f32_16x16x8bf16"), ("GPS2", _)),
    (("f32_32x32x4_2b_bf16", "f32_16x16x4_4b_bf16", "f32_4x4x4_16b_bf16", "f32_32x32x8_bf16"), ("GPS4", "FDRDA")),
    (("f32_16x16x16_bf16",), ("GPS4", "CoFDRDA")),
    (tuple(f"f32_16x16x32_{t}" for t in _FP8), (_, "CoGFDRDA")),
    (tuple(f"f32_32x32x16_{t}" for t in _FP8), (_, "GFDRDA")),
]

_CHOICES = {
    "out": ("F32", "F16"),
    "f8": ("E4M3", "E5M2"),
    "f8f6f4": ("E4M3", "E5M2", "E2M3", "E3M2", "E2M1"),
}


def expand(pattern: str) -> list[str]:
    keys = re.findall(r"\{(\w+)\}", pattern)
    if not keys:
        return [pattern]
    out = []
    for combo in itertools.product(*(_CHOICES[k] for k in keys)):
        it = iter(combo)
        out.append(re.sub(r"\{\w+\}", lambda _m: next(it), pattern))
    return out


def parse_cell(cell: str) -> tuple[Algorithm, int | None, int | None]:
    m = re.fullmatch(r"([A-Za-z]+?)(\d*)", cell)
    alg, n = Algorithm(m.group(1)), int(m.group(2)) if m.group(2) else None
    if alg is Algorithm.GPS:
        return alg, None, n
    return alg, n, None


def expected_cells() -> dict[tuple[str, str], list[str | None]]:
    """(arch, name or ``prefix*``) -> every cell the tables give it."""
    cells: dict[tuple[str, str], list[str | None]] = {}
    for archs, rows, prefix in ((NV, NVIDIA_ROWS, ""), (AMD, AMD_ROWS, "v_mfma_")):
        for patterns, row in rows:
            assert len(row) == len(archs)
            for pat in patterns:
                for name in expand(prefix + pat):
                    for arch, cell in zip(archs, row):
                        cells.setdefault((arch, name), []).append(cell)
    return cells


def _matches(d: InstructionDescriptor, params: tuple) -> bool:
    alg, F, G = params
    return d.params.algorithm is alg and d.params.F == F and d.params.G == G


def audit() -> list[str]:
    """Every disagreement between the transcription and the catalog (empty when consistent)."""
    problems: list[str] = []
    covered: set[tuple[str, str]] = set()
    for (arch, name), cells in expected_cells().items():
        applicable = {c for c in cells if c is not None}
        if len(applicable) > 1:
            problems.append(f"{arch} {name}: conflicting table cells {sorted(applicable)}")
            continue
        if name.endswith("*"):
            family = [d for d in instructions(arch) if d.name.startswith(name[:-1])]
            if applicable and not family:
                problems.append(f"{arch} {name}: no catalog entries")
            if not applicable and family:
                problems.append(f"{arch} {name}: table says N/A, catalog has {len(family)}")
            for d in family if applicable else ():
                covered.add((arch, d.name))
                if not _matches(d, parse_cell(next(iter(applicable)))):
                    problems.append(f"{arch} {d.name}: catalog {d.params}, table {applicable}")
            continue
        try:
            d = lookup(arch, name)
        except InstructionNotFound:
            if applicable:
                problems.append(f"{arch} {name}: missing from catalog")
            continue
        if not applicable:
            problems.append(f"{arch} {name}: table says N/A but catalog has {d.name}")
            continue
        covered.add((arch, d.name))
        if not _matches(d, parse_cell(next(iter(applicable)))):
            problems.append(f"{arch} {name}: catalog {d.params}, table {applicable.pop()}")
    for d in instructions():
        if (d.arch.value, d.name) not in covered:
            problems.append(f"{d.arch} {d.name}: in catalog but not in the tables")
    return problems

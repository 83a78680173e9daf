"""Numerical experiments on the round-down matrix core path.

``worked_case`` reproduces the single crafted input on which round-down
alignment of c turns a result near zero into -0.25.  ``bias_experiment``
measures the deviation of the round-down instruction and its hypothetical
round-toward-zero twin from an FP64 reference over Gaussian inputs.

Random numbers come from numpy's PCG64 generator (``numpy.random.Generator``
seeded with the 64-bit seed); Gaussians are produced by the Box-Muller
transform from its uniform doubles, so outputs are reproducible from the
seed alone.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .catalog import Architecture, InstructionDescriptor, dot_add, hypothetical_rz, lookup
from .formats import FormatId, decode, encode

BIAS_ARCH = Architecture.CDNA3
BIAS_INSTRUCTION = "v_mfma_f32_32x32x8_f16"
TILE = 32  # output tile is TILE x TILE, one instruction's worth
AB_SCALE = 1000.0
CSV_COLUMNS = ("row", "col", "d_rd_hex", "d_rz_hex", "d_real_hex", "delta_rd", "delta_rz")
HIST_BINS = 20


def _pair() -> tuple[InstructionDescriptor, InstructionDescriptor]:
    real = lookup(BIAS_ARCH, BIAS_INSTRUCTION)
    return real, hypothetical_rz(real)


@dataclass(frozen=True)
class WorkedCase:
    c: int
    a: tuple[int, ...]
    b: tuple[int, ...]
    d_rd: int
    d_rz: int

    @property
    def exact(self) -> float:
        return sum(decode(x, FormatId.FP16).value * decode(y, FormatId.FP16).value for x, y in zip(self.a, self.b)) + float(
            decode(self.c, FormatId.FP32).value
        )


def worked_case() -> WorkedCase:
    """a0 = a1 = b0 = 2048, b1 = -2048, c = FP32(-1e-6), all other inputs zero."""
    real, rz = _pair()
    h = FormatId.FP16
    a = [encode(2048, h), encode(2048, h)] + [0] * (real.K - 2)
    b = [encode(2048, h), encode(-2048, h)] + [0] * (real.K - 2)
    c = int(np.array(-0.000001, dtype=np.float32).view(np.uint32))
    d_rd = dot_add(real, real.request(c, a, b))
    d_rz = dot_add(rz, rz.request(c, a, b))
    return WorkedCase(c, tuple(a), tuple(b), d_rd, d_rz)


def _gaussian(rng: np.random.Generator, n: int) -> np.ndarray:
    """``n`` standard normal samples by Box-Muller (both outputs of each pair used)."""
    m = (n + 1) // 2
    u1 = 1.0 - rng.random(m)  # (0, 1]: log stays finite
    u2 = rng.random(m)
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.concatenate([r * np.cos(2 * math.pi * u2), r * np.sin(2 * math.pi * u2)])
    return z[:n]


@dataclass(frozen=True)
class DeltaRecord:
    row: int
    col: int
    d_rd: int
    d_rz: int
    d_real: int

    @property
    def delta_rd(self) -> float:
        return _f32(self.d_rd) - _f64(self.d_real)

    @property
    def delta_rz(self) -> float:
        return _f32(self.d_rz) - _f64(self.d_real)

    def csv_row(self) -> tuple:
        return (
            self.row,
            self.col,
            f"{self.d_rd:08x}",
            f"{self.d_rz:08x}",
            f"{self.d_real:016x}",
            repr(self.delta_rd),
            repr(self.delta_rz),
        )


def _f32(bits: int) -> float:
    return float(np.array(bits, dtype=np.uint32).view(np.float32))


def _f64(bits: int) -> float:
    return float(np.array(bits, dtype=np.uint64).view(np.float64))


def fp64_reference(c: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``d = c; d = fma(a_k, b_k, d)`` in FP64 for k = 0..K-1, vectorized over rows.

    The FP16 products are exact in FP64, so each FMA equals an FP64 add of
    the exact product.
    """
    d = c.astype(np.float64)
    for k in range(a.shape[-1]):
        d = d + a[..., k].astype(np.float64) * b[..., k].astype(np.float64)
    return d


def iter_records(samples: int, seed: int) -> Iterator[DeltaRecord]:
    """Per-element records from consecutive TILE x TILE instruction tiles.

    Records are numbered by their row in the stacked output (tile t covers
    rows ``t*TILE .. t*TILE + TILE - 1``).
    """
    real, rz = _pair()
    rng = np.random.Generator(np.random.PCG64(seed))
    K = real.K
    done = 0
    tile = 0
    while done < samples:
        A = (AB_SCALE * _gaussian(rng, TILE * K)).astype(np.float16).reshape(TILE, K)
        B = (AB_SCALE * _gaussian(rng, K * TILE)).astype(np.float16).reshape(K, TILE)
        C = _gaussian(rng, TILE * TILE).astype(np.float32).reshape(TILE, TILE)
        Ab, Bb, Cb = A.view(np.uint16), B.view(np.uint16), C.view(np.uint32)
        for i in range(TILE):
            a = [int(x) for x in Ab[i]]
            ref = fp64_reference(C[i], np.broadcast_to(A[i], (TILE, K)), B.T).view(np.uint64)
            for j in range(TILE):
                if done == samples:
                    return
                b = [int(x) for x in Bb[:, j]]
                c = int(Cb[i, j])
                yield DeltaRecord(
                    tile * TILE + i,
                    j,
                    dot_add(real, real.request(c, a, b)),
                    dot_add(rz, rz.request(c, a, b)),
                    int(ref[j]),
                )
                done += 1
        tile += 1


@dataclass
class BiasSummary:
    count: int
    mean_rd: float | None = None
    mean_rz: float | None = None
    median_rd: float | None = None
    median_rz: float | None = None
    bin_edges: list[float] = field(default_factory=list)
    hist_rd: list[int] = field(default_factory=list)
    hist_rz: list[int] = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return self.count == 0

    def to_dict(self) -> dict:
        d = {"count": self.count, "empty": self.empty}
        if not self.empty:
            d.update(
                mean_rd=self.mean_rd,
                mean_rz=self.mean_rz,
                median_rd=self.median_rd,
                median_rz=self.median_rz,
                histogram={"edges": self.bin_edges, "rd": self.hist_rd, "rz": self.hist_rz},
            )
        return d

    def to_text(self) -> str:
        if self.empty:
            return "samples = 0 (empty)\n"
        lines = [
            f"samples = {self.count}",
            f"mean delta_rd = {self.mean_rd!r}",
            f"mean delta_rz = {self.mean_rz!r}",
            f"median delta_rd = {self.median_rd!r}",
            f"median delta_rz = {self.median_rz!r}",
            "histogram (lower edge: rd rz)",
        ]
        for lo, n_rd, n_rz in zip(self.bin_edges, self.hist_rd, self.hist_rz):
            lines.append(f"  {lo:+.6g}: {n_rd} {n_rz}")
        return "\n".join(lines) + "\n"


def summarize(records: list[DeltaRecord]) -> BiasSummary:
    if not records:
        return BiasSummary(0)
    rd = np.array([r.delta_rd for r in records])
    rz = np.array([r.delta_rz for r in records])
    lo, hi = float(min(rd.min(), rz.min())), float(max(rd.max(), rz.max()))
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, HIST_BINS + 1)
    return BiasSummary(
        count=len(records),
        mean_rd=float(rd.mean()),
        mean_rz=float(rz.mean()),
        median_rd=float(np.median(rd)),
        median_rz=float(np.median(rz)),
        bin_edges=[float(e) for e in edges],
        hist_rd=[int(n) for n in np.histogram(rd, edges)[0]],
        hist_rz=[int(n) for n in np.histogram(rz, edges)[0]],
    )


@dataclass
class BiasResult:
    records: list[DeltaRecord]
    summary: BiasSummary

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.records:
            w.writerow(r.csv_row())
        return buf.getvalue()


def bias_experiment(samples: int, seed: int = 0) -> BiasResult:
    if samples < 0:
        raise ValueError("samples must be non-negative")
    records = list(iter_records(samples, seed))
    return BiasResult(records, summarize(records))

"""The nine dot-add algorithms.

Each algorithm is a pure function of a :class:`DotAddRequest` (bit patterns
plus their formats) returning the output bit pattern ``d`` of
``d = c + sum_k a_k * b_k``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Callable, Sequence

from .exact import (
    AlignedFixed,
    ExactScaled,
    RoundingMode,
    align_round,
    exact_mul,
    fixed_sum,
    ieee_add,
    ieee_fma,
    ieee_mul,
    normalize_fp16,
    normalize_fp32,
    to_ieee,
)
from .formats import DecodedNumber, FormatId, NumClass, decode, encode, infinity, quiet_nan, spec_of

FP32 = FormatId.FP32
FP16 = FormatId.FP16

CANONICAL_NAN = {FP32: 0x7FFFFFFF, FP16: 0x7FFF}


class Algorithm(str, enum.Enum):
    SFMA = "SFMA"
    GPS = "GPS"
    FDA = "FDA"
    CoFDA = "CoFDA"
    GDFS = "GDFS"
    FDRDA = "FDRDA"
    CoFDRDA = "CoFDRDA"
    GFDRDA = "GFDRDA"
    CoGFDRDA = "CoGFDRDA"

    def __str__(self) -> str:
        return self.value

    @property
    def chained(self) -> bool:
        return self.value.startswith("Co")

    @property
    def inner(self) -> "Algorithm":
        return Algorithm(self.value[2:]) if self.chained else self


@dataclass(frozen=True)
class AlgorithmParams:
    algorithm: Algorithm
    F: int | None = None
    G: int | None = None
    # FP32-output rounding position of the FDA family (13 for some FP8 paths).
    round_bit: int = 23
    # Rounding used where the round-down family rounds down; RZ gives the
    # hypothetical symmetric variant.
    down_mode: RoundingMode = RoundingMode.RD

    def __str__(self) -> str:
        if self.algorithm is Algorithm.GPS:
            return f"GPS(G={self.G})"
        if self.algorithm.inner is Algorithm.FDA:
            return f"{self.algorithm}(F={self.F})"
        return str(self.algorithm)


@dataclass(frozen=True)
class DotAddRequest:
    c: int
    a: tuple[int, ...]
    b: tuple[int, ...]
    a_fmt: FormatId
    b_fmt: FormatId
    c_fmt: FormatId
    d_fmt: FormatId
    a_sf: tuple[int, ...] | None = None
    b_sf: tuple[int, ...] | None = None
    sf_fmt: FormatId | None = None
    block: int | None = None

    def __post_init__(self) -> None:
        if len(self.a) != len(self.b):
            raise ValueError(f"a has {len(self.a)} elements but b has {len(self.b)}")
        if (self.a_sf is None) != (self.b_sf is None):
            raise ValueError("scale factors must be given for both a and b")
        if self.a_sf is not None:
            if self.block is None or self.sf_fmt is None:
                raise ValueError("scaled request needs block size and scale format")
            n = -(-len(self.a) // self.block)
            if len(self.a_sf) != n or len(self.b_sf) != n:
                raise ValueError(f"expected {n} scale factors per operand")

    @property
    def K(self) -> int:
        return len(self.a)

    def split(self, lo: int, hi: int, c: int | None = None, c_fmt: FormatId | None = None) -> "DotAddRequest":
        a_sf = b_sf = None
        if self.a_sf is not None:
            if lo % self.block or (hi - lo) % self.block:
                raise ValueError("chain split must fall on a scale block boundary")
            a_sf = self.a_sf[lo // self.block : hi // self.block]
            b_sf = self.b_sf[lo // self.block : hi // self.block]
        return replace(
            self,
            c=self.c if c is None else c,
            c_fmt=self.c_fmt if c_fmt is None else c_fmt,
            a=self.a[lo:hi],
            b=self.b[lo:hi],
            a_sf=a_sf,
            b_sf=b_sf,
        )


def make_request(
    c: int,
    a: Sequence[int],
    b: Sequence[int],
    a_fmt: FormatId | str,
    b_fmt: FormatId | str | None = None,
    c_fmt: FormatId | str = FP32,
    d_fmt: FormatId | str | None = None,
    **scale,
) -> DotAddRequest:
    a_fmt = FormatId(a_fmt)
    return DotAddRequest(
        c, tuple(a), tuple(b), a_fmt, FormatId(b_fmt or a_fmt), FormatId(c_fmt), FormatId(d_fmt or c_fmt),
        **scale,
    )


# -- helpers ------------------------------------------------------------------


def _decode_all(req: DotAddRequest) -> tuple[DecodedNumber, list[DecodedNumber], list[DecodedNumber]]:
    return (
        decode(req.c, req.c_fmt),
        [decode(x, req.a_fmt) for x in req.a],
        [decode(x, req.b_fmt) for x in req.b],
    )


def _scale_of(req: DotAddRequest, k: int) -> tuple[DecodedNumber, DecodedNumber] | None:
    if req.a_sf is None:
        return None
    i = k // req.block
    return decode(req.a_sf[i], req.sf_fmt), decode(req.b_sf[i], req.sf_fmt)


def _scales_have_nan(req: DotAddRequest) -> bool:
    if req.a_sf is None:
        return False
    return any(decode(x, req.sf_fmt).is_nan for x in (*req.a_sf, *req.b_sf))


def _special_inputs(c: DecodedNumber, a: list[DecodedNumber], b: list[DecodedNumber]) -> str | int | None:
    """Shared input special-value screen.

    Returns ``"nan"``, ``+1``/``-1`` for a single infinity sign, or None.
    """
    if c.is_nan or any(x.is_nan for x in a) or any(x.is_nan for x in b):
        return "nan"
    signs = set()
    for x, y in zip(a, b):
        if x.is_inf or y.is_inf:
            if x.is_zero or y.is_zero:
                return "nan"
            signs.add(x.sign * y.sign)
    if c.is_inf:
        signs.add(c.sign)
    if len(signs) > 1:
        return "nan"
    if signs:
        return signs.pop()
    return None


def _scaled_product(x: DecodedNumber, y: DecodedNumber, sf: tuple[DecodedNumber, DecodedNumber] | None) -> ExactScaled:
    p = exact_mul(x, y)
    if sf is None:
        return p
    sa, sb = sf
    return ExactScaled(p.sign, p.sig * sa.sig * sb.sig, p.frac + sa.frac + sb.frac, p.exp + sa.exp + sb.exp)


# -- SFMA ---------------------------------------------------------------------


def sfma(req: DotAddRequest) -> int:
    """Sequential chain of IEEE fused multiply-adds starting from c."""
    fmt = req.d_fmt
    d = req.c
    for x, y in zip(req.a, req.b):
        d = ieee_fma(x, y, d, fmt)
    return d


# -- GPS ----------------------------------------------------------------------

_F32_MIN_NORMAL_EXP = -126


def _widen(bits: int, src: FormatId, dst: FormatId = FP32) -> int:
    d = decode(bits, src)
    if d.is_nan:
        return quiet_nan(dst)
    if d.is_inf:
        return infinity(dst, d.sign < 0)
    if d.is_zero:
        return encode(0, dst, negative_zero=d.sign < 0)
    return encode(d.value, dst)


def _tiny(bits: int, fmt: FormatId) -> bool:
    d = decode(bits, fmt)
    return d.cls in (NumClass.ZERO, NumClass.SUBNORMAL)


def _flush_positive(bits: int, fmt: FormatId) -> int:
    return 0 if _tiny(bits, fmt) else bits


def _flush_signed(bits: int) -> int:
    if _tiny(bits, FP32):
        return bits & 0x80000000
    return bits


def _pairwise(p: Sequence[int]) -> int:
    if len(p) == 1:
        return p[0]
    h = len(p) // 2
    g = ieee_add(_pairwise(p[:h]), _pairwise(p[h:]), FP32)
    return _flush_signed(g)


def gps(req: DotAddRequest, G: int) -> int:
    """FP32 products, pairwise group sums of G, then sequential accumulation into c.

    Subnormal inputs become +0; subnormal products and sums flush to a
    signed zero.
    """
    if req.K % G:
        raise ValueError(f"K={req.K} is not a multiple of G={G}")
    prods = []
    for x, y in zip(req.a, req.b):
        x32 = _widen(_flush_positive(x, req.a_fmt), req.a_fmt)
        y32 = _widen(_flush_positive(y, req.b_fmt), req.b_fmt)
        prods.append(_flush_signed(ieee_mul(x32, y32, FP32)))
    d = _flush_positive(_widen(req.c, req.c_fmt), FP32)
    for k in range(0, req.K, G):
        d = _flush_signed(ieee_add(d, _pairwise(prods[k : k + G]), FP32))
    return d


# -- FDA ----------------------------------------------------------------------


def _emit(s: AlignedFixed, d_fmt: FormatId, round_bit: int) -> int:
    if d_fmt is FP16:
        return normalize_fp16(s)
    return normalize_fp32(s, round_bit, RoundingMode.RZ)


def fda(req: DotAddRequest, F: int, round_bit: int = 23) -> int:
    """Fused dot-add: exact products, RZ alignment to the largest exponent, one normalization."""
    d_fmt = req.d_fmt
    c, a, b = _decode_all(req)
    if _scales_have_nan(req):
        return CANONICAL_NAN[d_fmt]
    special = _special_inputs(c, a, b)
    if special == "nan":
        return CANONICAL_NAN[d_fmt]
    if special is not None:
        return infinity(d_fmt, special < 0)

    terms = [ExactScaled.from_decoded(c)]
    terms += [_scaled_product(x, y, _scale_of(req, k)) for k, (x, y) in enumerate(zip(a, b))]
    # zero summands carry no exponent into the alignment
    terms = [t for t in terms if not t.is_zero]
    if not terms:
        return 0
    e_max = max(t.exp for t in terms)
    s = fixed_sum(align_round(t, e_max, F, RoundingMode.RZ) for t in terms)
    return _emit(s, d_fmt, round_bit)


def chain2(inner: Callable[[DotAddRequest], int], req: DotAddRequest) -> int:
    """Two chained inner operations over the halves of K, through d's format."""
    if req.K % 2:
        raise ValueError("chained operation needs an even K")
    h = req.K // 2
    d1 = inner(req.split(0, h))
    return inner(req.split(h, req.K, c=d1, c_fmt=req.d_fmt))


# -- GDFS ---------------------------------------------------------------------

GDFS_GROUP = 16
GDFS_F = 35


def gdfs(req: DotAddRequest) -> int:
    """FP4 group dot products of 16 scaled by block factors, then a fused sum with c."""
    if req.a_sf is None:
        raise ValueError("GDFS requires scale factors")
    if req.K % GDFS_GROUP:
        raise ValueError(f"K={req.K} is not a multiple of {GDFS_GROUP}")
    c = decode(req.c, req.c_fmt)
    if c.is_nan or _scales_have_nan(req):
        return CANONICAL_NAN[FP32]
    if c.is_inf:
        return req.c

    terms = [] if c.is_zero else [ExactScaled.from_decoded(c)]
    for g in range(req.K // GDFS_GROUP):
        lo = g * GDFS_GROUP
        sigma = 0  # units of 2**-64
        live = False
        for k in range(lo, lo + GDFS_GROUP):
            p = exact_mul(decode(req.a[k], req.a_fmt), decode(req.b[k], req.b_fmt))
            live |= not p.is_zero
            sigma += p.signed_sig << (p.lsb_exponent + 64)
        if not live:
            continue
        # a group whose products cancel still takes part in the alignment
        sa, sb = _scale_of(req, lo)
        sign = -1 if sigma < 0 else 1
        terms.append(
            ExactScaled(sign, abs(sigma) * sa.sig * sb.sig, 64 + sa.frac + sb.frac, sa.exp + sb.exp)
        )
    if not terms:
        return 0
    e_max = max(t.exp for t in terms)
    s = fixed_sum(align_round(t, e_max, GDFS_F, RoundingMode.RZ) for t in terms)
    return normalize_fp32(s, 23, RoundingMode.RZ)


# -- FDRDA / GFDRDA -------------------------------------------------------------

FDRDA_F = 24
FDRDA_DOT_BITS = 31
FDRDA_C_BITS = 24
GFDRDA_C_WINDOW = 25
_AMD_NAN = 0x7FC00000


def _products_with_overflow(req, a, b) -> list[ExactScaled] | str | int:
    prods = []
    signs = set()
    for k, (x, y) in enumerate(zip(a, b)):
        p = _scaled_product(x, y, _scale_of(req, k))
        if p.sig and p.sig.bit_length() - 1 + p.lsb_exponent >= 128:
            signs.add(p.sign)
        prods.append(p)
    if len(signs) > 1:
        return "nan"
    if signs:
        return signs.pop()
    return prods


def _fixed(v: AlignedFixed) -> ExactScaled:
    sign = -1 if v.value < 0 else 1
    return ExactScaled(sign, abs(v.value), v.F, v.e_ref)


def _add_c(
    dot: AlignedFixed | None,
    c: DecodedNumber,
    down: RoundingMode,
    c_mode: Callable[[int, int], RoundingMode],
) -> int:
    exps = ([] if dot is None else [dot.e_ref]) + ([] if c.is_zero else [c.exp])
    if not exps:
        return 0
    e_max = max(exps)
    total = 0
    if dot is not None:
        total += align_round(_fixed(dot), e_max, FDRDA_DOT_BITS, down).value
    if not c.is_zero:
        sc = align_round(ExactScaled.from_decoded(c), e_max, FDRDA_C_BITS, c_mode(c.exp, e_max))
        total += sc.value << (FDRDA_DOT_BITS - FDRDA_C_BITS)
    if total == 0:
        return 0
    return to_ieee(total, e_max - FDRDA_DOT_BITS, FP32, RoundingMode.RNE)


def _round_down_prologue(req: DotAddRequest):
    c, a, b = _decode_all(req)
    special = _special_inputs(c, a, b)
    if special == "nan":
        return _AMD_NAN
    if special is not None:
        return infinity(FP32, special < 0)
    prods = _products_with_overflow(req, a, b)
    if prods == "nan":
        return _AMD_NAN
    if isinstance(prods, int):
        return infinity(FP32, prods < 0)
    return c, prods


def _dot(prods: Sequence[ExactScaled]) -> AlignedFixed | None:
    """Fused sum of the nonzero products at their largest exponent (None if all are zero)."""
    live = [p for p in prods if not p.is_zero]
    if not live:
        return None
    e = max(p.exp for p in live)
    return fixed_sum(align_round(p, e, FDRDA_F, RoundingMode.RZ) for p in live)


def fdrda(req: DotAddRequest, down: RoundingMode = RoundingMode.RD) -> int:
    """Fused dot of products (RZ), then c added after round-down alignment, RNE to FP32."""
    pre = _round_down_prologue(req)
    if isinstance(pre, int):
        return pre
    c, prods = pre
    return _add_c(_dot(prods), c, down, lambda e_c, e_max: down)


def gfdrda(req: DotAddRequest, down: RoundingMode = RoundingMode.RD) -> int:
    """Like FDRDA, but even and odd products form separate fused groups.

    A c far below the dot product (``e_c < e_max - 25``) is rounded toward
    zero instead of down.
    """
    pre = _round_down_prologue(req)
    if isinstance(pre, int):
        return pre
    c, prods = pre
    halves = [g for g in (_dot(prods[0::2]), _dot(prods[1::2])) if g is not None]
    dot = None
    if halves:
        e_dot = max(g.e_ref for g in halves)
        dot = fixed_sum(align_round(_fixed(g), e_dot, FDRDA_F, down) for g in halves)

    def c_mode(e_c: int, e_max: int) -> RoundingMode:
        return RoundingMode.RZ if e_c < e_max - GFDRDA_C_WINDOW else down

    return _add_c(dot, c, down, c_mode)


# -- dispatch -----------------------------------------------------------------


def inner_op(params: AlgorithmParams) -> Callable[[DotAddRequest], int]:
    alg = params.algorithm.inner
    if alg is Algorithm.SFMA:
        return sfma
    if alg is Algorithm.GPS:
        return lambda r: gps(r, params.G)
    if alg is Algorithm.FDA:
        return lambda r: fda(r, params.F, params.round_bit)
    if alg is Algorithm.GDFS:
        return gdfs
    if alg is Algorithm.FDRDA:
        return lambda r: fdrda(r, params.down_mode)
    if alg is Algorithm.GFDRDA:
        return lambda r: gfdrda(r, params.down_mode)
    raise ValueError(params.algorithm)


def run(params: AlgorithmParams, req: DotAddRequest) -> int:
    op = inner_op(params)
    if params.algorithm.chained:
        return chain2(op, req)
    return op(req)

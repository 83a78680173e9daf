"""Exact significand arithmetic shared by every dot-add algorithm.

Values are held as arbitrary-precision integers over power-of-two
denominators, so nothing is lost except in the explicitly named rounding
steps.  The rounding kernel supports the ten directed and nearest modes the
dissector can tell apart.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable

from .formats import DecodedNumber, FormatId, NumClass, decode, encode, encode_dyadic, infinity, quiet_nan, spec_of


class RoundingMode(str, enum.Enum):
    RU = "RU"  # toward +inf
    RD = "RD"  # toward -inf
    RZ = "RZ"  # toward zero
    RA = "RA"  # away from zero
    RNU = "RNU"  # nearest, ties up
    RND = "RND"  # nearest, ties down
    RNZ = "RNZ"  # nearest, ties toward zero
    RNA = "RNA"  # nearest, ties away
    RNE = "RNE"  # nearest, ties to even
    RNO = "RNO"  # nearest, ties to odd

    def __str__(self) -> str:
        return self.value

    @property
    def is_nearest(self) -> bool:
        return self.value.startswith("RN")


def shift_round(n: int, shift: int, mode: RoundingMode) -> int:
    """Round the signed integer ``n / 2**shift`` to an integer."""
    if shift <= 0:
        return n << -shift
    lower = n >> shift  # floor
    rem = n - (lower << shift)
    if rem == 0:
        return lower
    upper = lower + 1
    if mode is RoundingMode.RD:
        return lower
    if mode is RoundingMode.RU:
        return upper
    if mode is RoundingMode.RZ:
        return lower if n > 0 else upper
    if mode is RoundingMode.RA:
        return upper if n > 0 else lower
    half = 1 << (shift - 1)
    if rem < half:
        return lower
    if rem > half:
        return upper
    if mode is RoundingMode.RNU:
        return upper
    if mode is RoundingMode.RND:
        return lower
    if mode is RoundingMode.RNZ:
        return lower if n > 0 else upper
    if mode is RoundingMode.RNA:
        return upper if n > 0 else lower
    if mode is RoundingMode.RNE:
        return lower if lower % 2 == 0 else upper
    if mode is RoundingMode.RNO:
        return lower if lower % 2 == 1 else upper
    raise ValueError(mode)


@dataclass(frozen=True)
class ExactScaled:
    """``sign * (sig / 2**frac) * 2**exp`` with the significand unnormalized."""

    sign: int
    sig: int
    frac: int
    exp: int

    @property
    def signed_sig(self) -> int:
        return -self.sig if self.sign < 0 else self.sig

    @property
    def lsb_exponent(self) -> int:
        return self.exp - self.frac

    @property
    def value(self) -> Fraction:
        return self.sign * Fraction(self.sig) * Fraction(2) ** self.lsb_exponent

    @property
    def is_zero(self) -> bool:
        return self.sig == 0

    @classmethod
    def from_decoded(cls, d: DecodedNumber) -> "ExactScaled":
        if not d.is_finite:
            raise ValueError("special values have no significand")
        return cls(d.sign, d.sig, d.frac, d.exp)

    @classmethod
    def from_value(cls, v: Fraction | int) -> "ExactScaled":
        """Canonical form of a dyadic rational, normalized to 1 <= s < 2."""
        v = Fraction(v)
        if v.denominator & (v.denominator - 1):
            raise ValueError(f"{v} is not dyadic")
        if v == 0:
            return cls(1, 0, 0, 0)
        sign = -1 if v < 0 else 1
        num, den = abs(v.numerator), v.denominator
        k = den.bit_length() - 1
        e = num.bit_length() - 1 - k
        return cls(sign, num, num.bit_length() - 1, e)


@dataclass(frozen=True)
class AlignedFixed:
    """Signed integer ``value`` in units of ``2**(e_ref - F)``."""

    e_ref: int
    F: int
    value: int

    @property
    def exact(self) -> Fraction:
        return Fraction(self.value) * Fraction(2) ** (self.e_ref - self.F)


def exact_mul(a: DecodedNumber, b: DecodedNumber) -> ExactScaled:
    """Unnormalized exact product: significands multiply, exponents add."""
    return ExactScaled(a.sign * b.sign, a.sig * b.sig, a.frac + b.frac, a.exp + b.exp)


def align_round(v: ExactScaled, e_target: int, F: int, mode: RoundingMode = RoundingMode.RZ) -> AlignedFixed:
    """Shift ``v`` to exponent ``e_target`` keeping ``F`` fractional bits."""
    drop = (e_target - F) - v.lsb_exponent
    return AlignedFixed(e_target, F, shift_round(v.signed_sig, drop, mode))


def fixed_sum(terms: Iterable[AlignedFixed]) -> AlignedFixed:
    terms = list(terms)
    if not terms:
        raise ValueError("fixed_sum needs at least one term")
    e_ref, F = terms[0].e_ref, terms[0].F
    for t in terms:
        if (t.e_ref, t.F) != (e_ref, F):
            raise ValueError(f"mismatched alignment ({t.e_ref}, {t.F}) vs ({e_ref}, {F})")
    return AlignedFixed(e_ref, F, sum(t.value for t in terms))


def round_at(value: ExactScaled | Fraction, u: Fraction, mode: RoundingMode) -> ExactScaled:
    """Round to a multiple of the power of two ``u``."""
    if not isinstance(value, ExactScaled):
        value = ExactScaled.from_value(value)
    u = Fraction(u)
    if u <= 0 or u.numerator & (u.numerator - 1) or u.denominator & (u.denominator - 1):
        raise ValueError("u must be a positive power of two")
    ue = u.numerator.bit_length() - u.denominator.bit_length()
    q = shift_round(value.signed_sig, ue - value.lsb_exponent, mode)
    return ExactScaled.from_value(Fraction(q) * u)


def round_to_precision(n: int, lsb: int, p: int, emin: int, mode: RoundingMode) -> tuple[int, int]:
    """Round ``n * 2**lsb`` to ``p`` fractional significand bits.

    Exponents below ``emin`` use the subnormal quantum ``2**(emin - p)``.
    Returns the rounded value as ``(n', lsb')``; the result may carry into
    the next binade.
    """
    if n == 0:
        return 0, 0
    e = abs(n).bit_length() - 1 + lsb
    q = max(e, emin) - p
    return shift_round(n, q - lsb, mode), q


def _magnitude_cmp(n: int, lsb: int, limit: tuple[int, int]) -> int:
    """Sign of ``|n| * 2**lsb - m * 2**e`` for ``limit = (m, e)``."""
    m, e = limit
    n = abs(n)
    x, y = (n << (lsb - e), m) if lsb >= e else (n, m << (e - lsb))
    return (x > y) - (x < y)


def to_ieee(
    n: int,
    lsb: int,
    fmt: FormatId,
    mode: RoundingMode = RoundingMode.RNE,
    *,
    p: int | None = None,
    negative_zero: bool = False,
) -> int:
    """Round ``n * 2**lsb`` into an IEEE-style format.

    ``p`` overrides the number of kept fractional bits (results still land on
    the format's grid when ``p`` is smaller than its mantissa).  Overflow
    follows the mode: values that round past the largest finite become
    infinity for nearest modes and for directed modes pointing outward,
    otherwise they saturate.
    """
    fs = spec_of(fmt)
    if p is None:
        p = fs.mantissa_bits
    if n == 0:
        return encode(0, fmt, negative_zero=negative_zero)
    rn, rlsb = round_to_precision(n, lsb, p, fs.min_normal_exponent, mode)
    if rn == 0:
        return encode(0, fmt, negative_zero=n < 0)
    if _magnitude_cmp(rn, rlsb, fs.max_finite_dyadic) > 0:
        neg = rn < 0
        outward = mode.is_nearest or mode is RoundingMode.RA or (
            mode is (RoundingMode.RD if neg else RoundingMode.RU)
        )
        if outward:
            return infinity(fmt, neg)
        # largest value on the p-bit grid
        top = fs.max_biased_exponent - fs.bias
        big = Fraction((1 << (p + 1)) - 1, 1 << p) * Fraction(2) ** top
        return encode(-big if neg else big, fmt)
    return encode_dyadic(rn, rlsb, fmt)


def normalize_fp32(v: AlignedFixed, round_bit: int = 23, mode: RoundingMode = RoundingMode.RZ) -> int:
    """Emit FP32 from a fixed-point sum; |v| >= 2**128 becomes infinity.

    The significand is rounded at ``round_bit`` fractional bits.  An exact
    zero is emitted as +0.0.
    """
    n, lsb = v.value, v.e_ref - v.F
    if n == 0:
        return 0
    e = abs(n).bit_length() - 1 + lsb
    if e >= 128:
        return infinity(FormatId.FP32, n < 0)
    return to_ieee(n, lsb, FormatId.FP32, mode, p=round_bit)


FP16_OVERFLOW = (4095, 4)  # 65520 = 4095 * 2**4


def normalize_fp16(v: AlignedFixed) -> int:
    """Emit FP16 from a fixed-point sum: RNE at 10 bits, >= 65520 is infinity."""
    n, lsb = v.value, v.e_ref - v.F
    if n == 0:
        return 0
    rn, rlsb = round_to_precision(n, lsb, 10, -14, RoundingMode.RNE)
    if rn == 0:
        return 0
    if _magnitude_cmp(rn, rlsb, FP16_OVERFLOW) >= 0:
        return infinity(FormatId.FP16, rn < 0)
    return to_ieee(rn, rlsb, FormatId.FP16, RoundingMode.RNE)


def _ieee_nan(fmt: FormatId) -> int:
    return quiet_nan(fmt)


def ieee_fma(a: int, b: int, c: int, fmt: FormatId = FormatId.FP64) -> int:
    """IEEE 754 fused multiply-add ``a*b + c`` with a single RNE rounding."""
    fmt = FormatId(fmt)
    da, db, dc = decode(a, fmt), decode(b, fmt), decode(c, fmt)
    if da.is_nan or db.is_nan or dc.is_nan:
        return _ieee_nan(fmt)
    psign = da.sign * db.sign
    if da.is_inf or db.is_inf:
        if da.is_zero or db.is_zero:
            return _ieee_nan(fmt)
        if dc.is_inf and dc.sign != psign:
            return _ieee_nan(fmt)
        return infinity(fmt, psign < 0)
    if dc.is_inf:
        return c
    p = exact_mul(da, db)
    cc = ExactScaled.from_decoded(dc)
    lsb = min(p.lsb_exponent, cc.lsb_exponent)
    n = (p.signed_sig << (p.lsb_exponent - lsb)) + (cc.signed_sig << (cc.lsb_exponent - lsb))
    if n == 0:
        if p.is_zero and cc.is_zero:
            return encode(0, fmt, negative_zero=psign < 0 and dc.sign < 0)
        return encode(0, fmt)
    return to_ieee(n, lsb, fmt, RoundingMode.RNE)


def _binop(x: int, y: int, fmt: FormatId, op: str) -> int:
    one = encode(1, fmt)
    zero_neg = encode(0, fmt, negative_zero=True)
    if op == "mul":
        # x*y + (-0) keeps the sign of an exact zero product
        return ieee_fma(x, y, zero_neg, fmt)
    return ieee_fma(x, one, y, fmt)


def ieee_mul(x: int, y: int, fmt: FormatId = FormatId.FP32) -> int:
    return _binop(x, y, FormatId(fmt), "mul")


def ieee_add(x: int, y: int, fmt: FormatId = FormatId.FP32) -> int:
    return _binop(x, y, FormatId(fmt), "add")

"""Storage formats used by matrix-multiply instructions.

Every format decodes to an exact ``(sign, significand, exponent)`` triple
with ``value = sign * sig / 2**frac * 2**exp``.  Normal numbers have
``1 <= sig/2**frac < 2``; subnormals and zeros carry the format's minimum
exponent.  Decoding is total: every bit pattern maps to something.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache
from fractions import Fraction


class FormatId(str, enum.Enum):
    FP64 = "FP64"
    FP32 = "FP32"
    TF32 = "TF32"
    FP16 = "FP16"
    BF16 = "BF16"
    E4M3FN = "E4M3FN"
    E5M2 = "E5M2"
    E4M3FNUZ = "E4M3FNUZ"
    E5M2FNUZ = "E5M2FNUZ"
    E2M3 = "E2M3"
    E3M2 = "E3M2"
    E2M1 = "E2M1"
    UE8M0 = "UE8M0"
    UE4M3 = "UE4M3"

    def __str__(self) -> str:
        return self.value


class NanRule(str, enum.Enum):
    IEEE = "ieee"  # exponent all ones, nonzero mantissa
    FN_ALL_ONES = "fn_all_ones"  # exponent and mantissa all ones
    FNUZ_SIGN_ONLY = "fnuz_sign_only"  # 0x80
    UE8M0_ALL_ONES = "ue8m0_all_ones"  # 0xFF
    NONE = "none"


class NumClass(str, enum.Enum):
    ZERO = "zero"
    SUBNORMAL = "subnormal"
    NORMAL = "normal"
    INFINITY = "infinity"
    NAN = "nan"


@dataclass(frozen=True)
class FormatSpec:
    name: FormatId
    storage_bits: int
    exponent_bits: int
    mantissa_bits: int
    bias: int
    has_infinity: bool
    nan_rule: NanRule
    has_negative_zero: bool
    signed: bool = True
    # Bits below the mantissa field that the format ignores (TF32 keeps 13).
    pad_bits: int = 0
    # Bits above the sign bit that the format ignores (UE4M3 drops bit 7).
    ignored_high_bits: int = 0

    @property
    def min_normal_exponent(self) -> int:
        if self.mantissa_bits == 0:
            return -self.bias
        return 1 - self.bias

    @property
    def hex_digits(self) -> int:
        return (self.storage_bits + 3) // 4

    @property
    def max_biased_exponent(self) -> int:
        """Largest biased exponent field that holds finite numbers."""
        top = (1 << self.exponent_bits) - 1
        if self.nan_rule in (NanRule.IEEE,) or self.has_infinity:
            return top - 1
        if self.nan_rule is NanRule.UE8M0_ALL_ONES:
            return top - 1
        return top

    @property
    def max_finite(self) -> Fraction:
        e = self.max_biased_exponent - self.bias
        mant = (1 << self.mantissa_bits) - 1
        if self.nan_rule is NanRule.FN_ALL_ONES:
            mant -= 1
        return Fraction((1 << self.mantissa_bits) + mant, 1 << self.mantissa_bits) * Fraction(2) ** e

    @property
    def max_finite_dyadic(self) -> tuple[int, int]:
        """``max_finite`` as ``(n, lsb)`` with ``n * 2**lsb`` the value."""
        mant = (1 << self.mantissa_bits) - 1
        if self.nan_rule is NanRule.FN_ALL_ONES:
            mant -= 1
        return (1 << self.mantissa_bits) + mant, self.max_biased_exponent - self.bias - self.mantissa_bits

    @property
    def min_subnormal(self) -> Fraction:
        return Fraction(2) ** (self.min_normal_exponent - self.mantissa_bits)

    @property
    def min_normal(self) -> Fraction:
        return Fraction(2) ** self.min_normal_exponent


FORMATS: dict[FormatId, FormatSpec] = {
    f.name: f
    for f in (
        FormatSpec(FormatId.FP64, 64, 11, 52, 1023, True, NanRule.IEEE, True),
        FormatSpec(FormatId.FP32, 32, 8, 23, 127, True, NanRule.IEEE, True),
        FormatSpec(FormatId.TF32, 32, 8, 10, 127, True, NanRule.IEEE, True, pad_bits=13),
        FormatSpec(FormatId.FP16, 16, 5, 10, 15, True, NanRule.IEEE, True),
        FormatSpec(FormatId.BF16, 16, 8, 7, 127, True, NanRule.IEEE, True),
        FormatSpec(FormatId.E4M3FN, 8, 4, 3, 7, False, NanRule.FN_ALL_ONES, True),
        FormatSpec(FormatId.E5M2, 8, 5, 2, 15, True, NanRule.IEEE, True),
        FormatSpec(FormatId.E4M3FNUZ, 8, 4, 3, 8, False, NanRule.FNUZ_SIGN_ONLY, False),
        FormatSpec(FormatId.E5M2FNUZ, 8, 5, 2, 16, False, NanRule.FNUZ_SIGN_ONLY, False),
        FormatSpec(FormatId.E2M3, 6, 2, 3, 1, False, NanRule.NONE, True),
        FormatSpec(FormatId.E3M2, 6, 3, 2, 3, False, NanRule.NONE, True),
        FormatSpec(FormatId.E2M1, 4, 2, 1, 1, False, NanRule.NONE, True),
        FormatSpec(FormatId.UE8M0, 8, 8, 0, 127, False, NanRule.UE8M0_ALL_ONES, False, signed=False),
        FormatSpec(
            FormatId.UE4M3, 8, 4, 3, 7, False, NanRule.FN_ALL_ONES, False,
            signed=False, ignored_high_bits=1,
        ),
    )
}


def spec_of(fmt: FormatId | str) -> FormatSpec:
    try:
        return FORMATS[fmt]  # str-valued enum: plain names hash alike
    except KeyError:
        return FORMATS[FormatId(fmt)]


@dataclass(frozen=True)
class DecodedNumber:
    cls: NumClass
    sign: int  # +1 or -1
    sig: int = 0  # significand numerator
    frac: int = 0  # significand = sig / 2**frac
    exp: int = 0

    @property
    def is_finite(self) -> bool:
        return self.cls not in (NumClass.INFINITY, NumClass.NAN)

    @property
    def is_nan(self) -> bool:
        return self.cls is NumClass.NAN

    @property
    def is_inf(self) -> bool:
        return self.cls is NumClass.INFINITY

    @property
    def is_zero(self) -> bool:
        return self.cls is NumClass.ZERO

    @property
    def significand(self) -> Fraction:
        return Fraction(self.sig, 1 << self.frac)

    @property
    def value(self) -> Fraction:
        """Exact value of a finite number."""
        if not self.is_finite:
            raise ValueError(f"{self.cls.value} has no finite value")
        return self.sign * self.significand * Fraction(2) ** self.exp


def _fields(bits: int, fs: FormatSpec) -> tuple[int, int, int]:
    bits >>= fs.pad_bits
    m = fs.mantissa_bits
    e = fs.exponent_bits
    mant = bits & ((1 << m) - 1)
    expf = (bits >> m) & ((1 << e) - 1)
    sign = (bits >> (m + e)) & 1 if fs.signed else 0
    return sign, expf, mant


@lru_cache(maxsize=1 << 16)
def decode(bits: int, fmt: FormatId | str) -> DecodedNumber:
    fs = spec_of(fmt)
    if bits < 0 or bits >> fs.storage_bits:
        raise ValueError(f"0x{bits:x} does not fit {fs.storage_bits}-bit {fs.name}")
    sgn, expf, mant = _fields(bits, fs)
    sign = -1 if sgn else 1
    m = fs.mantissa_bits
    top = (1 << fs.exponent_bits) - 1
    rule = fs.nan_rule

    if rule is NanRule.FNUZ_SIGN_ONLY and sgn and expf == 0 and mant == 0:
        return DecodedNumber(NumClass.NAN, 1)
    if rule is NanRule.UE8M0_ALL_ONES and expf == top:
        return DecodedNumber(NumClass.NAN, 1)
    if rule is NanRule.FN_ALL_ONES and expf == top and mant == (1 << m) - 1:
        return DecodedNumber(NumClass.NAN, sign)
    if rule is NanRule.IEEE and expf == top:
        if mant:
            return DecodedNumber(NumClass.NAN, sign)
        return DecodedNumber(NumClass.INFINITY, sign)

    emin = fs.min_normal_exponent
    if m == 0:
        # UE8M0: pure powers of two, no zero and no subnormals.
        return DecodedNumber(NumClass.NORMAL, 1, 1, 0, expf - fs.bias)
    if expf == 0:
        if mant == 0:
            return DecodedNumber(NumClass.ZERO, sign, 0, m, emin)
        return DecodedNumber(NumClass.SUBNORMAL, sign, mant, m, emin)
    return DecodedNumber(NumClass.NORMAL, sign, (1 << m) | mant, m, expf - fs.bias)


def tf32_fixup(bits: int) -> int:
    """Clear the 13 low bits of a TF32 operand held in a 32-bit container."""
    return bits & 0xFFFFE000


def ue4m3_fixup(bits: int) -> int:
    """Clear the unused top bit of a UE4M3 scale factor."""
    return bits & 0x7F


def fixup(bits: int, fmt: FormatId | str) -> int:
    fmt = FormatId(fmt)
    if fmt is FormatId.TF32:
        return tf32_fixup(bits)
    if fmt is FormatId.UE4M3:
        return ue4m3_fixup(bits)
    return bits


def encode(value: Fraction | int | float, fmt: FormatId | str, *, negative_zero: bool = False) -> int:
    """Bit pattern of an exactly representable finite value.

    Raises ValueError when ``value`` is not representable in ``fmt``.
    """
    v = Fraction(value)
    d = v.denominator
    if d & (d - 1):
        raise ValueError(f"{value} not representable in {FormatId(fmt).value}")
    return encode_dyadic(v.numerator, 1 - d.bit_length(), fmt, negative_zero=negative_zero)


def encode_dyadic(n: int, lsb: int, fmt: FormatId | str, *, negative_zero: bool = False) -> int:
    """Bit pattern of ``n * 2**lsb``; integer-only twin of :func:`encode`."""
    fs = spec_of(fmt)
    m = fs.mantissa_bits
    sign_shift = m + fs.exponent_bits + fs.pad_bits
    if n == 0:
        if m == 0:
            raise ValueError(f"{fs.name} cannot represent zero")
        if negative_zero:
            if not fs.signed or not fs.has_negative_zero:
                raise ValueError(f"{fs.name} has no negative zero")
            return 1 << sign_shift
        return 0
    if n < 0 and not fs.signed:
        raise ValueError(f"{fs.name} is unsigned")
    sgn = 1 if n < 0 else 0
    a = abs(n)
    tz = (a & -a).bit_length() - 1
    a >>= tz
    lsb += tz
    e = a.bit_length() - 1 + lsb
    e_eff = max(e, fs.min_normal_exponent)
    shift = lsb - (e_eff - m)
    if shift < 0:
        raise ValueError(f"{n}*2**{lsb} not representable in {fs.name}")
    sig = a << shift
    if m == 0:
        biased = e + fs.bias
        if sig != 1 or not 0 <= biased <= fs.max_biased_exponent:
            raise ValueError(f"{n}*2**{lsb} not representable in {fs.name}")
        return biased
    if sig < (1 << m):
        biased, mant = 0, sig
    else:
        biased, mant = e_eff + fs.bias, sig - (1 << m)
    top = fs.max_biased_exponent
    if biased > top or (fs.nan_rule is NanRule.FN_ALL_ONES and biased == top and mant == (1 << m) - 1):
        raise ValueError(f"{n}*2**{lsb} overflows {fs.name}")
    bits = (((biased << m) | mant) << fs.pad_bits) | (sgn << sign_shift)
    if fs.nan_rule is NanRule.FNUZ_SIGN_ONLY and bits == 1 << sign_shift:
        raise ValueError(f"{n}*2**{lsb} not representable in {fs.name}")
    return bits


def is_representable(value: Fraction | int, fmt: FormatId | str) -> bool:
    try:
        encode(value, fmt)
    except ValueError:
        return False
    return True


def infinity(fmt: FormatId | str, negative: bool = False) -> int:
    fs = spec_of(fmt)
    if not fs.has_infinity:
        raise ValueError(f"{fs.name} has no infinity")
    m = fs.mantissa_bits
    bits = ((1 << fs.exponent_bits) - 1) << (m + fs.pad_bits)
    if negative:
        bits |= 1 << (m + fs.exponent_bits + fs.pad_bits)
    return bits


def quiet_nan(fmt: FormatId | str) -> int:
    """Default NaN pattern: quiet NaN with zero payload (or the format's only NaN)."""
    fs = spec_of(fmt)
    m = fs.mantissa_bits
    if fs.nan_rule is NanRule.IEEE:
        return (((1 << fs.exponent_bits) - 1) << m | 1 << (m - 1)) << fs.pad_bits
    if fs.nan_rule is NanRule.FN_ALL_ONES:
        return (1 << (fs.exponent_bits + m)) - 1
    if fs.nan_rule is NanRule.FNUZ_SIGN_ONLY:
        return 0x80
    if fs.nan_rule is NanRule.UE8M0_ALL_ONES:
        return 0xFF
    raise ValueError(f"{fs.name} has no NaN")


def to_float(bits: int, fmt: FormatId | str) -> float:
    d = decode(bits, fmt)
    if d.is_nan:
        return float("nan")
    if d.is_inf:
        return d.sign * float("inf")
    if d.is_zero:
        return -0.0 if d.sign < 0 else 0.0
    return float(d.value)

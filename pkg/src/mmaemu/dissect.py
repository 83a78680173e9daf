"""Black-box dissection of a dot-add unit.

A device under test (DUT) is any deterministic function ``d = f(c, a, b)``
over bit patterns.  The probes here only ever look at its outputs:

* summation order, from where a huge ``X`` and its negation cancel among
  tiny ``y`` summands;
* accumulation precision at every summand position, by shrinking ``eps``
  until ``1 + eps`` (binary adds) or ``-1 + 1 + eps`` (fused sums) breaks;
* rounding modes, by comparing rounded results against the two reference
  tables of directed and tie-breaking modes;
* special-value rules (subnormal flushing, negative zero, overflow, NaN).

Summand values are realized as products of power-of-two operands, so the
probes also work for formats whose range cannot hold a summand directly.
"""

from __future__ import annotations

import enum
import itertools
import json
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Sequence

from .exact import RoundingMode
from .formats import DecodedNumber, FormatId, NumClass, decode, encode, infinity, spec_of

R = RoundingMode


class Tri(str, enum.Enum):
    YES = "yes"
    NO = "no"
    UNTESTED = "untested"

    def __str__(self) -> str:
        return self.value


def _tri(flag: bool | None) -> Tri:
    if flag is None:
        return Tri.UNTESTED
    return Tri.YES if flag else Tri.NO


# -- device under test ----------------------------------------------------------

DotFn = Callable[[int, tuple, tuple, "tuple | None", "tuple | None"], int]


@dataclass(frozen=True)
class Dut:
    """A dot-add function with its shape and operand formats.

    Scaled DUTs take one scale factor per ``block`` elements; probes that do
    not choose scales pass unit scales.
    """

    fn: DotFn
    K: int
    a_fmt: FormatId
    b_fmt: FormatId
    c_fmt: FormatId
    d_fmt: FormatId
    sf_fmt: FormatId | None = None
    block: int | None = None
    name: str = "dut"

    @property
    def scaled(self) -> bool:
        return self.sf_fmt is not None

    @property
    def nblocks(self) -> int:
        return self.K // self.block if self.block else 0

    def __call__(self, c: int, a: Sequence[int], b: Sequence[int], a_sf=None, b_sf=None) -> int:
        if self.scaled and a_sf is None:
            one = encode(1, self.sf_fmt)
            a_sf = b_sf = (one,) * self.nblocks
        return self.fn(c, tuple(a), tuple(b), a_sf, b_sf)

    @classmethod
    def from_descriptor(cls, desc) -> "Dut":
        from .catalog import dot_add

        def fn(c, a, b, a_sf, b_sf):
            return dot_add(desc, desc.request(c, a, b, a_sf, b_sf))

        scale = desc.scale
        return cls(
            fn, desc.K, desc.a_fmt, desc.b_fmt, desc.c_fmt, desc.d_fmt,
            scale.sf_fmt if scale else None, scale.block if scale else None,
            name=f"{desc.arch}:{desc.name}",
        )

    @classmethod
    def from_function(
        cls,
        fn: Callable[[int, tuple, tuple], int],
        K: int,
        a_fmt: FormatId | str,
        b_fmt: FormatId | str | None = None,
        c_fmt: FormatId | str = FormatId.FP32,
        d_fmt: FormatId | str | None = None,
        name: str = "dut",
    ) -> "Dut":
        a_fmt = FormatId(a_fmt)
        c_fmt = FormatId(c_fmt)
        return cls(
            lambda c, a, b, _sa, _sb: fn(c, a, b), K, a_fmt, FormatId(b_fmt or a_fmt), c_fmt,
            FormatId(d_fmt or c_fmt), name=name,
        )


# -- realizing summands ---------------------------------------------------------


def _pow2(e: int) -> Fraction:
    return Fraction(2) ** e


def _exp2(v: Fraction) -> int | None:
    """``e`` if ``|v| == 2**e``."""
    v = abs(Fraction(v))
    if v == 0 or v.numerator & (v.numerator - 1) or v.denominator & (v.denominator - 1):
        return None
    return v.numerator.bit_length() - v.denominator.bit_length()


def _encode_as(v: Fraction, fmt: FormatId, normal_only: bool) -> int | None:
    try:
        bits = encode(v, fmt)
    except ValueError:
        return None
    if v != 0 and normal_only and decode(bits, fmt).cls is not NumClass.NORMAL:
        return None
    return bits


@lru_cache(maxsize=None)
def _pow2_exponents(fmt: FormatId, normal_only: bool) -> tuple[int, ...]:
    fs = spec_of(fmt)
    lo = fs.min_normal_exponent if normal_only else fs.min_normal_exponent - fs.mantissa_bits
    hi = fs.max_biased_exponent - fs.bias
    return tuple(e for e in range(lo, hi + 1) if _encode_as(_pow2(e), fmt, normal_only) is not None)


@lru_cache(maxsize=None)
def _exp_window(fmt: FormatId) -> tuple[int, int]:
    """Exponent range any finite nonzero value of ``fmt`` can have."""
    fs = spec_of(fmt)
    return fs.min_normal_exponent - fs.mantissa_bits, fs.max_biased_exponent - fs.bias


class Realizer:
    """Turns wanted summand values into operand bit patterns."""

    def __init__(self, dut: Dut, normal_only: bool = True):
        self.dut = dut
        self.normal_only = normal_only
        self._a_exps = _pow2_exponents(dut.a_fmt, normal_only)
        self._b_exps = _pow2_exponents(dut.b_fmt, normal_only)
        self._sf_exps = _pow2_exponents(dut.sf_fmt, False) if dut.scaled else [0]
        self._cache: dict = {}
        self._zero = (encode(0, dut.a_fmt), encode(0, dut.b_fmt))

    def product(self, v: Fraction, scale_exp: int = 0) -> tuple[int, int] | None:
        key = ("p", v, scale_exp)
        if key not in self._cache:
            self._cache[key] = self._product(Fraction(v) / _pow2(scale_exp))
        return self._cache[key]

    def _product(self, t: Fraction) -> tuple[int, int] | None:
        d = self.dut
        if t == 0:
            return encode(0, d.a_fmt), encode(0, d.b_fmt)
        e_t = abs(t.numerator).bit_length() - t.denominator.bit_length()
        # power-of-two factor on one side, the rest on the other; balanced first
        for pow_side, exps in (("b", self._b_exps), ("a", self._a_exps)):
            lo, hi = _exp_window(d.a_fmt if pow_side == "b" else d.b_fmt)
            for e in sorted(exps, key=lambda e: (abs(2 * e - e_t), -e)):
                if not lo - 1 <= e_t - e <= hi + 1:
                    continue
                rest = t / _pow2(e)
                if pow_side == "b":
                    x = _encode_as(rest, d.a_fmt, self.normal_only)
                    if x is not None:
                        return x, encode(_pow2(e), d.b_fmt)
                else:
                    y = _encode_as(rest, d.b_fmt, self.normal_only)
                    if y is not None:
                        return encode(_pow2(e), d.a_fmt), y
        return None

    def c(self, v: Fraction) -> int | None:
        return _encode_as(Fraction(v), self.dut.c_fmt, self.normal_only)

    def scale(self, e: int) -> tuple[int, int] | None:
        """Scale factor pair whose product is ``2**e``."""
        if not self.dut.scaled:
            return None if e else (0, 0)
        for ea in sorted(self._sf_exps, key=lambda x: abs(2 * x - e)):
            if e - ea in self._sf_exps:
                return encode(_pow2(ea), self.dut.sf_fmt), encode(_pow2(e - ea), self.dut.sf_fmt)
        return None

    def realize(self, values: dict[int, Fraction], scale_exps: dict[int, int] | None = None):
        """Operands for summand values keyed by position (``K`` is c); None if impossible."""
        d = self.dut
        K = d.K
        c = self.c(values.get(K, Fraction(0)))
        if c is None:
            return None
        a, b = [], []
        for k in range(K):
            v = values.get(k)
            if not v:
                a.append(self._zero[0])
                b.append(self._zero[1])
                continue
            s = scale_exps.get(k // d.block, 0) if scale_exps and d.block else 0
            pair = self.product(v, s)
            if pair is None:
                return None
            a.append(pair[0])
            b.append(pair[1])
        a_sf = b_sf = None
        if d.scaled:
            pairs = [self.scale(scale_exps.get(g, 0) if scale_exps else 0) for g in range(d.nblocks)]
            if any(p is None for p in pairs):
                return None
            a_sf = tuple(p[0] for p in pairs)
            b_sf = tuple(p[1] for p in pairs)
        return c, tuple(a), tuple(b), a_sf, b_sf

    def run(self, values: dict[int, Fraction], scale_exps: dict[int, int] | None = None) -> DecodedNumber | None:
        ops = self.realize(values, scale_exps)
        if ops is None:
            return None
        return decode(self.dut(*ops), self.dut.d_fmt)


def _representable(v: Fraction, fmt: FormatId) -> bool:
    return _encode_as(v, fmt, False) is not None


# -- summation trees ------------------------------------------------------------

Tree = "int | tuple"


def _pairwise_tree(leaves: Sequence[int]):
    if len(leaves) == 1:
        return leaves[0]
    h = len(leaves) // 2
    return ("add", _pairwise_tree(leaves[:h]), _pairwise_tree(leaves[h:]))


@dataclass(frozen=True)
class TreeCandidate:
    kind: str
    K: int
    G: int | None = None
    split: int | None = None

    def __str__(self) -> str:
        if self.kind == "group_pairwise":
            return f"group_pairwise(G={self.G})"
        if self.kind == "fused":
            return f"fused(arity={self.K + 1})"
        if self.kind == "chain_of_fused":
            return f"chain_of_fused(split={self.split}, arity={self.split + 1})"
        return self.kind

    def build(self):
        K = self.K
        if self.kind == "sequential":
            t = K
            for k in range(K):
                t = ("add", t, k)
            return t
        if self.kind == "group_pairwise":
            t = K
            for g in range(0, K, self.G):
                t = ("add", t, _pairwise_tree(range(g, g + self.G)))
            return t
        if self.kind == "fused":
            return ("fused", K, *range(K))
        if self.kind == "chain_of_fused":
            first = ("fused", K, *range(self.split))
            return ("fused", first, *range(self.split, K))
        raise ValueError(self.kind)

    def nodes(self) -> list[list[int]]:
        """Leaf positions of each fused node (binary trees have none)."""
        if self.kind == "fused":
            return [[self.K, *range(self.K)]]
        if self.kind == "chain_of_fused":
            return [[self.K, *range(self.split)], list(range(self.split, self.K))]
        return []

    def predict(self, i: int, j: int, ypos: frozenset[int]) -> int:
        """Surviving ``y`` count with ``X`` at ``i`` and ``-X`` at ``j``."""
        return _evaluate(self.build(), i, j, ypos)[1]


def _evaluate(t, i: int, j: int, ypos: frozenset[int]) -> tuple[str, int]:
    if isinstance(t, int):
        if t == i:
            return "big", 1
        if t == j:
            return "big", -1
        return "n", int(t in ypos)
    kids = [_evaluate(ch, i, j, ypos) for ch in t[1:]]
    bigs = [v for kind, v in kids if kind == "big"]
    if bigs:
        net = sum(bigs)
        return ("n", 0) if net == 0 else ("big", net)
    return "n", sum(v for _, v in kids)


def candidate_shapes(K: int) -> list[TreeCandidate]:
    out = [TreeCandidate("sequential", K)]
    G = 2
    while G <= K:
        if K % G == 0:
            out.append(TreeCandidate("group_pairwise", K, G=G))
        G *= 2
    out.append(TreeCandidate("fused", K))
    if K >= 2 and K % 2 == 0:
        out.append(TreeCandidate("chain_of_fused", K, split=K // 2))
    return out


def equivalent(a: TreeCandidate, b: TreeCandidate) -> bool:
    """True when no X/y placement can tell the two trees apart."""
    if a.K != b.K:
        return False
    K = a.K
    for i, j in itertools.combinations(range(K + 1), 2):
        ypos = frozenset(range(K + 1)) - {i, j}
        if a.predict(i, j, ypos) != b.predict(i, j, ypos):
            return False
    return True


@dataclass
class SummationTreeShape:
    kind: str  # a TreeCandidate kind, "unclassified" or "untested"
    K: int
    G: int | None = None
    split: int | None = None
    # (i, j) -> surviving y count, None where the output was not a count
    matrix: dict[tuple[int, int], int | None] = field(default_factory=dict)
    matches: list[str] = field(default_factory=list)
    log2_range: int | None = None
    note: str = ""

    @property
    def classified(self) -> bool:
        return self.kind not in ("unclassified", "untested")

    @property
    def candidate(self) -> TreeCandidate | None:
        return TreeCandidate(self.kind, self.K, self.G, self.split) if self.classified else None

    @property
    def arity(self) -> int | None:
        if self.kind == "fused":
            return self.K + 1
        if self.kind == "chain_of_fused":
            return self.split + 1
        return 2 if self.classified else None

    def __str__(self) -> str:
        c = self.candidate
        return str(c) if c else self.kind


# -- order probe ----------------------------------------------------------------

X_CAP = 64
Y_FLOOR = -64
# y must vanish next to X under any accumulator of up to 64 fractional bits
ORDER_RANGE_TARGET = X_CAP + 2


@dataclass
class _OrderPlan:
    realizer: Realizer
    X: Fraction
    y: Fraction
    big_scale: int | None = None  # block mode only
    small_scale: int | None = None

    @property
    def log2_range(self) -> int:
        return _exp2(self.X) - _exp2(self.y)

    def config(self, dut: Dut, i: int, j: int):
        K = dut.K
        values: dict[int, Fraction] = {}
        scales = None
        if self.big_scale is None:
            ypos = frozenset(range(K + 1)) - {i, j}
        else:
            big_blocks = {p // dut.block for p in (i, j) if p < K}
            scales = {g: (self.big_scale if g in big_blocks else self.small_scale) for g in range(dut.nblocks)}
            ypos = frozenset(p for p in range(K) if p // dut.block not in big_blocks and p not in (i, j))
            if K not in (i, j):
                ypos |= {K}
        for p in ypos:
            values[p] = self.y
        values[i] = self.X
        values[j] = -self.X
        return values, scales, ypos


def _limits(dut: Dut, normal_only: bool = True) -> tuple[int, int]:
    d = spec_of(dut.d_fmt)
    c = spec_of(dut.c_fmt)
    top = min(X_CAP, _floor_log2(d.max_finite / 4), _floor_log2(c.max_finite))
    if normal_only:
        bottom = max(Y_FLOOR, d.min_normal_exponent, c.min_normal_exponent)
    else:
        # integer multiples of the smallest subnormal stay exact
        bottom = max(Y_FLOOR, _exp2(d.min_subnormal), _exp2(c.min_subnormal))
    return top, bottom


def _floor_log2(v: Fraction) -> int:
    e = v.numerator.bit_length() - v.denominator.bit_length()
    return e if _pow2(e) <= v else e - 1


def _order_plans(dut: Dut):
    for normal_only in (True, False):
        top, bottom = _limits(dut, normal_only)
        r = Realizer(dut, normal_only)

        def ok(v: Fraction) -> bool:
            return r.product(v) is not None and r.product(-v) is not None and r.c(v) is not None and r.c(-v) is not None

        X = next((_pow2(e) for e in range(top, bottom, -1) if ok(_pow2(e))), None)
        y = next((_pow2(e) for e in range(bottom, top) if ok(_pow2(e))), None)
        if X is not None and y is not None and X > y:
            yield _OrderPlan(r, X, y)
    if dut.scaled and dut.nblocks >= 2:
        top, bottom = _limits(dut)
        r = Realizer(dut, True)
        prod_exps = [e for e in range(-40, 41) if r.product(_pow2(e)) and r.product(-_pow2(e))]
        if not prod_exps:
            return
        big = small = None
        for e in range(top, bottom, -1):
            for pe in sorted(prod_exps, reverse=True):
                if r.scale(e - pe) is not None and r.c(_pow2(e)) is not None:
                    big = (e, e - pe)
                    break
            if big:
                break
        for e in range(bottom, top):
            for pe in sorted(prod_exps):
                if r.scale(e - pe) is not None and r.c(_pow2(e)) is not None:
                    small = (e, e - pe)
                    break
            if small:
                break
        if big and small and big[0] > small[0]:
            yield _OrderPlan(r, _pow2(big[0]), _pow2(small[0]), big[1], small[1])


def probe_order(dut: Dut) -> SummationTreeShape:
    """Recover the summation tree from X / -X cancellation experiments."""
    K = dut.K
    cands = candidate_shapes(K)
    best_range = None
    for plan in _order_plans(dut):
        best_range = max(best_range or plan.log2_range, plan.log2_range)
        matrix: dict[tuple[int, int], int | None] = {}
        placements = {}
        for i, j in itertools.combinations(range(K + 1), 2):
            values, scales, ypos = plan.config(dut, i, j)
            out = plan.realizer.run(values, scales)
            count = None
            if out is not None and out.is_finite:
                q = out.value / plan.y
                if q.denominator == 1 and 0 <= q <= K:
                    count = int(q)
            matrix[i, j] = count
            placements[i, j] = ypos
        matches = [c for c in cands if all(matrix[ij] == c.predict(*ij, placements[ij]) for ij in matrix)]
        if matches:
            m = matches[0]
            return SummationTreeShape(
                m.kind, K, m.G, m.split, matrix, [str(c) for c in matches], plan.log2_range,
                note="block scale factors" if plan.big_scale is not None else "",
            )
        last = matrix
    if best_range is None or best_range < ORDER_RANGE_TARGET:
        return SummationTreeShape(
            "untested", K, log2_range=best_range,
            note=f"operand range too small: X/y reaches 2^{best_range}, need 2^{ORDER_RANGE_TARGET}",
        )
    return SummationTreeShape("unclassified", K, matrix=last, log2_range=best_range, note="no candidate shape fits")


# -- precision probe ------------------------------------------------------------


@dataclass
class PositionPrecision:
    position: int
    bits: int | None  # fractional bits kept; None if nothing could be measured
    exact: bool  # False: ``bits`` is only a lower bound
    eps_exp: int | None = None  # log2 of the last eps that survived
    base_exp: int = 0  # the probe's unit was 2**base_exp
    fused: bool = True

    def __str__(self) -> str:
        if self.bits is None:
            return "untested"
        return str(self.bits) if self.exact else f">={self.bits}"


def _is_binary(tree: SummationTreeShape | None) -> bool:
    return tree is not None and tree.kind in ("sequential", "group_pairwise")


def _fused_partners(dut: Dut, tree: SummationTreeShape | None, pos: int) -> tuple[int, int] | None:
    """Two positions for -B and +B that share a fused node with ``pos``."""
    K = dut.K
    cand = tree.candidate if tree is not None and tree.classified else None
    nodes = cand.nodes() if cand else [[K, *range(K)]]
    node = next(n for n in nodes if pos in n)
    others = [p for p in node if p != pos and p != K] + ([K] if K in node and pos != K else [])
    if len(others) >= 2:
        return others[0], others[1]
    if len(nodes) == 2 and node is nodes[1] and others:
        # the first node's output feeds the second: route -B through it
        return K if pos != K else nodes[0][1], others[0]
    return None


def _binary_partner(dut: Dut, pos: int) -> int:
    return dut.K if pos != dut.K else 0


def _d_ok(v: Fraction, dut: Dut) -> bool:
    return _representable(v, dut.d_fmt)


BASE_EXPS = tuple(range(0, 65, 4))


def probe_precision_at(dut: Dut, pos: int, tree: SummationTreeShape | None = None, max_bits: int = 160) -> PositionPrecision:
    r = Realizer(dut, True)
    r_sub = Realizer(dut, False)
    binary = _is_binary(tree)
    partners = None if binary else _fused_partners(dut, tree, pos)
    if not binary and partners is None:
        binary = True
    n, last_ok, base_used = 1, None, 0
    for be in BASE_EXPS:
        B = _pow2(be)
        while n <= max_bits:
            eps = B * _pow2(-n)
            if binary:
                values = {_binary_partner(dut, pos): B, pos: eps}
                expected = B + eps
            else:
                minus, plus = partners
                values = {minus: -B, plus: B, pos: eps}
                expected = eps
            # a fused result is eps alone, which the output must hold exactly
            if not binary and not _d_ok(expected, dut):
                break
            out = r.run(values)
            if out is None:
                out = r_sub.run(values)
            if out is None:
                break
            if not out.is_finite or out.value != expected:
                return _precision(pos, last_ok, True, base_used, not binary)
            last_ok, base_used = n, be
            n += 1
    return _precision(pos, last_ok, False, base_used, not binary)


def _precision(pos: int, last_ok: int | None, exact: bool, base: int, fused: bool) -> PositionPrecision:
    if last_ok is None:
        return PositionPrecision(pos, 0 if exact else None, exact, None, base, fused)
    bits = last_ok if fused else last_ok + 1
    return PositionPrecision(pos, bits, exact, -last_ok, base, fused)


def probe_precision(dut: Dut, tree: SummationTreeShape | None = None) -> dict[int, PositionPrecision]:
    """Fractional bits kept for the summand at every position (``K`` is c)."""
    return {p: probe_precision_at(dut, p, tree) for p in range(dut.K + 1)}


def summarize_precision(prec: dict[int, PositionPrecision]) -> int | None:
    """The common precision of all exactly measured positions, or None."""
    exact = {p.bits for p in prec.values() if p.exact}
    if len(exact) != 1:
        return None
    (bits,) = exact
    if any(not p.exact and p.bits is not None and p.bits > bits for p in prec.values()):
        return None
    return bits


# -- rounding probe -------------------------------------------------------------

# Offsets (in units of u) of the rounded result from the truncated base, for
# the probe inputs 1+0.75u, 1+0.25u, -1-0.75u, -1-0.25u.
DIRECTED_TABLE: dict[str, tuple[int, int, int, int]] = {
    "RU": (1, 1, 0, 0),
    "RD": (0, 0, -1, -1),
    "RZ": (0, 0, 0, 0),
    "RA": (1, 1, -1, -1),
    "RN": (1, 0, -1, 0),
}
DIRECTED_INPUTS = (Fraction(3, 4), Fraction(1, 4), Fraction(-3, 4), Fraction(-1, 4))

# Offsets for 1+0.5u, 1+1.5u, -1-0.5u, -1-1.5u.
TIE_TABLE: dict[str, tuple[int, int, int, int]] = {
    "RNU": (1, 2, 0, -1),
    "RND": (0, 1, -1, -2),
    "RNZ": (0, 1, 0, -1),
    "RNA": (1, 2, -1, -2),
    "RNE": (0, 2, 0, -2),
    "RNO": (1, 1, -1, -1),
}
TIE_INPUTS = (Fraction(1, 2), Fraction(3, 2), Fraction(-1, 2), Fraction(-3, 2))


def classify_rounding(directed: Sequence[int | None], ties: Sequence[int | None] | None = None) -> RoundingMode | None:
    """Look the observed offsets up in the two tables."""
    row = next((m for m, cells in DIRECTED_TABLE.items() if tuple(directed) == cells), None)
    if row is None:
        return None
    if row != "RN":
        return RoundingMode(row)
    if ties is None:
        return None
    tie = next((m for m, cells in TIE_TABLE.items() if tuple(ties) == cells), None)
    return RoundingMode(tie) if tie else None


@dataclass
class RoundingResult:
    mode: RoundingMode | None
    directed: tuple = ()
    ties: tuple = ()
    note: str = ""

    @property
    def tested(self) -> bool:
        return bool(self.directed) and None not in self.directed

    def __str__(self) -> str:
        if self.mode is not None:
            return str(self.mode)
        return "untested" if not self.tested else "unclassified"


def _classify_cells(measure: Callable[[Fraction], int | None]) -> RoundingResult:
    directed = tuple(measure(f) for f in DIRECTED_INPUTS)
    if None in directed:
        return RoundingResult(None, directed, note="probe values not realizable")
    mode = classify_rounding(directed)
    ties: tuple = ()
    if mode is None and directed == DIRECTED_TABLE["RN"]:
        ties = tuple(measure(f) for f in TIE_INPUTS)
        if None in ties:
            return RoundingResult(None, directed, ties, note="tie probes not realizable")
        mode = classify_rounding(directed, ties)
    return RoundingResult(mode, directed, ties, note="" if mode else "inconsistent cells")


def probe_rounding(
    dut: Dut, pos: int, precision: PositionPrecision, tree: SummationTreeShape | None = None
) -> RoundingResult:
    """Rounding applied to the summand at ``pos`` on the grid found by the precision probe."""
    if precision.eps_exp is None or not precision.exact:
        return RoundingResult(None, note="precision unknown")
    r = Realizer(dut, True)
    r_sub = Realizer(dut, False)

    def run(values):
        out = r.run(values)
        return out if out is not None else r_sub.run(values)

    # the grid is relative to the probe's unit, so other units work too when
    # narrow formats cannot hold the probe values at the original one
    res = RoundingResult(None, note="probe values not realizable")
    for base in dict.fromkeys((precision.base_exp, *BASE_EXPS, *(-e for e in BASE_EXPS))):
        res = _rounding_at(dut, pos, precision, tree, run, _pow2(base))
        if res.tested:
            return res
    return res


def _rounding_at(dut, pos, precision, tree, run, B: Fraction) -> RoundingResult:
    u = B * _pow2(precision.eps_exp)
    if not precision.fused:
        partner = _binary_partner(dut, pos)

        def measure(f: Fraction) -> int | None:
            s = 1 if f > 0 else -1
            out = run({partner: s * B, pos: f * u})
            if out is None or not out.is_finite:
                return None
            q = (out.value - s * B) / u
            return int(q) if q.denominator == 1 else None

        return _classify_cells(measure)

    minus, plus = _fused_partners(dut, tree, pos)
    for M in (2, 0):

        def measure(f: Fraction, M=M) -> int | None:
            s = 1 if f > 0 else -1
            out = run({minus: -B, plus: B, pos: (s * M + f) * u})
            if out is None or not out.is_finite:
                return None
            q = out.value / u - s * M
            return int(q) if q.denominator == 1 else None

        res = _classify_cells(measure)
        if res.tested:
            return res
    return res


def _final_layout(dut: Dut, tree: SummationTreeShape | None):
    """Placement of a big part ``4`` and a small tail so only the last rounding acts."""
    K = dut.K
    if _is_binary(tree) or K == 0:
        tail_pos = K - 1 if K else K

        def layout(sign: int, tail: Fraction) -> dict[int, Fraction]:
            return {K: sign * Fraction(4), tail_pos: tail}

        return layout
    cand = tree.candidate if tree is not None and tree.classified else None
    last = cand.nodes()[-1] if cand else [K, *range(K)]
    prods = [p for p in last if p != K]
    n = 4 if len(prods) >= 4 else 2 if len(prods) >= 2 else 1

    def layout(sign: int, tail: Fraction) -> dict[int, Fraction]:
        v = {p: sign * Fraction(4, n) for p in prods[:n]}
        v[K] = tail
        return v

    return layout


def probe_output_bits(dut: Dut, tree: SummationTreeShape | None = None, max_bits: int = 160) -> int | None:
    """Significand bits the final result keeps at magnitude 4."""
    r = Realizer(dut, False)
    layout = _final_layout(dut, tree)
    last = None
    for n in range(1, max_bits):
        tail = Fraction(4) * _pow2(-n)
        out = r.run(layout(1, tail))
        if out is None:
            return None
        if not out.is_finite or out.value != 4 + tail:
            return last
        last = n
    return last


def probe_final_rounding(dut: Dut, tree: SummationTreeShape | None = None, output_bits: int | None = None) -> RoundingResult:
    if output_bits is None:
        output_bits = probe_output_bits(dut, tree)
    if output_bits is None:
        return RoundingResult(None, note="output precision unknown")
    r = Realizer(dut, False)
    layout = _final_layout(dut, tree)
    v = Fraction(4) * _pow2(-output_bits)

    def measure(f: Fraction) -> int | None:
        s = 1 if f > 0 else -1
        out = r.run(layout(s, f * v))
        if out is None or not out.is_finite:
            return None
        q = (out.value - s * 4) / v
        return int(q) if q.denominator == 1 else None

    return _classify_cells(measure)


def probe_c_rz_threshold(dut: Dut, precision: PositionPrecision, tree: SummationTreeShape | None = None, span: int = 40) -> int | None:
    """Smallest ``d`` for which ``c = -2**-d`` next to a unit dot product rounds toward zero.

    Only meaningful when c is otherwise rounded down; returns None when no
    such switch is seen.
    """
    if precision.eps_exp is None:
        return None
    K = dut.K
    cand = tree.candidate if tree is not None and tree.classified else None
    node = cand.nodes()[0] if cand and cand.nodes() else [K, *range(K)]
    p = next((q for q in node if q != K), None)
    if p is None:
        return None
    r = Realizer(dut, False)
    B = _pow2(precision.base_exp)
    for d in range(-precision.eps_exp + 1, -precision.eps_exp + span):
        out = r.run({p: B, K: -B * _pow2(-d)})
        if out is None:
            return None
        if out.is_finite and out.value == B:
            return d
    return None


# -- special values -------------------------------------------------------------

FLAG_NAMES = (
    "flush_c_in",
    "flush_ab_in",
    "flush_post_mul",
    "flush_post_add",
    "neg_zero_out",
    "product_overflow",
    "intermediate_overflow",
    "nan_from_zero_times_inf",
    "nan_from_inf_minus_inf",
)


def _zeros(dut: Dut) -> tuple[list[int], list[int]]:
    return [encode(0, dut.a_fmt)] * dut.K, [encode(0, dut.b_fmt)] * dut.K


def _out(dut: Dut, c: int, a, b) -> DecodedNumber:
    return decode(dut(c, a, b), dut.d_fmt)


def _flush_c_in(dut: Dut) -> bool | None:
    fs = spec_of(dut.c_fmt)
    v = fs.min_normal / 2
    if not _representable(v, dut.c_fmt) or not _d_ok(v, dut):
        return None
    a, b = _zeros(dut)
    out = _out(dut, encode(v, dut.c_fmt), a, b)
    return out.is_zero


def _flush_ab_in(dut: Dut) -> tuple[bool | None, bool | None]:
    res = []
    for side in ("a", "b"):
        fmt, other = (dut.a_fmt, dut.b_fmt) if side == "a" else (dut.b_fmt, dut.a_fmt)
        v = spec_of(fmt).min_normal / 2
        if dut.K == 0 or not _representable(v, fmt) or not _representable(Fraction(1), other) or not _d_ok(v, dut):
            res.append(None)
            continue
        a, b = _zeros(dut)
        x, one = encode(v, fmt), encode(1, other)
        if side == "a":
            a[0], b[0] = x, one
        else:
            a[0], b[0] = one, x
        res.append(_out(dut, encode(0, dut.c_fmt), a, b).is_zero)
    return res[0], res[1]


def _flush_post_mul(dut: Dut) -> bool | None:
    eps = spec_of(dut.d_fmt).min_normal
    r = Realizer(dut, True)
    ops = r.realize({0: eps / 2}) if dut.K else None
    if ops is None:
        return None
    return decode(dut(*ops), dut.d_fmt).is_zero


def _flush_post_add(dut: Dut) -> bool | None:
    eps = spec_of(dut.d_fmt).min_normal
    r = Realizer(dut, True)
    layouts = [{dut.K: eps * Fraction(3, 2), 0: -eps}] if dut.K else []
    if dut.K >= 2:
        layouts.insert(0, {0: eps * Fraction(3, 2), 1: -eps})
    for values in layouts:
        ops = r.realize(values)
        if ops is not None:
            return decode(dut(*ops), dut.d_fmt).is_zero
    return None


def _neg_zero_out(dut: Dut) -> bool | None:
    if not spec_of(dut.c_fmt).has_negative_zero or not spec_of(dut.d_fmt).has_negative_zero:
        return None
    a, b = _zeros(dut)
    if spec_of(dut.b_fmt).has_negative_zero:
        b = [encode(0, dut.b_fmt, negative_zero=True)] * dut.K
    elif spec_of(dut.a_fmt).has_negative_zero:
        a = [encode(0, dut.a_fmt, negative_zero=True)] * dut.K
    out = _out(dut, encode(0, dut.c_fmt, negative_zero=True), a, b)
    return out.is_zero and out.sign < 0


def _max_exp(fmt: FormatId) -> int:
    fs = spec_of(fmt)
    return fs.max_biased_exponent - fs.bias


def _product_overflow(dut: Dut) -> bool | None:
    E = _max_exp(dut.d_fmt)
    r = Realizer(dut, True)
    if dut.K == 0:
        return None
    ops = r.realize({0: _pow2(E + 1), dut.K: -_pow2(E)})
    if ops is None:
        return None
    out = decode(dut(*ops), dut.d_fmt)
    if out.is_inf:
        return True
    return False if out.is_finite and out.value == _pow2(E) else None


def _first_pair(tree: SummationTreeShape | None, K: int) -> tuple[int, int, int] | None:
    """Two leaves merged first and a third merged later."""
    if K < 2:
        return None
    if tree is not None and tree.kind == "sequential":
        return K, 0, 1
    return 0, 1, (K if K >= 2 else None)


def _intermediate_overflow(dut: Dut, tree: SummationTreeShape | None) -> bool | None:
    E = _max_exp(dut.d_fmt)
    trio = _first_pair(tree, dut.K)
    if trio is None:
        return None
    i, j, k = trio
    r = Realizer(dut, True)
    ops = r.realize({i: _pow2(E), j: _pow2(E), k: -_pow2(E)})
    if ops is None:
        return None
    out = decode(dut(*ops), dut.d_fmt)
    if out.is_inf:
        return True
    return False if out.is_finite and out.value == _pow2(E) else None


def _overflow_edges(dut: Dut) -> dict[str, str]:
    """Raw outputs for sums just past the largest finite value."""
    fs = spec_of(dut.d_fmt)
    E = _max_exp(dut.d_fmt)
    u = _pow2(-fs.mantissa_bits)
    top = (2 - u) * _pow2(E)
    r = Realizer(dut, False)
    out = {}
    tail_pos = dut.K - 1 if dut.K else dut.K
    for s in (1, -1):
        for f in (Fraction(3, 4), Fraction(1, 2), Fraction(1, 4)):
            key = f"{'+' if s > 0 else '-'}(2-u)2^E{'+' if s > 0 else '-'}{float(f)}u2^E"
            ops = r.realize({dut.K: s * top, tail_pos: s * f * u * _pow2(E)}) if dut.K else None
            out[key] = "untested" if ops is None else f"0x{dut(*ops):0{fs.hex_digits}x}"
    return out


def _inf_bits(fmt: FormatId, negative: bool = False) -> int | None:
    return infinity(fmt, negative) if spec_of(fmt).has_infinity else None


def _nan_zero_times_inf(dut: Dut) -> tuple[bool | None, int | None]:
    if dut.K == 0:
        return None, None
    a, b = _zeros(dut)
    if _inf_bits(dut.b_fmt) is not None:
        b[0] = _inf_bits(dut.b_fmt)
    elif _inf_bits(dut.a_fmt) is not None:
        a[0] = _inf_bits(dut.a_fmt)
    else:
        return None, None
    raw = dut(encode(0, dut.c_fmt), a, b)
    return decode(raw, dut.d_fmt).is_nan, raw


def _nan_inf_minus_inf(dut: Dut) -> tuple[bool | None, int | None]:
    a, b = _zeros(dut)
    one_a = encode(1, dut.a_fmt) if spec_of(dut.a_fmt).signed else None
    one_b = encode(1, dut.b_fmt)
    c = encode(0, dut.c_fmt)
    if dut.K >= 2 and _inf_bits(dut.a_fmt) is not None:
        a[0], b[0] = _inf_bits(dut.a_fmt), one_b
        a[1], b[1] = _inf_bits(dut.a_fmt, True), one_b
    elif dut.K >= 2 and _inf_bits(dut.b_fmt) is not None and one_a is not None:
        a[0], b[0] = one_a, _inf_bits(dut.b_fmt)
        a[1], b[1] = one_a, _inf_bits(dut.b_fmt, True)
    elif dut.K >= 1 and _inf_bits(dut.c_fmt) is not None and _inf_bits(dut.a_fmt) is not None:
        a[0], b[0] = _inf_bits(dut.a_fmt), one_b
        c = _inf_bits(dut.c_fmt, True)
    else:
        return None, None
    raw = dut(c, a, b)
    return decode(raw, dut.d_fmt).is_nan, raw


def probe_special(dut: Dut, tree: SummationTreeShape | None = None) -> tuple[dict[str, Tri], dict[str, str]]:
    """The special-value battery; returns tri-state flags and raw observations."""
    raw: dict[str, str] = {}
    fa, fb = _flush_ab_in(dut)
    ab = None if fa is None and fb is None else bool(fa) or bool(fb)
    raw["flush_a_in"] = str(_tri(fa))
    raw["flush_b_in"] = str(_tri(fb))
    nan1, nan1_raw = _nan_zero_times_inf(dut)
    nan2, nan2_raw = _nan_inf_minus_inf(dut)
    digits = spec_of(dut.d_fmt).hex_digits
    for key, bits in (("nan_bits_zero_times_inf", nan1_raw), ("nan_bits_inf_minus_inf", nan2_raw)):
        if bits is not None:
            raw[key] = f"0x{bits:0{digits}x}"
    raw.update({f"overflow_edge {k}": v for k, v in _overflow_edges(dut).items()})
    flags = {
        "flush_c_in": _tri(_flush_c_in(dut)),
        "flush_ab_in": _tri(ab),
        "flush_post_mul": _tri(_flush_post_mul(dut)),
        "flush_post_add": _tri(_flush_post_add(dut)),
        "neg_zero_out": _tri(_neg_zero_out(dut)),
        "product_overflow": _tri(_product_overflow(dut)),
        "intermediate_overflow": _tri(_intermediate_overflow(dut, tree)),
        "nan_from_zero_times_inf": _tri(nan1),
        "nan_from_inf_minus_inf": _tri(nan2),
    }
    return flags, raw


# -- full report ----------------------------------------------------------------


@dataclass
class DissectionReport:
    name: str
    K: int
    tree: SummationTreeShape
    precision: dict[int, PositionPrecision]
    precision_bits: int | None
    c_rounding: RoundingResult
    product_rounding: RoundingResult
    final_rounding: RoundingResult
    output_bits: int | None
    c_rz_threshold: int | None
    flags: dict[str, Tri]
    raw: dict[str, str] = field(default_factory=dict)

    @property
    def c_far_rounds_to_zero(self) -> Tri:
        if self.c_rounding.mode not in (R.RD, R.RU, R.RA):
            return Tri.UNTESTED
        return _tri(self.c_rz_threshold is not None)

    def position_name(self, p: int) -> str:
        return "c" if p == self.K else f"p{p}"

    def sections(self) -> dict[str, dict[str, str]]:
        tree = {"shape": str(self.tree)}
        if self.tree.matches and len(self.tree.matches) > 1:
            tree["equivalent_shapes"] = ", ".join(self.tree.matches)
        if self.tree.log2_range is not None:
            tree["log2_x_over_y"] = str(self.tree.log2_range)
        if self.tree.note:
            tree["note"] = self.tree.note
        prec = {"bits": "unknown" if self.precision_bits is None else str(self.precision_bits)}
        prec.update({self.position_name(p): str(v) for p, v in sorted(self.precision.items())})
        rounding = {
            "c": str(self.c_rounding),
            "p0": str(self.product_rounding),
            "final": str(self.final_rounding),
            "output_bits": "unknown" if self.output_bits is None else str(self.output_bits),
            "c_far_rounds_to_zero": str(self.c_far_rounds_to_zero),
        }
        if self.c_rz_threshold is not None:
            rounding["c_rz_below"] = f"e_max-{self.c_rz_threshold - 1}"
        return {
            "instruction": {"name": self.name, "K": str(self.K)},
            "tree": tree,
            "precision": prec,
            "rounding": rounding,
            "flags": {k: str(v) for k, v in self.flags.items()},
            "raw": dict(self.raw),
        }

    def to_text(self) -> str:
        lines = []
        for sec, kv in self.sections().items():
            lines.append(f"[{sec}]")
            lines.extend(f"{k} = {v}" for k, v in kv.items())
            lines.append("")
        return "\n".join(lines)

    def to_json(self) -> str:
        return json.dumps(self.sections(), indent=2, sort_keys=False)


def dissect(dut: Dut) -> DissectionReport:
    tree = probe_order(dut)
    prec = probe_precision(dut, tree)
    K = dut.K
    c_rnd = probe_rounding(dut, K, prec[K], tree)
    p_rnd = probe_rounding(dut, 0, prec[0], tree) if K else RoundingResult(None)
    out_bits = probe_output_bits(dut, tree)
    final = probe_final_rounding(dut, tree, out_bits)
    threshold = None
    if c_rnd.mode in (R.RD, R.RU, R.RA):
        threshold = probe_c_rz_threshold(dut, prec[K], tree)
    flags, raw = probe_special(dut, tree)
    return DissectionReport(
        dut.name, K, tree, prec, summarize_precision(prec), c_rnd, p_rnd, final, out_bits, threshold, flags, raw
    )

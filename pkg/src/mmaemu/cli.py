"""``mmaemu`` command line.

Exit status: 0 on success, 1 on usage, parse or operand errors, 2 when
``compare`` finds the two instructions disagree.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path
from typing import Sequence

from . import matrix
from .catalog import InstructionDescriptor, InstructionNotFound, OperandError, instructions, lookup, matmul
from .dissect import Dut, dissect
from .experiments import bias_experiment
from .formats import spec_of, to_float

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_DIVERGENT = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _read_opt(path: str | None) -> matrix.MatrixBuffer | None:
    return matrix.read(path) if path else None


def _operands(args) -> tuple:
    missing = [f"--{n}" for n in ("a", "b", "c") if getattr(args, n) is None]
    if missing:
        raise UsageError(f"missing input file(s): {', '.join(missing)}")
    return (
        matrix.read(args.a),
        matrix.read(args.b),
        matrix.read(args.c),
        _read_opt(args.asf),
        _read_opt(args.bsf),
    )


def _run(desc: InstructionDescriptor, ops) -> matrix.MatrixBuffer:
    A, B, C, A_sf, B_sf = ops
    if desc.scale is not None and (A_sf is None or B_sf is None):
        raise OperandError(f"{desc.name} requires scale-factor files --asf and --bsf")
    return matmul(desc, A, B, C, A_sf, B_sf)


def cmd_compute(args) -> int:
    if len(args.arch) != 1 or len(args.inst) != 1:
        raise UsageError("compute takes exactly one --arch and one --inst")
    desc = lookup(args.arch[0], args.inst[0])
    _emit(matrix.emit(_run(desc, _operands(args))), args.out)
    return EXIT_OK


def _abs_diff(x: int, y: int, fx, fy) -> float:
    vx, vy = to_float(x, fx), to_float(y, fy)
    if math.isnan(vx) and math.isnan(vy):
        return 0.0
    if math.isnan(vx) or math.isnan(vy) or math.isinf(vx) or math.isinf(vy):
        return 0.0 if vx == vy else math.inf
    return abs(vx - vy)


def cmd_compare(args) -> int:
    if len(args.inst) != 2 or len(args.arch) not in (1, 2):
        raise UsageError("compare takes two --inst and one or two --arch")
    archs = args.arch * 2 if len(args.arch) == 1 else args.arch
    d1, d2 = lookup(archs[0], args.inst[0]), lookup(archs[1], args.inst[1])
    ops = _operands(args)
    D1, D2 = _run(d1, ops), _run(d2, ops)
    w1, w2 = spec_of(D1.fmt).hex_digits, spec_of(D2.fmt).hex_digits
    diffs = []
    for i in range(D1.rows):
        for j in range(D1.cols):
            x, y = D1[i, j], D2[i, j]
            dv = _abs_diff(x, y, D1.fmt, D2.fmt)
            if (x != y if D1.fmt is D2.fmt else dv != 0):
                diffs.append((i, j, x, y, dv))
    max_diff = max((t[4] for t in diffs), default=0.0)
    if args.format == "json":
        text = json.dumps(
            {
                "first": f"{d1.arch}:{d1.name}",
                "second": f"{d2.arch}:{d2.name}",
                "elements": D1.rows * D1.cols,
                "differing": len(diffs),
                "max_abs_difference": max_diff if math.isfinite(max_diff) else "inf",
                "diffs": [{"row": i, "col": j, "first": f"{x:0{w1}x}", "second": f"{y:0{w2}x}"} for i, j, x, y, _ in diffs],
            },
            indent=2,
        ) + "\n"
    elif args.format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("row", "col", "first_hex", "second_hex", "abs_difference"))
        for i, j, x, y, dv in diffs:
            w.writerow((i, j, f"{x:0{w1}x}", f"{y:0{w2}x}", repr(dv)))
        text = buf.getvalue()
    else:
        lines = [f"{i} {j} {x:0{w1}x} {y:0{w2}x}" for i, j, x, y, _ in diffs]
        lines.append(f"{d1.arch}:{d1.name} vs {d2.arch}:{d2.name}: {len(diffs)} of {D1.rows * D1.cols} elements differ")
        lines.append(f"max abs difference = {max_diff!r}")
        lines.append("divergent" if diffs else "identical")
        text = "\n".join(lines) + "\n"
    _emit(text, args.out)
    return EXIT_DIVERGENT if diffs else EXIT_OK


def cmd_dissect(args) -> int:
    if len(args.arch) != 1 or len(args.inst) != 1:
        raise UsageError("dissect takes exactly one --arch and one --inst")
    if args.format == "csv":
        raise UsageError("dissect supports --format text or json")
    rep = dissect(Dut.from_descriptor(lookup(args.arch[0], args.inst[0])))
    _emit(rep.to_json() + "\n" if args.format == "json" else rep.to_text(), args.out)
    return EXIT_OK


def cmd_bias(args) -> int:
    if args.samples < 0:
        raise UsageError("--samples must be non-negative")
    res = bias_experiment(args.samples, args.seed)
    if args.format == "csv":
        _emit(res.to_csv(), args.out)
        sys.stderr.write(res.summary.to_text())
        return EXIT_OK
    if args.out:
        Path(args.out).write_text(res.to_csv())
    if args.format == "json":
        sys.stdout.write(json.dumps(res.summary.to_dict(), indent=2) + "\n")
    else:
        sys.stdout.write(res.summary.to_text())
    return EXIT_OK


_LIST_COLUMNS = ("arch", "name", "M", "N", "K", "a", "b", "c", "d", "algorithm", "F", "G", "scale")


def _list_row(d: InstructionDescriptor) -> tuple:
    p = d.params
    scale = f"{d.scale.sf_fmt.value}/{d.scale.block}" if d.scale else ""
    return (
        d.arch.value, d.name, d.M, d.N, d.K, d.a_fmt.value, d.b_fmt.value, d.c_fmt.value, d.d_fmt.value,
        p.algorithm.value, "" if p.F is None else p.F, "" if p.G is None else p.G, scale,
    )


def cmd_list(args) -> int:
    if len(args.arch) > 1:
        raise UsageError("list takes at most one --arch")
    rows = [_list_row(d) for d in instructions(args.arch[0] if args.arch else None)]
    if args.format == "json":
        text = json.dumps([dict(zip(_LIST_COLUMNS, r)) for r in rows], indent=2) + "\n"
    else:
        buf = io.StringIO()
        w = csv.writer(buf, delimiter="," if args.format == "csv" else "\t", lineterminator="\n")
        w.writerow(_LIST_COLUMNS)
        w.writerows(rows)
        text = buf.getvalue()
    _emit(text, args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mmaemu", description="Emulate and dissect GPU matrix multiply-add instructions.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--arch", action="append", default=[], help="architecture (repeat for compare)")
        sp.add_argument("--inst", action="append", default=[], help="instruction name (repeat for compare)")
        sp.add_argument("--out", help="output file (default: stdout)")
        sp.add_argument("--format", choices=("text", "json", "csv"), default="text")

    def operands(sp):
        for n in ("a", "b", "c"):
            sp.add_argument(f"--{n}", help=f"matrix file for {n.upper()}")
        sp.add_argument("--asf", help="scale factors of A")
        sp.add_argument("--bsf", help="scale factors of B")

    sp = sub.add_parser("compute", help="D = A x B + C through one instruction")
    common(sp)
    operands(sp)
    sp.set_defaults(fn=cmd_compute)

    sp = sub.add_parser("compare", help="run the same inputs through two instructions")
    common(sp)
    operands(sp)
    sp.set_defaults(fn=cmd_compare)

    sp = sub.add_parser("dissect", help="probe an instruction as a black box")
    common(sp)
    sp.set_defaults(fn=cmd_dissect)

    sp = sub.add_parser("bias-experiment", help="RD versus RZ deviation from an FP64 reference")
    common(sp)
    sp.add_argument("--samples", type=int, default=100_000)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(fn=cmd_bias)

    sp = sub.add_parser("list", help="dump the instruction catalog")
    common(sp)
    sp.set_defaults(fn=cmd_list)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (UsageError, InstructionNotFound, OperandError, matrix.MatrixFileError, OSError) as e:
        sys.stderr.write(f"mmaemu: error: {e}\n")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())

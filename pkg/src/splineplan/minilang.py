"""The kernel mini-language: a straight-line three-address program format.

Programs are SSA op lists over float registers, with constant tables, plane
tests folded into select operations, and the two texture-style reads
(`fetch_nearest`, `fetch_linear`) as the only effects. There are no
data-dependent branches; predication happens through `select`.

The same op list backs three consumers: the plan compiler builds it, the text
emitter renders it (and the parser reads it back), and the runtime executes
it. Rendering uses shortest round-trip float repr so parse(render(p)) executes
bit-identically to p.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Sequence

MAGIC = "splinekernel"
VERSION = "1"

_BINOPS = {"add": "+", "sub": "-", "mul": "*", "div": "/", "mod": "%"}
_CMPOPS = {"ge": ">=", "eq": "==", "lt": "<"}
_SYM_TO_OP = {v: k for k, v in {**_BINOPS, **_CMPOPS}.items()}


@dataclass(frozen=True)
class Op:
    kind: str
    args: tuple = ()


@dataclass
class KernelProgram:
    """dim args in, one float out, plus named constant tables."""

    dim: int
    tables: dict
    ops: list
    result: int

    def render(self) -> str:
        lines = [f"{MAGIC} {VERSION}", f"meta dim {self.dim}"]
        for name in sorted(self.tables):
            vals = " ".join(repr(float(v)) for v in self.tables[name])
            lines.append(f"table {name} {vals}")
        lines.append("code")
        for i, op in enumerate(self.ops):
            lines.append(f"let r{i} = {_render_expr(op)}")
        lines.append(f"return r{self.result}")
        return "\n".join(lines) + "\n"


def _render_expr(op: Op) -> str:
    k = op.kind
    if k == "arg":
        return f"arg({op.args[0]})"
    if k == "const":
        return f"const({op.args[0]!r})"
    if k in _BINOPS:
        return f"r{op.args[0]} {_BINOPS[k]} r{op.args[1]}"
    if k in _CMPOPS:
        return f"r{op.args[0]} {_CMPOPS[k]} r{op.args[1]}"
    if k == "floor":
        return f"floor(r{op.args[0]})"
    if k == "select":
        return f"select(r{op.args[0]}, r{op.args[1]}, r{op.args[2]})"
    if k in ("fetch_nearest", "fetch_linear"):
        coords = ", ".join(f"r{a}" for a in op.args[1:])
        return f"{k}({op.args[0]}, {coords})"
    if k == "lookup":
        return f"lookup({op.args[0]}, r{op.args[1]})"
    raise ValueError(f"unknown op kind {k}")


_LET_RE = re.compile(r"^let r(\d+) = (.+)$")
_CALL_RE = re.compile(r"^(\w+)\((.*)\)$")
_BIN_RE = re.compile(r"^r(\d+) (\+|-|\*|/|%|>=|==|<) r(\d+)$")


class KernelParseError(ValueError):
    pass


def parse_kernel(text: str) -> KernelProgram:
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines or not lines[0].startswith(MAGIC):
        raise KernelParseError("not a kernel document")
    if lines[0].split()[1] != VERSION:
        raise KernelParseError("unsupported kernel version")
    dim = None
    tables: dict = {}
    ops: list[Op] = []
    result = None
    in_code = False
    for ln in lines[1:]:
        if ln.startswith("meta dim "):
            dim = int(ln.split()[2])
        elif ln.startswith("table "):
            parts = ln.split()
            tables[parts[1]] = [float(v) for v in parts[2:]]
        elif ln == "code":
            in_code = True
        elif ln.startswith("return "):
            result = int(ln.split()[1][1:])
        elif in_code:
            m = _LET_RE.match(ln)
            if not m:
                raise KernelParseError(f"bad statement: {ln}")
            idx = int(m.group(1))
            if idx != len(ops):
                raise KernelParseError(f"register out of order: {ln}")
            ops.append(_parse_expr(m.group(2), tables))
        else:
            raise KernelParseError(f"unexpected line: {ln}")
    if dim is None or result is None or result >= len(ops):
        raise KernelParseError("incomplete kernel document")
    return KernelProgram(dim, tables, ops, result)


def _parse_expr(expr: str, tables: dict) -> Op:
    m = _BIN_RE.match(expr)
    if m:
        return Op(_SYM_TO_OP[m.group(2)], (int(m.group(1)), int(m.group(3))))
    m = _CALL_RE.match(expr)
    if not m:
        raise KernelParseError(f"bad expression: {expr}")
    fn, inner = m.group(1), m.group(2)
    args = [a.strip() for a in inner.split(",")] if inner.strip() else []
    if fn == "arg":
        return Op("arg", (int(args[0]),))
    if fn == "const":
        return Op("const", (float(args[0]),))
    if fn == "floor":
        return Op("floor", (_reg(args[0]),))
    if fn == "select":
        return Op("select", tuple(_reg(a) for a in args))
    if fn in ("fetch_nearest", "fetch_linear"):
        return Op(fn, (int(args[0]),) + tuple(_reg(a) for a in args[1:]))
    if fn == "lookup":
        if args[0] not in tables:
            raise KernelParseError(f"unknown table {args[0]}")
        return Op("lookup", (args[0], _reg(args[1])))
    raise KernelParseError(f"unknown function {fn}")


def _reg(token: str) -> int:
    if not token.startswith("r"):
        raise KernelParseError(f"expected register, got {token}")
    return int(token[1:])


def execute(
    program: KernelProgram,
    point: Sequence[float],
    fetch_nearest: Callable,
    fetch_linear: Callable,
) -> float:
    """Run the program at one point; fetches receive (coset, coords tuple)."""
    regs = [0.0] * len(program.ops)
    tables = program.tables
    for i, op in enumerate(program.ops):
        k = op.kind
        a = op.args
        if k == "arg":
            regs[i] = float(point[a[0]])
        elif k == "const":
            regs[i] = a[0]
        elif k == "add":
            regs[i] = regs[a[0]] + regs[a[1]]
        elif k == "sub":
            regs[i] = regs[a[0]] - regs[a[1]]
        elif k == "mul":
            regs[i] = regs[a[0]] * regs[a[1]]
        elif k == "div":
            den = regs[a[1]]
            regs[i] = regs[a[0]] / den if den != 0.0 else math.inf
        elif k == "mod":
            regs[i] = math.fmod(regs[a[0]], regs[a[1]])
        elif k == "floor":
            regs[i] = float(math.floor(regs[a[0]]))
        elif k == "ge":
            regs[i] = 1.0 if regs[a[0]] >= regs[a[1]] else 0.0
        elif k == "eq":
            regs[i] = 1.0 if regs[a[0]] == regs[a[1]] else 0.0
        elif k == "lt":
            regs[i] = 1.0 if regs[a[0]] < regs[a[1]] else 0.0
        elif k == "select":
            regs[i] = regs[a[1]] if regs[a[0]] != 0.0 else regs[a[2]]
        elif k == "fetch_nearest":
            regs[i] = fetch_nearest(a[0], tuple(regs[j] for j in a[1:]))
        elif k == "fetch_linear":
            regs[i] = fetch_linear(a[0], tuple(regs[j] for j in a[1:]))
        elif k == "lookup":
            regs[i] = float(tables[a[0]][int(regs[a[1]])])
        else:
            raise ValueError(f"unknown op kind {k}")
    return regs[program.result]


class ProgramBuilder:
    """Append-only SSA builder with tiny constant/arg dedup."""

    def __init__(self, dim: int):
        self.dim = dim
        self.ops: list[Op] = []
        self.tables: dict = {}
        self._const_cache: dict = {}
        self._arg_cache: dict = {}

    def emit(self, kind: str, *args) -> int:
        self.ops.append(Op(kind, tuple(args)))
        return len(self.ops) - 1

    def arg(self, i: int) -> int:
        if i not in self._arg_cache:
            self._arg_cache[i] = self.emit("arg", i)
        return self._arg_cache[i]

    def const(self, v: float) -> int:
        v = float(v)
        key = repr(v)
        if key not in self._const_cache:
            self._const_cache[key] = self.emit("const", v)
        return self._const_cache[key]

    def table(self, name: str, values: Sequence[float]) -> str:
        self.tables[name] = [float(v) for v in values]
        return name

    def finish(self, result: int) -> KernelProgram:
        return KernelProgram(self.dim, self.tables, self.ops, result)

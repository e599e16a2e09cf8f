"""Exact rational scalars, matrices, multivariate polynomials and Horner programs.

Everything the analysis stages compute with lives here and is exact: hyperplane
side decisions must never depend on floating-point rounding, so floats only
appear at the very end of the pipeline (plan interpretation / rendering).

Rationals are gmpy2.mpq when available (much faster), stdlib Fraction otherwise.
Vectors are plain tuples of rationals; matrices are immutable row tuples.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

try:
    from gmpy2 import mpq as _mpq

    def rat(num=0, den=1):
        """Build a rational in lowest terms with positive denominator."""
        if den == 1:
            return _mpq(num)
        return _mpq(num, den)

    _RAT_TYPES = (type(_mpq(0)), int)
except ImportError:  # pragma: no cover - exercised only without gmpy2
    from fractions import Fraction as _Fraction

    def rat(num=0, den=1):
        return _Fraction(num, den)

    _RAT_TYPES = (_Fraction, int)

R0 = rat(0)
R1 = rat(1)


def rat_from_str(text: str):
    """Parse 'num' or 'num/den' into a rational."""
    text = text.strip()
    if "/" in text:
        num, den = text.split("/")
        return rat(int(num), int(den))
    return rat(int(text))


def rat_to_str(q) -> str:
    q = rat(q)
    if q.denominator == 1:
        return str(q.numerator)
    return f"{q.numerator}/{q.denominator}"


def rfloor(q) -> int:
    """Exact floor of a rational."""
    q = rat(q)
    return int(q.numerator // q.denominator)


def vec(values: Iterable) -> tuple:
    return tuple(rat(v) for v in values)


def vadd(a: Sequence, b: Sequence) -> tuple:
    return tuple(x + y for x, y in zip(a, b))


def vsub(a: Sequence, b: Sequence) -> tuple:
    return tuple(x - y for x, y in zip(a, b))


def vscale(c, a: Sequence) -> tuple:
    c = rat(c)
    return tuple(c * x for x in a)


def vdot(a: Sequence, b: Sequence):
    acc = R0
    for x, y in zip(a, b):
        acc += x * y
    return acc


def vneg(a: Sequence) -> tuple:
    return tuple(-x for x in a)


class RationalMatrix:
    """Immutable dense matrix of rationals."""

    __slots__ = ("rows", "cols", "a")

    def __init__(self, rows_data: Sequence[Sequence]):
        self.a = tuple(tuple(rat(v) for v in row) for row in rows_data)
        self.rows = len(self.a)
        self.cols = len(self.a[0]) if self.a else 0
        if any(len(row) != self.cols for row in self.a):
            raise ValueError("ragged matrix rows")

    @staticmethod
    def identity(n: int) -> "RationalMatrix":
        return RationalMatrix([[R1 if i == j else R0 for j in range(n)] for i in range(n)])

    @staticmethod
    def diagonal(diag: Sequence) -> "RationalMatrix":
        d = vec(diag)
        n = len(d)
        return RationalMatrix([[d[i] if i == j else R0 for j in range(n)] for i in range(n)])

    @staticmethod
    def from_columns(cols: Sequence[Sequence]) -> "RationalMatrix":
        cols = [vec(c) for c in cols]
        return RationalMatrix([[c[i] for c in cols] for i in range(len(cols[0]))])

    def column(self, j: int) -> tuple:
        return tuple(row[j] for row in self.a)

    def columns(self) -> list:
        return [self.column(j) for j in range(self.cols)]

    def transpose(self) -> "RationalMatrix":
        return RationalMatrix([[self.a[i][j] for i in range(self.rows)] for j in range(self.cols)])

    def matvec(self, v: Sequence) -> tuple:
        if len(v) != self.cols:
            raise ValueError("dimension mismatch")
        return tuple(vdot(row, v) for row in self.a)

    def matmul(self, other: "RationalMatrix") -> "RationalMatrix":
        if self.cols != other.rows:
            raise ValueError("dimension mismatch")
        ot = other.transpose()
        return RationalMatrix([[vdot(row, col) for col in ot.a] for row in self.a])

    def scaled(self, c) -> "RationalMatrix":
        c = rat(c)
        return RationalMatrix([[c * v for v in row] for row in self.a])

    def det(self):
        if self.rows != self.cols:
            raise ValueError("det of non-square matrix")
        n = self.rows
        m = [list(row) for row in self.a]
        det = R1
        for col in range(n):
            pivot = next((r for r in range(col, n) if m[r][col] != 0), None)
            if pivot is None:
                return R0
            if pivot != col:
                m[col], m[pivot] = m[pivot], m[col]
                det = -det
            det *= m[col][col]
            inv = 1 / m[col][col]
            for r in range(col + 1, n):
                if m[r][col] != 0:
                    f = m[r][col] * inv
                    for c in range(col, n):
                        m[r][c] -= f * m[col][c]
        return det

    def rank(self) -> int:
        m = [list(row) for row in self.a]
        rank = 0
        for col in range(self.cols):
            pivot = next((r for r in range(rank, self.rows) if m[r][col] != 0), None)
            if pivot is None:
                continue
            m[rank], m[pivot] = m[pivot], m[rank]
            inv = 1 / m[rank][col]
            for r in range(rank + 1, self.rows):
                if m[r][col] != 0:
                    f = m[r][col] * inv
                    for c in range(col, self.cols):
                        m[r][c] -= f * m[rank][c]
            rank += 1
            if rank == self.rows:
                break
        return rank

    def inverse(self) -> "RationalMatrix":
        if self.rows != self.cols:
            raise ValueError("inverse of non-square matrix")
        n = self.rows
        m = [list(row) + [R1 if i == j else R0 for j in range(n)] for i, row in enumerate(self.a)]
        for col in range(n):
            pivot = next((r for r in range(col, n) if m[r][col] != 0), None)
            if pivot is None:
                raise ValueError("singular matrix")
            m[col], m[pivot] = m[pivot], m[col]
            inv = 1 / m[col][col]
            m[col] = [v * inv for v in m[col]]
            for r in range(n):
                if r != col and m[r][col] != 0:
                    f = m[r][col]
                    m[r] = [v - f * w for v, w in zip(m[r], m[col])]
        return RationalMatrix([row[n:] for row in m])

    def solve(self, b: Sequence):
        """Solve self @ x = b; returns None if inconsistent, any solution otherwise."""
        rows, cols = self.rows, self.cols
        m = [list(row) + [rat(b[i])] for i, row in enumerate(self.a)]
        pivots = []
        rank = 0
        for col in range(cols):
            pivot = next((r for r in range(rank, rows) if m[r][col] != 0), None)
            if pivot is None:
                continue
            m[rank], m[pivot] = m[pivot], m[rank]
            inv = 1 / m[rank][col]
            m[rank] = [v * inv for v in m[rank]]
            for r in range(rows):
                if r != rank and m[r][col] != 0:
                    f = m[r][col]
                    m[r] = [v - f * w for v, w in zip(m[r], m[rank])]
            pivots.append(col)
            rank += 1
        for r in range(rank, rows):
            if m[r][cols] != 0:
                return None
        x = [R0] * cols
        for r, col in enumerate(pivots):
            x[col] = m[r][cols]
        return tuple(x)

    def nullspace(self) -> list:
        """Basis vectors (tuples) spanning the right null space."""
        rows, cols = self.rows, self.cols
        m = [list(row) for row in self.a]
        pivots: list[int] = []
        rank = 0
        for col in range(cols):
            pivot = next((r for r in range(rank, rows) if m[r][col] != 0), None)
            if pivot is None:
                continue
            m[rank], m[pivot] = m[pivot], m[rank]
            inv = 1 / m[rank][col]
            m[rank] = [v * inv for v in m[rank]]
            for r in range(rows):
                if r != rank and m[r][col] != 0:
                    f = m[r][col]
                    m[r] = [v - f * w for v, w in zip(m[r], m[rank])]
            pivots.append(col)
            rank += 1
        basis = []
        free = [c for c in range(cols) if c not in pivots]
        for fc in free:
            v = [R0] * cols
            v[fc] = R1
            for r, pc in enumerate(pivots):
                v[pc] = -m[r][fc]
            basis.append(tuple(v))
        return basis

    def is_integral(self) -> bool:
        return all(v.denominator == 1 for row in self.a for v in row)

    def __eq__(self, other) -> bool:
        return isinstance(other, RationalMatrix) and self.a == other.a

    def __hash__(self) -> int:
        return hash(self.a)

    def __repr__(self) -> str:
        return f"RationalMatrix({[[rat_to_str(v) for v in row] for row in self.a]})"


class MultiPoly:
    """Multivariate polynomial: map from exponent tuples to rational coefficients.

    Zero-coefficient terms are never stored.
    """

    __slots__ = ("dim", "terms")

    def __init__(self, dim: int, terms: Mapping[tuple, object] | None = None):
        self.dim = dim
        clean = {}
        if terms:
            for exps, coeff in terms.items():
                coeff = rat(coeff)
                if coeff != 0:
                    exps = tuple(int(e) for e in exps)
                    if len(exps) != dim or any(e < 0 for e in exps):
                        raise ValueError(f"bad exponent vector {exps} for dim {dim}")
                    clean[exps] = clean.get(exps, R0) + coeff
                    if clean[exps] == 0:
                        del clean[exps]
        self.terms = clean

    @staticmethod
    def constant(dim: int, value) -> "MultiPoly":
        return MultiPoly(dim, {tuple([0] * dim): rat(value)})

    @staticmethod
    def variable(dim: int, index: int) -> "MultiPoly":
        exps = [0] * dim
        exps[index] = 1
        return MultiPoly(dim, {tuple(exps): R1})

    @staticmethod
    def affine(dim: int, coeffs: Sequence, const) -> "MultiPoly":
        terms = {tuple(0 for _ in range(dim)): rat(const)}
        for i, c in enumerate(coeffs):
            e = [0] * dim
            e[i] = 1
            terms[tuple(e)] = rat(c)
        return MultiPoly(dim, terms)

    def is_zero(self) -> bool:
        return not self.terms

    def degree(self) -> int:
        if not self.terms:
            return 0
        return max(sum(e) for e in self.terms)

    def __add__(self, other: "MultiPoly") -> "MultiPoly":
        terms = dict(self.terms)
        for e, c in other.terms.items():
            terms[e] = terms.get(e, R0) + c
        return MultiPoly(self.dim, terms)

    def __sub__(self, other: "MultiPoly") -> "MultiPoly":
        terms = dict(self.terms)
        for e, c in other.terms.items():
            terms[e] = terms.get(e, R0) - c
        return MultiPoly(self.dim, terms)

    def __neg__(self) -> "MultiPoly":
        return MultiPoly(self.dim, {e: -c for e, c in self.terms.items()})

    def __mul__(self, other: "MultiPoly") -> "MultiPoly":
        terms: dict = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                prod = c1 * c2
                if e in terms:
                    terms[e] += prod
                else:
                    terms[e] = prod
        return MultiPoly(self.dim, terms)

    def scaled(self, c) -> "MultiPoly":
        c = rat(c)
        if c == 0:
            return MultiPoly(self.dim)
        return MultiPoly(self.dim, {e: c * v for e, v in self.terms.items()})

    def eval(self, point: Sequence):
        """Exact evaluation at a rational point."""
        point = [rat(p) for p in point]
        acc = R0
        for exps, coeff in self.terms.items():
            term = coeff
            for x, e in zip(point, exps):
                if e:
                    term *= x**e
            acc += term
        return acc

    def eval_float(self, point: Sequence) -> float:
        acc = 0.0
        for exps, coeff in self.terms.items():
            term = float(coeff)
            for x, e in zip(point, exps):
                if e:
                    term *= float(x) ** e
            acc += term
        return acc

    def __eq__(self, other) -> bool:
        return isinstance(other, MultiPoly) and self.dim == other.dim and self.terms == other.terms

    def __hash__(self) -> int:
        return hash((self.dim, frozenset(self.terms.items())))

    def __repr__(self) -> str:
        if not self.terms:
            return "MultiPoly(0)"
        bits = []
        for exps in sorted(self.terms, key=lambda e: (sum(e), e), reverse=True):
            mono = "*".join(f"x{i}^{e}" for i, e in enumerate(exps) if e) or "1"
            bits.append(f"{rat_to_str(self.terms[exps])}*{mono}")
        return "MultiPoly(" + " + ".join(bits) + ")"


def poly_compose_affine(p: MultiPoly, A: RationalMatrix, b: Sequence) -> MultiPoly:
    """Return q with q(x) = p(A x + b).

    A is square with the polynomial's dimension; b is a vector of the same size.
    """
    if A.rows != p.dim or A.cols != p.dim or len(b) != p.dim:
        raise ValueError("dimension mismatch in affine composition")
    subs = [MultiPoly.affine(p.dim, A.a[i], b[i]) for i in range(p.dim)]
    # Cache powers of each substituted coordinate up to its maximum exponent.
    max_exp = [0] * p.dim
    for exps in p.terms:
        for i, e in enumerate(exps):
            max_exp[i] = max(max_exp[i], e)
    powers: list[list[MultiPoly]] = []
    for i in range(p.dim):
        row = [MultiPoly.constant(p.dim, 1)]
        for _ in range(max_exp[i]):
            row.append(row[-1] * subs[i])
        powers.append(row)
    acc = MultiPoly(p.dim)
    for exps, coeff in p.terms.items():
        term = MultiPoly.constant(p.dim, coeff)
        for i, e in enumerate(exps):
            if e:
                term = term * powers[i][e]
        acc = acc + term
    return acc


def poly_integral_over_simplex(p: MultiPoly, vertices: Sequence[Sequence]):
    """Exact integral of p over the simplex spanned by s+1 vertices in R^s."""
    s = p.dim
    if len(vertices) != s + 1:
        raise ValueError("simplex needs dim+1 vertices")
    v0 = vec(vertices[0])
    U = RationalMatrix.from_columns([vsub(vec(v), v0) for v in vertices[1:]])
    jac = abs(U.det())
    if jac == 0:
        return R0
    q = poly_compose_affine(p, U, v0)
    acc = R0
    for exps, coeff in q.terms.items():
        num = R1
        for e in exps:
            num *= _factorial(e)
        acc += coeff * num / _factorial(sum(exps) + s)
    return acc * jac


_FACT_CACHE = [1, 1]


def _factorial(n: int) -> int:
    while len(_FACT_CACHE) <= n:
        _FACT_CACHE.append(_FACT_CACHE[-1] * len(_FACT_CACHE))
    return _FACT_CACHE[n]


@dataclass(frozen=True)
class HornerOp:
    """One SSA operation; `kind` is var/const/add/mul/fma."""

    kind: str
    arg0: object = None
    arg1: object = None
    arg2: object = None


class HornerProgram:
    """Straight-line single-assignment program evaluating a polynomial.

    Register i holds the result of ops[i]; the last register is the value.
    """

    __slots__ = ("dim", "ops")

    def __init__(self, dim: int, ops: Sequence[HornerOp]):
        self.dim = dim
        self.ops = tuple(ops)

    def mul_count(self) -> int:
        return sum(1 for op in self.ops if op.kind in ("mul", "fma"))

    def eval(self, point: Sequence):
        point = [rat(p) for p in point]
        regs: list = []
        for op in self.ops:
            if op.kind == "var":
                regs.append(point[op.arg0])
            elif op.kind == "const":
                regs.append(op.arg0)
            elif op.kind == "add":
                regs.append(regs[op.arg0] + regs[op.arg1])
            elif op.kind == "mul":
                regs.append(regs[op.arg0] * regs[op.arg1])
            elif op.kind == "fma":
                regs.append(regs[op.arg0] * regs[op.arg1] + regs[op.arg2])
            else:
                raise ValueError(f"unknown op {op.kind}")
        return regs[-1]

    def eval_float(self, point: Sequence) -> float:
        regs: list = []
        for op in self.ops:
            if op.kind == "var":
                regs.append(float(point[op.arg0]))
            elif op.kind == "const":
                regs.append(float(op.arg0))
            elif op.kind == "add":
                regs.append(regs[op.arg0] + regs[op.arg1])
            elif op.kind == "mul":
                regs.append(regs[op.arg0] * regs[op.arg1])
            else:
                regs.append(regs[op.arg0] * regs[op.arg1] + regs[op.arg2])
        return regs[-1]

    def to_poly(self) -> MultiPoly:
        """Symbolic expansion; used to verify factorizations exactly."""
        regs: list[MultiPoly] = []
        for op in self.ops:
            if op.kind == "var":
                regs.append(MultiPoly.variable(self.dim, op.arg0))
            elif op.kind == "const":
                regs.append(MultiPoly.constant(self.dim, op.arg0))
            elif op.kind == "add":
                regs.append(regs[op.arg0] + regs[op.arg1])
            elif op.kind == "mul":
                regs.append(regs[op.arg0] * regs[op.arg1])
            else:
                regs.append(regs[op.arg0] * regs[op.arg1] + regs[op.arg2])
        return regs[-1]


class _ProgramBuilder:
    def __init__(self, dim: int):
        self.dim = dim
        self.ops: list[HornerOp] = []
        self._var_regs: dict[int, int] = {}

    def emit(self, op: HornerOp) -> int:
        self.ops.append(op)
        return len(self.ops) - 1

    def var(self, index: int) -> int:
        if index not in self._var_regs:
            self._var_regs[index] = self.emit(HornerOp("var", index))
        return self._var_regs[index]

    def const(self, value) -> int:
        return self.emit(HornerOp("const", rat(value)))


def horner_factor(p: MultiPoly) -> HornerProgram:
    """Greedily factor p into a straight-line program.

    At each step the variable occurring in the most remaining terms is pulled
    out; ties break toward the lowest variable index. Guarantees no more
    multiplications than term-by-term monomial evaluation and exact equality.
    """
    builder = _ProgramBuilder(p.dim)
    if p.is_zero():
        builder.const(0)
    else:
        _emit_horner(p, builder)
    return HornerProgram(p.dim, builder.ops)


def _emit_horner(p: MultiPoly, builder: _ProgramBuilder) -> int:
    # Constant polynomial.
    if all(sum(e) == 0 for e in p.terms):
        return builder.const(next(iter(p.terms.values())))
    counts = [0] * p.dim
    for exps in p.terms:
        for i, e in enumerate(exps):
            if e:
                counts[i] += 1
    pivot = max(range(p.dim), key=lambda i: (counts[i], -i))
    q_terms: dict = {}
    r_terms: dict = {}
    for exps, coeff in p.terms.items():
        if exps[pivot]:
            reduced = list(exps)
            reduced[pivot] -= 1
            q_terms[tuple(reduced)] = coeff
        else:
            r_terms[exps] = coeff
    q = MultiPoly(p.dim, q_terms)
    r = MultiPoly(p.dim, r_terms)
    rx = builder.var(pivot)
    one = tuple([0] * p.dim)
    q_is_one = q.terms == {one: R1}
    rq = None if q_is_one else _emit_horner(q, builder)
    if r.is_zero():
        if q_is_one:
            return rx  # x * 1 collapses to x
        return builder.emit(HornerOp("mul", rx, rq))
    rr = _emit_horner(r, builder)
    if q_is_one:
        return builder.emit(HornerOp("add", rx, rr))
    return builder.emit(HornerOp("fma", rx, rq, rr))

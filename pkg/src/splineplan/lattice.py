"""Integer lattices, Cartesian coset decomposition, and shifts onto the ROE box.

A lattice is the integer span of a full-rank integer generating matrix. For
evaluation the lattice is split into cosets of a diagonal sub-lattice so each
coset stores as an ordinary s-dimensional array.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from typing import Sequence

from .exactmath import RationalMatrix, rat, rfloor, vec
from .polytope import ConvexPolytope


class LatticeError(ValueError):
    pass


class IntegerLattice:
    """Full-rank integer lattice L Z^s."""

    __slots__ = ("s", "L", "name", "_Linv")

    def __init__(self, L: RationalMatrix, name: str = ""):
        if L.rows != L.cols:
            raise LatticeError("generating matrix must be square")
        if not L.is_integral():
            raise LatticeError("generating matrix must be integral")
        if L.det() == 0:
            raise LatticeError("generating matrix must have full rank")
        self.s = L.rows
        self.L = L
        self.name = name
        self._Linv = L.inverse()

    def contains_site(self, point: Sequence) -> bool:
        x = self._Linv.matvec(vec(point))
        return all(v.denominator == 1 for v in x)

    def site(self, coords: Sequence) -> tuple:
        return self.L.matvec(vec(coords))

    def det(self) -> int:
        return abs(int(self.L.det()))

    def __repr__(self) -> str:
        return f"IntegerLattice({self.name or self.L!r})"


@dataclass(frozen=True)
class CoefficientIndex:
    """Addressing of one lattice site: coset k plus integer cell z (site = D z + l_k)."""

    coset: int
    cell: tuple


class CosetDecomposition:
    """Lattice split into |det(D L^-1)| cosets of the diagonal lattice D Z^s."""

    __slots__ = ("parent", "diag", "shifts")

    def __init__(self, parent: IntegerLattice, diag: Sequence[int], shifts: Sequence[tuple]):
        self.parent = parent
        self.diag = tuple(int(d) for d in diag)
        self.shifts = tuple(tuple(int(v) for v in sh) for sh in shifts)
        D = RationalMatrix.diagonal(self.diag)
        G = D.matmul(parent.L.inverse())
        if not G.is_integral():
            raise LatticeError("D Z^s is not a sub-lattice of the lattice")
        if len(self.shifts) != abs(int(G.det())):
            raise LatticeError("wrong number of coset shifts")
        if self.shifts[0] != tuple([0] * parent.s):
            raise LatticeError("first coset shift must be zero")

    @property
    def M(self) -> int:
        return len(self.shifts)

    @property
    def D(self) -> RationalMatrix:
        return RationalMatrix.diagonal(self.diag)

    def site_of(self, index: CoefficientIndex) -> tuple:
        sh = self.shifts[index.coset]
        return tuple(d * z + l for d, z, l in zip(self.diag, index.cell, sh))

    def index_of(self, site: Sequence) -> CoefficientIndex:
        """Unique (coset, cell) with site = D z + l_k; raises if off-lattice."""
        site = [int(v) for v in site]
        for k, sh in enumerate(self.shifts):
            if all((x - l) % d == 0 for x, l, d in zip(site, sh, self.diag)):
                cell = tuple((x - l) // d for x, l, d in zip(site, sh, self.diag))
                return CoefficientIndex(k, cell)
        raise LatticeError(f"{site} is not on the lattice")

    def __repr__(self) -> str:
        return f"CosetDecomposition(D=diag{self.diag}, M={self.M})"


def decompose_cartesian(lat: IntegerLattice) -> CosetDecomposition:
    """Smallest diagonal D with D Z^s inside the lattice, plus coset shifts.

    Per axis, d_i is the least positive integer with d_i e_i on the lattice
    (the lcm of the denominators of column i of L^-1). Shifts are the lattice
    residues modulo D in lexicographic order, zero first.
    """
    s = lat.s
    diag = []
    for i in range(s):
        col = lat._Linv.column(i)
        d = 1
        for v in col:
            den = int(v.denominator)
            d = d * den // _gcd(d, den)
        diag.append(d)
    D = RationalMatrix.diagonal(diag)
    M = abs(int(D.matmul(lat._Linv).det()))
    residues = set()
    # Residues repeat within any transversal of {z : L z in D Z^s}; a box of
    # side M per axis always contains one representative of each class.
    for z in product(range(M), repeat=s):
        site = lat.site(z)
        residues.add(tuple(int(x) % d for x, d in zip(site, diag)))
        if len(residues) == M:
            break
    if len(residues) != M:
        raise LatticeError("coset residue scan failed")
    shifts = sorted(residues)
    return CosetDecomposition(lat, diag, shifts)


def _gcd(a: int, b: int) -> int:
    while b:
        a, b = b, a % b
    return a


def rho(x: Sequence, diag: Sequence[int]) -> tuple:
    """Shift in D Z^s with x - rho(x) inside the half-open box prod [0, d_i)."""
    out = []
    for xi, d in zip(x, diag):
        if isinstance(xi, float):
            out.append(d * int(__import__("math").floor(xi / d)))
        else:
            out.append(d * rfloor(rat(xi) / d))
    return tuple(out)


def lattice_sites_in_polytope(lat: IntegerLattice, poly: ConvexPolytope) -> list:
    """All lattice sites inside or on a bounded polytope, lexicographic order."""
    lo, hi = poly.bbox()
    ranges = []
    for a, b in zip(lo, hi):
        ranges.append(range(-rfloor(-a), rfloor(b) + 1))  # ceil(a) .. floor(b)
    sites = []
    for p in product(*ranges):
        if lat.contains_site(p) and poly.contains(p):
            sites.append(tuple(int(v) for v in p))
    return sites


# -- built-in generating matrices -------------------------------------------

_NAMED = {
    "QC": [[1, -1], [1, 1]],
    "BCC": [[-1, 1, 1], [1, -1, 1], [1, 1, -1]],
    "FCC": [[0, 1, 1], [1, 0, 1], [1, 1, 0]],
    "D4": [[-1, 0, 0, 0], [1, 0, -1, -1], [0, -1, 0, 1], [0, -1, 1, 0]],
}


def named_lattice(name: str, dim: int | None = None) -> IntegerLattice:
    """CC (any dimension, default 3), QC, BCC, FCC or D4."""
    key = name.upper()
    if key == "CC":
        s = dim if dim is not None else 3
        return IntegerLattice(RationalMatrix.identity(s), name=f"CC{s}")
    if key in ("CC2", "CC3", "CC4"):
        return IntegerLattice(RationalMatrix.identity(int(key[2])), name=key)
    if key in _NAMED:
        if dim is not None and dim != len(_NAMED[key]):
            raise LatticeError(f"{key} is {len(_NAMED[key])}-dimensional")
        return IntegerLattice(RationalMatrix(_NAMED[key]), name=key)
    raise LatticeError(f"unknown lattice {name!r}")


def parse_lattice_file(text: str, name: str = "") -> IntegerLattice:
    """Lattice definition document: first token s, then s rows of s integers."""
    tokens = text.split()
    if not tokens:
        raise LatticeError("empty lattice definition")
    s = int(tokens[0])
    vals = tokens[1:]
    if len(vals) != s * s:
        raise LatticeError(f"expected {s}x{s} entries, got {len(vals)}")
    rows = [[int(vals[i * s + j]) for j in range(s)] for i in range(s)]
    return IntegerLattice(RationalMatrix(rows), name=name)


def format_lattice_file(lat: IntegerLattice) -> str:
    lines = [str(lat.s)]
    for row in lat.L.a:
        lines.append(" ".join(str(int(v)) for v in row))
    return "\n".join(lines) + "\n"

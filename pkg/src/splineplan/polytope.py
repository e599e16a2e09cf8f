"""Exact convex polytopes, zonotopes and box-restricted hyperplane arrangements.

All geometry is rational. Polytopes carry both half-spaces and vertices
(double description); arrangements are built by recursive splitting so every
cell comes with a strict-interior rational witness point.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from math import gcd
from typing import Iterable, Sequence

from .exactmath import (
    R0,
    R1,
    RationalMatrix,
    rat,
    rat_to_str,
    vadd,
    vdot,
    vec,
    vsub,
)


class GeometryError(ValueError):
    pass


def primitive_direction(v: Sequence) -> tuple:
    """Scale a rational vector by a positive factor to a primitive integer vector."""
    v = vec(v)
    if all(x == 0 for x in v):
        raise GeometryError("zero vector has no direction")
    den_lcm = 1
    for x in v:
        d = int(x.denominator)
        den_lcm = den_lcm * d // gcd(den_lcm, d)
    ints = [int(x * den_lcm) for x in v]
    g = 0
    for n in ints:
        g = gcd(g, abs(n))
    return tuple(n // g for n in ints)


@dataclass(frozen=True, order=True)
class HalfSpace:
    """Points x with normal . x <= offset; normal is a primitive integer tuple."""

    normal: tuple
    offset: object

    @staticmethod
    def make(normal: Sequence, offset) -> "HalfSpace":
        normal = vec(normal)
        prim = primitive_direction(normal)
        # positive scale factor relating normal to prim (inequality preserved)
        idx = next(i for i, x in enumerate(prim) if x != 0)
        scale = rat(prim[idx], 1) / normal[idx]
        return HalfSpace(prim, rat(offset) * scale)

    def contains(self, point: Sequence, strict: bool = False) -> bool:
        v = vdot(self.normal, point)
        return v < self.offset if strict else v <= self.offset

    def slack(self, point: Sequence):
        return self.offset - vdot(self.normal, point)

    def flipped(self) -> "HalfSpace":
        return HalfSpace(tuple(-n for n in self.normal), -self.offset)

    def __repr__(self) -> str:
        return f"HalfSpace({self.normal}, {rat_to_str(self.offset)})"


@dataclass(frozen=True, order=True)
class Plane:
    """An oriented cutting hyperplane normal . x = offset.

    Canonical form: primitive integer normal whose first nonzero coordinate is
    positive, so each geometric plane has exactly one representation.
    """

    normal: tuple
    offset: object

    @staticmethod
    def make(normal: Sequence, offset) -> "Plane":
        normal = vec(normal)
        prim = primitive_direction(normal)
        idx = next(i for i, x in enumerate(prim) if x != 0)
        scale = rat(prim[idx], 1) / normal[idx]
        off = rat(offset) * scale
        if prim[idx] < 0:
            prim = tuple(-n for n in prim)
            off = -off
        return Plane(prim, off)

    def side(self, point: Sequence) -> int:
        """-1 / 0 / +1 for below / on / above the plane."""
        v = vdot(self.normal, point) - self.offset
        return (v > 0) - (v < 0)

    def lower(self) -> HalfSpace:
        return HalfSpace(self.normal, self.offset)

    def upper(self) -> HalfSpace:
        return HalfSpace(tuple(-n for n in self.normal), -self.offset)

    def __repr__(self) -> str:
        return f"Plane({self.normal}={rat_to_str(self.offset)})"


def affine_rank(points: Sequence[Sequence]) -> int:
    """Dimension of the affine hull of a point set (-1 for empty)."""
    if not points:
        return -1
    base = vec(points[0])
    diffs = [vsub(vec(p), base) for p in points[1:]]
    if not diffs:
        return 0
    return RationalMatrix(diffs).rank()


class ConvexPolytope:
    """Bounded full-dimensional convex polytope with exact double description.

    `halfspaces` is the canonical irredundant facet list (sorted) and
    `vertices` the sorted exact vertex tuples; the two stay consistent.
    """

    __slots__ = ("dim", "halfspaces", "vertices")

    def __init__(self, dim: int, halfspaces: Sequence[HalfSpace], vertices: Sequence[tuple]):
        self.dim = dim
        self.halfspaces = tuple(halfspaces)
        self.vertices = tuple(vertices)

    # -- constructors -------------------------------------------------------

    @staticmethod
    def from_halfspaces(halfspaces: Iterable[HalfSpace], dim: int) -> "ConvexPolytope":
        """Vertex-enumerate an H-polytope (suitable for modest facet counts)."""
        hs = sorted(set(halfspaces))
        if not hs:
            raise GeometryError("empty half-space list")
        verts = set()
        for combo in combinations(hs, dim):
            m = RationalMatrix([h.normal for h in combo])
            if m.rank() < dim:
                continue
            sol = m.solve([h.offset for h in combo])
            if sol is None:
                continue
            if all(h.contains(sol) for h in hs):
                verts.add(sol)
        if not verts:
            raise GeometryError("infeasible or degenerate half-space system")
        if affine_rank(sorted(verts)) < dim:
            raise GeometryError("half-space system is not full-dimensional")
        _check_bounded(hs, dim)
        return _assemble(dim, hs, verts)

    @staticmethod
    def from_box(lo: Sequence, hi: Sequence) -> "ConvexPolytope":
        lo, hi = vec(lo), vec(hi)
        dim = len(lo)
        hs = []
        for i in range(dim):
            if not lo[i] < hi[i]:
                raise GeometryError("empty box")
            e = [0] * dim
            e[i] = 1
            hs.append(HalfSpace.make(e, hi[i]))
            e[i] = -1
            hs.append(HalfSpace.make(e, -lo[i]))
        corners = []
        for mask in range(1 << dim):
            corners.append(tuple(hi[i] if mask >> i & 1 else lo[i] for i in range(dim)))
        return _assemble(dim, hs, corners)

    # -- queries ------------------------------------------------------------

    def contains(self, point: Sequence, strict: bool = False) -> bool:
        point = vec(point)
        return all(h.contains(point, strict=strict) for h in self.halfspaces)

    def vertex_centroid(self) -> tuple:
        n = rat(len(self.vertices))
        acc = [R0] * self.dim
        for v in self.vertices:
            acc = [a + x for a, x in zip(acc, v)]
        return tuple(a / n for a in acc)

    def bbox(self) -> tuple:
        lo = tuple(min(v[i] for v in self.vertices) for i in range(self.dim))
        hi = tuple(max(v[i] for v in self.vertices) for i in range(self.dim))
        return lo, hi

    def translated(self, t: Sequence) -> "ConvexPolytope":
        t = vec(t)
        hs = [HalfSpace(h.normal, h.offset + vdot(h.normal, t)) for h in self.halfspaces]
        verts = [vadd(v, t) for v in self.vertices]
        return ConvexPolytope(self.dim, tuple(sorted(hs)), tuple(sorted(verts)))

    def transformed(self, A: RationalMatrix, t: Sequence) -> "ConvexPolytope":
        """Image under x -> A x + t for invertible A."""
        t = vec(t)
        verts = sorted(vadd(A.matvec(v), t) for v in self.vertices)
        Ainv = A.inverse()
        hs = []
        for h in self.halfspaces:
            # n.(A^-1 (y - t)) <= d
            n2 = Ainv.transpose().matvec(h.normal)
            hs.append(HalfSpace.make(n2, h.offset + vdot(n2, t)))
        return ConvexPolytope(self.dim, tuple(sorted(set(hs))), tuple(verts))

    def split(self, plane: Plane):
        """Cut by a plane; returns (lower_cell, upper_cell), None for empty sides.

        Only full-dimensional pieces are returned; a plane that merely touches
        the boundary leaves the polytope on one side.
        """
        sides = [plane.side(v) for v in self.vertices]
        has_lo = any(s < 0 for s in sides)
        has_hi = any(s > 0 for s in sides)
        if not has_hi:
            return (self, None) if has_lo else (None, None)
        if not has_lo:
            return (None, self)
        crossings = []
        verts = self.vertices
        for (i, vi), (j, vj) in combinations(enumerate(verts), 2):
            if sides[i] * sides[j] >= 0:
                continue
            num = plane.offset - vdot(plane.normal, vi)
            den = vdot(plane.normal, vsub(vj, vi))
            lam = num / den
            p = vadd(vi, tuple(lam * d for d in vsub(vj, vi)))
            crossings.append(p)
        lower = self._side_piece(plane, [v for v, s in zip(verts, sides) if s <= 0], crossings, lo=True)
        upper = self._side_piece(plane, [v for v, s in zip(verts, sides) if s >= 0], crossings, lo=False)
        return lower, upper

    def _side_piece(self, plane: Plane, kept: list, crossings: list, lo: bool):
        cut_hs = plane.lower() if lo else plane.upper()
        hs = list(self.halfspaces) + [cut_hs]
        cand = set(kept)
        for p in crossings:
            tight = [h.normal for h in hs if h.slack(p) == 0]
            if RationalMatrix(tight).rank() == self.dim:
                cand.add(p)
        if affine_rank(sorted(cand)) < self.dim:
            return None
        return _assemble(self.dim, hs, cand)

    def triangulate(self) -> list:
        """Decompose into simplices, each a tuple of dim+1 vertices."""
        return _triangulate_face(self.dim, set(self.vertices), self.halfspaces, self.dim)

    def volume(self):
        total = R0
        for simplex in self.triangulate():
            base = simplex[0]
            m = RationalMatrix.from_columns([vsub(v, base) for v in simplex[1:]])
            total += abs(m.det())
        from .exactmath import _factorial

        return total / _factorial(self.dim)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, ConvexPolytope)
            and self.dim == other.dim
            and self.halfspaces == other.halfspaces
        )

    def __hash__(self) -> int:
        return hash((self.dim, self.halfspaces))

    def __repr__(self) -> str:
        return f"ConvexPolytope(dim={self.dim}, facets={len(self.halfspaces)}, verts={len(self.vertices)})"


def _assemble(dim: int, halfspaces: Iterable[HalfSpace], vertices: Iterable[tuple]) -> ConvexPolytope:
    """Canonicalize: dedupe, drop non-facet half-spaces, sort both lists."""
    verts = sorted(set(vertices))
    facets = []
    for h in sorted(set(halfspaces)):
        tight = [v for v in verts if h.slack(v) == 0]
        if affine_rank(tight) == dim - 1:
            facets.append(h)
    return ConvexPolytope(dim, tuple(facets), tuple(verts))


def _check_bounded(hs: list, dim: int) -> None:
    normals = RationalMatrix([h.normal for h in hs])
    if normals.rank() < dim:
        raise GeometryError("unbounded polyhedron (normals do not span)")
    if dim == 1:
        has_up = any(h.normal[0] > 0 for h in hs)
        has_dn = any(h.normal[0] < 0 for h in hs)
        if not (has_up and has_dn):
            raise GeometryError("unbounded interval")
        return
    # A nontrivial recession cone (if any) has an extreme ray tight on dim-1
    # independent constraints; scan those candidate rays.
    for combo in combinations(hs, dim - 1):
        m = RationalMatrix([h.normal for h in combo])
        if m.rank() < dim - 1:
            continue
        for ray in m.nullspace():
            for cand in (ray, tuple(-x for x in ray)):
                if all(vdot(h.normal, cand) <= 0 for h in hs):
                    raise GeometryError("unbounded polyhedron (recession ray found)")


def _triangulate_face(dim: int, verts: set, halfspaces: Sequence[HalfSpace], k: int) -> list:
    ordered = sorted(verts)
    if k == 0 or len(ordered) == k + 1:
        return [tuple(ordered)]
    apex = ordered[0]
    simplices = []
    seen = set()
    for h in halfspaces:
        tight = frozenset(v for v in ordered if h.slack(v) == 0)
        if apex in tight or tight in seen:
            continue
        if affine_rank(sorted(tight)) != k - 1:
            continue
        seen.add(tight)
        for sub in _triangulate_face(dim, set(tight), halfspaces, k - 1):
            simplices.append(sub + (apex,))
    return simplices


def polytopes_equal_upto_translation(p: ConvexPolytope, q: ConvexPolytope, t: Sequence) -> bool:
    """True iff p + t = q as point sets."""
    if p.dim != q.dim or len(p.vertices) != len(q.vertices):
        return False
    return p.translated(t).halfspaces == q.halfspaces


def minkowski_sum_segments(directions: Sequence[Sequence]) -> ConvexPolytope:
    """Zonotope spanned by segments [0, d] for each direction d.

    Parallel directions are merged into a single segment first, so repeated
    direction columns just lengthen a segment.
    """
    dirs = [vec(d) for d in directions]
    dim = len(dirs[0])
    if RationalMatrix.from_columns(dirs).rank() < dim:
        raise GeometryError("directions do not span the space")
    # Merge parallel classes; antiparallel members shift the base point
    # ([0, d] = d + [0, -d] when d points against the class direction).
    zero = tuple([R0] * dim)
    classes: dict[tuple, tuple] = {}
    base = zero
    for d in dirs:
        if all(x == 0 for x in d):
            continue
        prim = primitive_direction(d)
        idx = next(i for i, x in enumerate(prim) if x != 0)
        aligned = prim[idx] > 0
        key = prim if aligned else tuple(-x for x in prim)
        if aligned:
            classes[key] = vadd(classes.get(key, zero), d)
        else:
            base = vadd(base, d)
            classes[key] = vsub(classes.get(key, zero), d)
    segs = [vec(v) for v in classes.values()]
    candidates = {tuple(base)}
    for seg in segs:
        candidates = {tuple(vadd(c, seg)) for c in candidates} | candidates
    # Facet normals: orthogonal complements of (dim-1)-subsets of segments.
    halfspaces = set()
    if dim == 1:
        halfspaces.add(HalfSpace.make((1,), max(c[0] for c in candidates)))
        halfspaces.add(HalfSpace.make((-1,), -min(c[0] for c in candidates)))
    else:
        for combo in combinations(segs, dim - 1):
            m = RationalMatrix(list(combo))
            if m.rank() < dim - 1:
                continue
            for n in m.nullspace():
                for sign in (1, -1):
                    normal = tuple(sign * x for x in n)
                    off = max(vdot(normal, c) for c in candidates)
                    halfspaces.add(HalfSpace.make(normal, off))
    hs = sorted(halfspaces)
    verts = []
    for c in candidates:
        if any(h.slack(c) < 0 for h in hs):
            continue
        tight = [h.normal for h in hs if h.slack(c) == 0]
        if tight and RationalMatrix(tight).rank() == dim:
            verts.append(c)
    return _assemble(dim, hs, verts)


@dataclass
class Arrangement:
    """Cells of an ambient polytope cut by a plane set, with interior witnesses."""

    ambient: ConvexPolytope
    cutters: tuple
    cells: tuple
    witnesses: tuple

    def locate(self, point: Sequence):
        """Index of a cell whose closure contains the point (lowest index wins)."""
        point = vec(point)
        for i, cell in enumerate(self.cells):
            if cell.contains(point):
                return i
        return None


def build_arrangement(ambient: ConvexPolytope, planes: Sequence[Plane]) -> Arrangement:
    cutters = tuple(sorted(set(planes)))
    cells = [ambient]
    for plane in cutters:
        nxt = []
        for cell in cells:
            lo, hi = cell.split(plane)
            if lo is not None:
                nxt.append(lo)
            if hi is not None:
                nxt.append(hi)
        cells = nxt
    cells.sort(key=lambda c: tuple(c.vertex_centroid()))
    witnesses = []
    for cell in cells:
        w = cell.vertex_centroid()
        if not cell.contains(w, strict=True):
            raise GeometryError("witness not strictly interior")
        if any(p.side(w) == 0 for p in cutters):
            raise GeometryError("witness lies on a cutting plane")
        witnesses.append(w)
    return Arrangement(ambient, cutters, tuple(cells), tuple(witnesses))

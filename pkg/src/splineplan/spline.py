"""Box-spline reference oracle and piecewise-polynomial spline handling.

The oracle evaluates the classic two-term recurrence over column sub-multisets
in exact rational arithmetic. Side decisions in the base case are half-open
(lower-closed) and fixed globally; queries landing exactly on a knot plane are
resolved as a one-sided limit along a fixed generic direction, which agrees
with the continuous extension everywhere the spline is continuous.

Piecewise-polynomial (PP) extraction builds the knot-plane arrangement over the
support and recovers each cell's polynomial either by exact sampling plus a
linear solve, or by running the recurrence symbolically around the cell's
witness point. Both paths verify against the pointwise oracle on holdout
points at zero tolerance.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from itertools import combinations, product
from typing import Callable, Iterable, Sequence

from .exactmath import (
    MultiPoly,
    R0,
    R1,
    RationalMatrix,
    poly_compose_affine,
    poly_integral_over_simplex,
    rat,
    rat_from_str,
    rat_to_str,
    rfloor,
    vadd,
    vdot,
    vec,
    vsub,
)
from .lattice import CosetDecomposition, IntegerLattice, lattice_sites_in_polytope
from .polytope import (
    Arrangement,
    ConvexPolytope,
    GeometryError,
    HalfSpace,
    Plane,
    build_arrangement,
    minkowski_sum_segments,
    primitive_direction,
)


class SplineError(ValueError):
    pass


class DirectionMatrix:
    """n direction columns spanning R^s; repeated columns are allowed."""

    __slots__ = ("s", "columns")

    def __init__(self, columns: Sequence[Sequence]):
        self.columns = tuple(vec(c) for c in columns)
        if not self.columns:
            raise SplineError("no direction columns")
        self.s = len(self.columns[0])
        if len(self.columns) < self.s:
            raise SplineError("need at least s columns")
        if RationalMatrix.from_columns(self.columns).rank() < self.s:
            raise SplineError("direction columns must span the space")

    @property
    def n(self) -> int:
        return len(self.columns)

    @property
    def degree_bound(self) -> int:
        return self.n - self.s

    def support(self) -> ConvexPolytope:
        return minkowski_sum_segments(self.columns)

    def center(self) -> tuple:
        acc = [R0] * self.s
        for c in self.columns:
            acc = vadd(acc, c)
        return tuple(x / 2 for x in acc)

    def __repr__(self) -> str:
        return f"DirectionMatrix({[tuple(map(str, c)) for c in self.columns]})"


# ---------------------------------------------------------------------------
# Exact recursive evaluation


class _BoxSplineCache:
    """Per-direction-matrix cache of sub-multiset linear algebra."""

    def __init__(self, xi: DirectionMatrix):
        self.s = xi.s
        self.root = tuple(sorted(xi.columns))
        self._info: dict[tuple, tuple] = {}
        self._planes: tuple | None = None

    def info(self, key: tuple):
        """(spans, basis_cols, basis_inv, det) for a sorted column multiset."""
        cached = self._info.get(key)
        if cached is not None:
            return cached
        s = self.s
        basis: list = []
        idx: list[int] = []
        for i, col in enumerate(key):
            if len(basis) == s:
                break
            trial = RationalMatrix.from_columns(basis + [col])
            if trial.rank() == len(basis) + 1:
                basis.append(col)
                idx.append(i)
        if len(basis) < s:
            result = (False, None, None, None)
        else:
            B = RationalMatrix.from_columns(basis)
            result = (True, tuple(idx), B.inverse(), B.det())
        self._info[key] = result
        return result

    def planes(self) -> tuple:
        if self._planes is None:
            self._planes = tuple(harvest_knot_planes(DirectionMatrix(self.root)))
        return self._planes


_CACHE: dict[tuple, _BoxSplineCache] = {}


def _cache_for(xi: DirectionMatrix) -> _BoxSplineCache:
    key = tuple(sorted(xi.columns))
    if key not in _CACHE:
        _CACHE[key] = _BoxSplineCache(xi)
    return _CACHE[key]


def boxspline_eval_exact(xi: DirectionMatrix, x: Sequence):
    """Exact value of the box spline at a rational point.

    Off the knot planes this is the recurrence evaluated directly; on a knot
    plane the value is the one-sided limit along a fixed generic direction
    (the continuous extension for n > s).
    """
    cache = _cache_for(xi)
    x = vec(x)
    if len(x) != xi.s:
        raise SplineError("dimension mismatch")
    if xi.n == xi.s:
        spans, _, binv, det = cache.info(cache.root)
        t = binv.matvec(x)
        if all(R0 <= ti < R1 for ti in t):
            return 1 / abs(det)
        return R0
    if any(vdot(p.normal, x) == p.offset for p in cache.planes()):
        piece = _symbolic_piece(cache, _nudge_off_planes(cache, x))
        return piece.eval(x)
    memo: dict = {}
    return _eval_point(cache, cache.root, x, memo)


def _eval_point(cache: _BoxSplineCache, cols: tuple, y: tuple, memo: dict):
    key = (cols, y)
    hit = memo.get(key)
    if hit is not None:
        return hit
    spans, bidx, binv, det = cache.info(cols)
    s = cache.s
    n = len(cols)
    if n == s:
        t = binv.matvec(y)
        val = 1 / abs(det) if all(R0 <= ti < R1 for ti in t) else R0
        memo[key] = val
        return val
    tb = binv.matvec(y)
    # Group duplicate columns: per distinct value, the removal terms combine
    # with coefficient sums tau and (multiplicity - tau).
    tau: dict[tuple, object] = {}
    mult: dict[tuple, int] = {}
    for i, col in enumerate(cols):
        mult[col] = mult.get(col, 0) + 1
        if col not in tau:
            tau[col] = R0
    for slot, i in enumerate(bidx):
        tau[cols[i]] += tb[slot]
    acc = R0
    for col, m in mult.items():
        sub = list(cols)
        sub.remove(col)
        sub_key = tuple(sub)
        if not cache.info(sub_key)[0]:
            continue
        c1 = tau[col]
        c2 = m - c1
        if c1 != 0:
            acc += c1 * _eval_point(cache, sub_key, y, memo)
        if c2 != 0:
            acc += c2 * _eval_point(cache, sub_key, vsub(y, col), memo)
    val = acc / (n - s)
    memo[key] = val
    return val


def _nudge_off_planes(cache: _BoxSplineCache, x: tuple) -> tuple:
    """A point just off every knot plane, on the fixed limit side of x."""
    planes = cache.planes()
    s = cache.s
    u = None
    for s0 in (3, 5, 7, 11):
        cand = vec([rat(1, s0**i) for i in range(s)])
        if all(vdot(p.normal, cand) != 0 for p in planes):
            u = cand
            break
    if u is None:
        raise SplineError("no generic limit direction found")
    step = None
    for p in planes:
        nu = vdot(p.normal, u)
        res = p.offset - vdot(p.normal, x)
        if res == 0:
            continue
        t = res / nu
        if t > 0 and (step is None or t < step):
            step = t
    delta = (step / 2) if step is not None else R1
    return vadd(x, tuple(delta * ui for ui in u))


def _symbolic_piece(cache: _BoxSplineCache, x0: tuple) -> MultiPoly:
    """Polynomial of the spline piece containing x0 (an off-plane point).

    Runs the recurrence with the evaluation point x0 + delta, carrying
    polynomials in delta; all side decisions are taken at x0. Returns the
    polynomial re-expressed in absolute coordinates.
    """
    s = cache.s
    zero_shift = tuple([R0] * s)
    memo: dict = {}
    p_delta = _eval_symbolic(cache, cache.root, zero_shift, x0, memo)
    minus_x0 = tuple(-v for v in x0)
    return poly_compose_affine(p_delta, RationalMatrix.identity(s), minus_x0)


def _eval_symbolic(cache: _BoxSplineCache, cols: tuple, shift: tuple, x0: tuple, memo: dict) -> MultiPoly:
    key = (cols, shift)
    hit = memo.get(key)
    if hit is not None:
        return hit
    s = cache.s
    n = len(cols)
    y0 = vsub(x0, shift)
    spans, bidx, binv, det = cache.info(cols)
    if n == s:
        t0 = binv.matvec(y0)
        inside = all(R0 <= ti < R1 for ti in t0)
        val = MultiPoly.constant(s, 1 / abs(det)) if inside else MultiPoly(s)
        memo[key] = val
        return val
    # t(delta) = binv @ (y0 + delta): affine polynomials in delta.
    t0 = binv.matvec(y0)
    t_polys = [MultiPoly.affine(s, binv.a[row], t0[row]) for row in range(s)]
    tau: dict[tuple, MultiPoly] = {}
    mult: dict[tuple, int] = {}
    for col in cols:
        mult[col] = mult.get(col, 0) + 1
        if col not in tau:
            tau[col] = MultiPoly(s)
    for slot, i in enumerate(bidx):
        tau[cols[i]] = tau[cols[i]] + t_polys[slot]
    acc = MultiPoly(s)
    for col, m in mult.items():
        sub = list(cols)
        sub.remove(col)
        sub_key = tuple(sub)
        if not cache.info(sub_key)[0]:
            continue
        c1 = tau[col]
        c2 = MultiPoly.constant(s, m) - c1
        if not c1.is_zero():
            child = _eval_symbolic(cache, sub_key, shift, x0, memo)
            if not child.is_zero():
                acc = acc + c1 * child
        if not c2.is_zero():
            child = _eval_symbolic(cache, sub_key, vadd(shift, col), x0, memo)
            if not child.is_zero():
                acc = acc + c2 * child
    val = acc.scaled(rat(1, n - s))
    memo[key] = val
    return val


# ---------------------------------------------------------------------------
# Knot planes and PP extraction


def harvest_knot_planes(xi: DirectionMatrix) -> list:
    """All hyperplanes bounding polynomial pieces of the box spline.

    Normals come from rank-(s-1) subsets of direction classes; each normal's
    offsets are the subset sums of its products with all columns.
    """
    s = xi.s
    classes = sorted({primitive_direction(c) for c in xi.columns if any(v != 0 for v in c)})
    normals = set()
    if s == 1:
        normals.add((1,))
    else:
        for combo in combinations(classes, s - 1):
            m = RationalMatrix(list(combo))
            if m.rank() != s - 1:
                continue
            null = m.nullspace()
            if len(null) != 1:
                continue
            n = primitive_direction(null[0])
            idx = next(i for i, v in enumerate(n) if v != 0)
            if n[idx] < 0:
                n = tuple(-v for v in n)
            normals.add(n)
    planes = set()
    for n in sorted(normals):
        offsets = {R0}
        for col in xi.columns:
            d = vdot(vec(n), col)
            if d != 0:
                offsets |= {o + d for o in offsets}
        for o in offsets:
            planes.add(Plane.make(n, o))
    return sorted(planes)


@dataclass(frozen=True)
class SplinePiece:
    region: ConvexPolytope
    poly: MultiPoly


class PiecewisePolySpline:
    """A compactly supported piecewise-polynomial function.

    Pieces tile the support polytope with pairwise-disjoint interiors; point
    queries resolve boundary ties to the first covering piece (adjacent pieces
    agree there, which `validate` checks).
    """

    def __init__(
        self,
        s: int,
        pieces: Sequence[SplinePiece],
        support: ConvexPolytope,
        degree_bound: int,
        name: str = "",
        center: tuple | None = None,
    ):
        self.s = s
        self.pieces = tuple(pieces)
        self.support = support
        self.degree_bound = int(degree_bound)
        self.name = name
        self.center = vec(center) if center is not None else None
        self._buckets: dict | None = None

    # -- point queries -------------------------------------------------------

    def _bucket_index(self) -> dict:
        if self._buckets is None:
            buckets: dict = {}
            for i, piece in enumerate(self.pieces):
                lo, hi = piece.region.bbox()
                ranges = [range(rfloor(a), rfloor(b) + 1) for a, b in zip(lo, hi)]
                for cell in product(*ranges):
                    buckets.setdefault(cell, []).append(i)
            self._buckets = buckets
        return self._buckets

    def piece_at(self, x: Sequence):
        """Index of the first piece whose closure contains x, or None."""
        x = vec(x)
        cell = tuple(rfloor(v) for v in x)
        for i in self._bucket_index().get(cell, ()):
            if self.pieces[i].region.contains(x):
                return i
        return None

    def eval_exact(self, x: Sequence):
        i = self.piece_at(x)
        if i is None:
            return R0
        return self.pieces[i].poly.eval(vec(x))

    def eval_float(self, x: Sequence) -> float:
        i = self.piece_at([rat(v) for v in x])
        if i is None:
            return 0.0
        return self.pieces[i].poly.eval_float([float(v) for v in x])

    def integral(self):
        total = R0
        for piece in self.pieces:
            for simplex in piece.region.triangulate():
                total += poly_integral_over_simplex(piece.poly, simplex)
        return total

    # -- validation ----------------------------------------------------------

    def validate(self, check_nonneg_samples: int = 3, rng_seed: int = 7) -> None:
        """Enforce the structural invariants; raises SplineError on failure."""
        if not self.pieces:
            raise SplineError("no pieces")
        vol = R0
        for i, piece in enumerate(self.pieces):
            for v in piece.region.vertices:
                if not self.support.contains(v):
                    raise SplineError(f"piece {i} leaves the support")
            vol += piece.region.volume()
        if vol != self.support.volume():
            raise SplineError(
                "pieces do not tile the support "
                f"(piece volume {vol} vs support {self.support.volume()}): gap or overlap"
            )
        for i, piece in enumerate(self.pieces):
            w = piece.region.vertex_centroid()
            for j, other in enumerate(self.pieces):
                if j != i and other.region.contains(w, strict=True):
                    raise SplineError(f"pieces {i} and {j} overlap")
        total = self.integral()
        if total != 1:
            raise SplineError(f"spline integrates to {total}, expected 1")
        self._check_facet_continuity()
        rng = random.Random(rng_seed)
        for piece in self.pieces:
            for _ in range(check_nonneg_samples):
                p = _interior_point(piece.region, rng)
                if piece.poly.eval(p) < 0:
                    raise SplineError("spline is negative inside the support")

    def _check_facet_continuity(self) -> None:
        for i, piece in enumerate(self.pieces):
            verts = piece.region.vertices
            for h in piece.region.halfspaces:
                tight = [v for v in verts if h.slack(v) == 0]
                centroid = tuple(sum(col, R0) / len(tight) for col in zip(*tight))
                if any(hh.slack(centroid) == 0 for hh in self.support.halfspaces):
                    continue  # support boundary facet
                val = piece.poly.eval(centroid)
                for j in self._bucket_index().get(tuple(rfloor(v) for v in centroid), ()):
                    if j == i:
                        continue
                    other = self.pieces[j]
                    if other.region.contains(centroid) and other.poly.eval(centroid) != val:
                        raise SplineError(f"pieces {i} and {j} disagree on a shared facet")

    def is_nonnegative_sampled(self, samples_per_piece: int = 8, rng_seed: int = 11) -> bool:
        rng = random.Random(rng_seed)
        for piece in self.pieces:
            for _ in range(samples_per_piece):
                if piece.poly.eval(_interior_point(piece.region, rng)) < 0:
                    return False
        return True

    def __repr__(self) -> str:
        return f"PiecewisePolySpline({self.name or 'anon'}, s={self.s}, pieces={len(self.pieces)})"


def _interior_point(region: ConvexPolytope, rng: random.Random) -> tuple:
    """Random strictly interior rational point (positive random vertex weights)."""
    weights = [rat(rng.randint(1, 64)) for _ in region.vertices]
    total = sum(weights, R0)
    acc = [R0] * region.dim
    for w, v in zip(weights, region.vertices):
        acc = [a + w * x for a, x in zip(acc, v)]
    return tuple(a / total for a in acc)


def extract_pp_form(
    xi: DirectionMatrix,
    mesh: Arrangement | None = None,
    method: str = "auto",
    rng_seed: int = 0,
    holdout_per_cell: int | None = None,
    name: str = "",
    progress: Callable[[int, int], None] | None = None,
) -> PiecewisePolySpline:
    """Explicit piecewise-polynomial form of a box spline.

    method 'fit' samples the exact oracle and solves for monomial coefficients
    (verified on an equal holdout set); 'witness' runs the recurrence
    symbolically at each cell witness (verified on holdout points as well).
    'auto' picks 'fit' while the monomial count stays small.
    """
    s = xi.s
    deg = xi.degree_bound
    monomials = _monomials_up_to(s, deg)
    if method == "auto":
        method = "fit" if len(monomials) <= 10 else "witness"
    if mesh is None:
        support = xi.support()
        planes = [p for p in harvest_knot_planes(xi) if _plane_meets_interior(p, support)]
        mesh = build_arrangement(support, planes)
    cache = _cache_for(xi)
    rng = random.Random(rng_seed)
    pieces = []
    n_cells = len(mesh.cells)
    for ci, (cell, witness) in enumerate(zip(mesh.cells, mesh.witnesses)):
        if method == "fit":
            poly = _fit_cell_poly(cache, xi, cell, monomials, rng)
            n_holdout = holdout_per_cell if holdout_per_cell is not None else len(monomials)
        else:
            poly = _symbolic_piece(cache, witness)
            if poly.degree() > deg:
                raise SplineError("symbolic piece exceeds the degree bound")
            n_holdout = holdout_per_cell if holdout_per_cell is not None else 6
        for _ in range(n_holdout):
            p = _interior_point(cell, rng)
            if poly.eval(p) != boxspline_eval_exact(xi, p):
                raise SplineError(
                    "piece polynomial disagrees with the exact recurrence on a holdout "
                    "point; the mesh is missing a cutting plane"
                )
        pieces.append(SplinePiece(cell, poly))
        if progress:
            progress(ci + 1, n_cells)
    return PiecewisePolySpline(
        s, pieces, mesh.ambient, deg, name=name, center=xi.center()
    )


def _plane_meets_interior(plane: Plane, poly: ConvexPolytope) -> bool:
    vals = [vdot(plane.normal, v) for v in poly.vertices]
    return min(vals) < plane.offset < max(vals)


def _monomials_up_to(s: int, deg: int) -> list:
    out = []
    for exps in product(range(deg + 1), repeat=s):
        if sum(exps) <= deg:
            out.append(tuple(exps))
    out.sort()
    return out


def _fit_cell_poly(cache, xi, cell, monomials, rng) -> MultiPoly:
    m = len(monomials)
    for _ in range(8):
        points = [_interior_point(cell, rng) for _ in range(m)]
        rows = []
        for p in points:
            rows.append([_mono_eval(p, e) for e in monomials])
        rhs = [boxspline_eval_exact(xi, p) for p in points]
        # Solve the square system; a singular sample set is resampled.
        aug = RationalMatrix(rows)
        sol = aug.solve(rhs)
        if sol is not None and aug.rank() == m:
            return MultiPoly(xi.s, dict(zip(monomials, sol)))
    raise SplineError("could not find an independent sample set for the fit")


def _mono_eval(point: tuple, exps: tuple):
    acc = R1
    for x, e in zip(point, exps):
        if e:
            acc *= x**e
    return acc


# ---------------------------------------------------------------------------
# Spline-on-lattice pairing


class SplineOnLattice:
    """A PP spline paired with the lattice whose shifts span the space.

    A unit-integral basis summed over a lattice of determinant m averages to
    1/m, so the pairing carries the |det L| scale that restores partition of
    unity; all weights handed downstream are the scaled ones.
    """

    def __init__(self, spline: PiecewisePolySpline, lat: IntegerLattice, cosets: CosetDecomposition):
        if spline.s != lat.s:
            raise SplineError("spline/lattice dimension mismatch")
        self.spline = spline
        self.lattice = lat
        self.cosets = cosets
        self.scale = rat(lat.det())

    def weight_eval(self, x: Sequence):
        """Scaled basis value: the coefficient weight of site 0 at point x."""
        return self.scale * self.spline.eval_exact(x)

    def weight_poly(self, piece_index: int) -> MultiPoly:
        return self.spline.pieces[piece_index].poly.scaled(self.scale)

    def contributing_sites(self, x: Sequence) -> list:
        """Lattice sites m with x - m inside the support."""
        x = vec(x)
        lo, hi = self.spline.support.bbox()
        region = ConvexPolytope.from_box(
            [xv - h for xv, h in zip(x, hi)], [xv - l for xv, l in zip(x, lo)]
        )
        out = []
        for m in lattice_sites_in_polytope(self.lattice, region):
            if self.spline.support.contains(vsub(x, vec(m))):
                out.append(m)
        return out

    def partition_of_unity_at(self, x: Sequence):
        x = vec(x)
        total = R0
        for m in self.contributing_sites(x):
            total += self.weight_eval(vsub(x, vec(m)))
        return total

    def check_partition_of_unity(self, points: Iterable[Sequence]) -> None:
        for x in points:
            total = self.partition_of_unity_at(x)
            if total != 1:
                raise SplineError(f"partition of unity fails at {x}: sum {total}")

    def partition_of_unity_on_sublattice(self, points: Iterable[Sequence]) -> bool:
        """True if shifts over D Z^s alone already reproduce constants."""
        for x in points:
            x = vec(x)
            total = R0
            for m in self.contributing_sites(x):
                if all(int(v) % d == 0 for v, d in zip(m, self.cosets.diag)):
                    total += self.cosets.M * self.weight_eval(vsub(x, vec(m)))
            if total != 1:
                return False
        return True


# ---------------------------------------------------------------------------
# Spline description documents (import/export)

_FORMAT_MAGIC = "splinepp"
_FORMAT_VERSION = "1"


def format_pp_spline(spline: PiecewisePolySpline) -> str:
    """Serialize to the text description format (also the import cache format)."""
    lines = [f"{_FORMAT_MAGIC} {_FORMAT_VERSION}", f"dim {spline.s}", f"degree {spline.degree_bound}"]
    if spline.name:
        lines.append(f"name {spline.name}")
    if spline.center is not None:
        lines.append("center " + " ".join(rat_to_str(v) for v in spline.center))
    for piece in spline.pieces:
        lines.append("piece")
        for h in piece.region.halfspaces:
            lines.append(
                "hs " + " ".join(str(int(v)) for v in h.normal) + " " + rat_to_str(h.offset)
            )
        lines.append("poly")
        for exps in sorted(piece.poly.terms):
            lines.append(
                "term " + " ".join(str(e) for e in exps) + " " + rat_to_str(piece.poly.terms[exps])
            )
        lines.append("end")
    return "\n".join(lines) + "\n"


def import_pp_spline(text: str, validate: bool = True) -> PiecewisePolySpline:
    """Parse and validate a spline description document.

    Rejects malformed text, overlapping or gapping pieces, and a non-unit
    integral, per the structural invariants.
    """
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines or not lines[0].startswith(_FORMAT_MAGIC):
        raise SplineError("not a spline description document")
    version = lines[0].split()[1] if len(lines[0].split()) > 1 else "?"
    if version != _FORMAT_VERSION:
        raise SplineError(f"unsupported format version {version}")
    dim = None
    degree = None
    name = ""
    center = None
    pieces: list[SplinePiece] = []
    i = 1
    while i < len(lines):
        parts = lines[i].split()
        if parts[0] == "dim":
            dim = int(parts[1])
        elif parts[0] == "degree":
            degree = int(parts[1])
        elif parts[0] == "name":
            name = parts[1]
        elif parts[0] == "center":
            center = tuple(rat_from_str(t) for t in parts[1:])
        elif parts[0] == "piece":
            if dim is None or degree is None:
                raise SplineError("piece before dim/degree header")
            i, piece = _parse_piece(lines, i + 1, dim)
            pieces.append(piece)
            continue
        else:
            raise SplineError(f"unexpected line: {lines[i]}")
        i += 1
    if dim is None or degree is None or not pieces:
        raise SplineError("incomplete spline description")
    for piece in pieces:
        if piece.poly.degree() > degree:
            raise SplineError("piece polynomial exceeds the declared degree bound")
    support = _union_support(dim, pieces)
    spline = PiecewisePolySpline(dim, pieces, support, degree, name=name, center=center)
    if validate:
        spline.validate()
    return spline


def _parse_piece(lines: list, i: int, dim: int):
    halfspaces = []
    terms = {}
    mode = "hs"
    while i < len(lines):
        parts = lines[i].split()
        if parts[0] == "hs":
            if len(parts) != dim + 2:
                raise SplineError(f"bad half-space line: {lines[i]}")
            normal = [int(v) for v in parts[1 : dim + 1]]
            halfspaces.append(HalfSpace.make(normal, rat_from_str(parts[dim + 1])))
        elif parts[0] == "poly":
            mode = "poly"
        elif parts[0] == "term":
            if mode != "poly" or len(parts) != dim + 2:
                raise SplineError(f"bad term line: {lines[i]}")
            exps = tuple(int(v) for v in parts[1 : dim + 1])
            terms[exps] = rat_from_str(parts[dim + 1])
        elif parts[0] == "end":
            try:
                region = ConvexPolytope.from_halfspaces(halfspaces, dim)
            except GeometryError as exc:
                raise SplineError(f"bad piece region: {exc}") from exc
            return i + 1, SplinePiece(region, MultiPoly(dim, terms))
        else:
            raise SplineError(f"unexpected line in piece: {lines[i]}")
        i += 1
    raise SplineError("unterminated piece record")


def _union_support(dim: int, pieces: Sequence[SplinePiece]) -> ConvexPolytope:
    """Support = convex hull of the pieces; validate() ensures exact tiling.

    Since the pieces tile a convex support, every support facet plane occurs
    as some piece facet plane, so only those candidates need checking.
    """
    verts = set()
    candidates = set()
    for piece in pieces:
        verts |= set(piece.region.vertices)
        candidates |= set(piece.region.halfspaces)
    verts = sorted(verts)
    halfspaces = [h for h in sorted(candidates) if all(h.slack(v) >= 0 for v in verts)]
    hull_verts = []
    for v in verts:
        tight = [h.normal for h in halfspaces if h.slack(v) == 0]
        if tight and RationalMatrix(tight).rank() == dim:
            hull_verts.append(v)
    from .polytope import _assemble

    support = _assemble(dim, halfspaces, hull_verts)
    if support.volume() == 0:
        raise SplineError("pieces have no full-dimensional hull")
    return support

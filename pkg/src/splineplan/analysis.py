"""Sub-region decomposition, branch-free membership tables and symmetry search.

The evaluation box is the half-open cell of the diagonal coset lattice. Inside
it, the contributing-site pattern and the per-site weight polynomials are
constant per cell of the shifted piece-boundary arrangement; those cells are
the sub-regions. Q plane tests produce a bit code, compressed through the
smallest modulus that keeps realized codes distinct; a greedy search then
rewrites as many sub-regions as possible as a rigid transform of a reference
sub-region plus a site renaming, so only K distinct weight kernels remain.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from itertools import permutations, product
from typing import Sequence

from .exactmath import (
    MultiPoly,
    R0,
    RationalMatrix,
    poly_compose_affine,
    rat,
    rfloor,
    vadd,
    vdot,
    vec,
    vsub,
)
from .polytope import ConvexPolytope, Plane, build_arrangement
from .spline import SplineError, SplineOnLattice


class AnalysisError(ValueError):
    pass


SIGMA_SENTINEL = -1


@dataclass(frozen=True)
class SubRegion:
    """One evaluation cell: geometry, bit code, coset-0 sites and their weights."""

    cell: ConvexPolytope
    class_id: int
    witness: tuple
    code: int
    sites: tuple          # integer vectors on the zero coset (D Z^s)
    weight_polys: tuple   # MultiPoly per site, already carrying the lattice scale


@dataclass
class RegionOfEvaluation:
    box: ConvexPolytope
    diag: tuple
    subregions: tuple
    cut_planes: tuple
    r: int
    sigma: tuple
    reflective_axes: tuple
    pou_on_sublattice: bool

    @property
    def N(self) -> int:
        return len(self.subregions)

    @property
    def Q(self) -> int:
        return len(self.cut_planes)

    def bitcode(self, point: Sequence) -> int:
        """Q plane tests; bit i set when the point is on the >= side of plane i."""
        point = vec(point)
        q = 0
        for i, plane in enumerate(self.cut_planes):
            if vdot(plane.normal, point) >= plane.offset:
                q |= 1 << i
        return q

    def classify(self, point: Sequence) -> int:
        cls = self.sigma[self.bitcode(point) % self.r]
        if cls == SIGMA_SENTINEL:
            raise AnalysisError("point hit an unrealized sub-region code")
        return cls


@dataclass(frozen=True)
class ClassTransform:
    """Rewrites one sub-region as a reference kernel evaluation."""

    kernel: int
    T: RationalMatrix
    t: tuple
    pi_linear: RationalMatrix
    pi_offset: tuple

    def map_site(self, site: Sequence) -> tuple:
        return tuple(int(v) for v in vadd(self.pi_linear.matvec(vec(site)), self.pi_offset))


@dataclass
class SymmetryAssignment:
    references: tuple     # class id per kernel
    transforms: tuple     # ClassTransform per class

    @property
    def K(self) -> int:
        return len(self.references)


def enumerate_subregions(sol: SplineOnLattice, pou_points: int = 4, rng_seed: int = 23) -> RegionOfEvaluation:
    """Decompose the coset box into sub-regions with sites and weight kernels.

    Requires partition of unity on the full lattice. The sub-lattice variant
    is recorded (it fails for most non-Cartesian pairings and nothing in this
    pipeline depends on it), not enforced.
    """
    s = sol.spline.s
    diag = sol.cosets.diag
    rng = random.Random(rng_seed)
    probe = [tuple(rat(rng.randint(-128, 128), 97) for _ in range(s)) for _ in range(pou_points)]
    sol.check_partition_of_unity(probe)
    pou_sub = sol.partition_of_unity_on_sublattice(probe[:2])

    box = ConvexPolytope.from_box([0] * s, list(diag))
    planes = _subregion_planes(sol, box)
    arrangement = build_arrangement(box, planes)

    subregions = []
    codes = set()
    for class_id, (cell, witness) in enumerate(zip(arrangement.cells, arrangement.witnesses)):
        sites, weights = _sites_and_weights(sol, witness)
        code = _bitcode(planes, witness)
        if code in codes:
            raise AnalysisError("two sub-regions share a plane-side code")
        codes.add(code)
        subregions.append(
            SubRegion(cell, class_id, witness, code, tuple(sites), tuple(weights))
        )
    r, sigma = compress_code_table(
        {sr.code for sr in subregions}, {sr.code: sr.class_id for sr in subregions}
    )
    return RegionOfEvaluation(
        box=box,
        diag=tuple(diag),
        subregions=tuple(subregions),
        cut_planes=tuple(planes),
        r=r,
        sigma=sigma,
        reflective_axes=_reflective_axes(planes, diag),
        pou_on_sublattice=pou_sub,
    )


def _subregion_planes(sol: SplineOnLattice, box: ConvexPolytope) -> tuple:
    """Distinct piece-boundary planes, shifted over D Z^s, meeting the box interior."""
    s = sol.spline.s
    diag = sol.cosets.diag
    base_planes = set()
    for piece in sol.spline.pieces:
        for h in piece.region.halfspaces:
            base_planes.add(Plane.make(h.normal, h.offset))
    lo, hi = box.bbox()
    out = set()
    for plane in base_planes:
        # offsets shift by n . (D z); their gcd gives the offset period
        step = R0
        g = 0
        for ni, di in zip(plane.normal, diag):
            g = _gcd(g, abs(int(ni) * int(di)))
        if g == 0:
            continue
        lo_v = min(vdot(plane.normal, v) for v in box.vertices)
        hi_v = max(vdot(plane.normal, v) for v in box.vertices)
        # offsets o + g k strictly between lo_v and hi_v
        first = plane.offset - g * rfloor((plane.offset - lo_v) / g)
        o = first
        while o <= hi_v:
            if lo_v < o < hi_v:
                cand = Plane.make(plane.normal, o)
                if _plane_meets_box_interior(cand, box):
                    out.add(cand)
            o = o + g
    return tuple(sorted(out))


def _plane_meets_box_interior(plane: Plane, box: ConvexPolytope) -> bool:
    vals = [vdot(plane.normal, v) for v in box.vertices]
    return min(vals) < plane.offset < max(vals)


def _gcd(a: int, b: int) -> int:
    while b:
        a, b = b, a % b
    return a


def _bitcode(planes: Sequence[Plane], point: Sequence) -> int:
    q = 0
    for i, plane in enumerate(planes):
        if vdot(plane.normal, point) >= plane.offset:
            q |= 1 << i
    return q


def _sites_and_weights(sol: SplineOnLattice, witness: tuple):
    """Coset-0 sites contributing at the witness, with their cell-local weights."""
    s = sol.spline.s
    diag = sol.cosets.diag
    supp = sol.spline.support
    lo, hi = supp.bbox()
    ranges = []
    for i in range(s):
        a = witness[i] - hi[i]
        b = witness[i] - lo[i]
        ranges.append(range(-rfloor(-a / diag[i]), rfloor(b / diag[i]) + 1))
    sites = []
    weights = []
    ident = RationalMatrix.identity(s)
    for z in product(*ranges):
        m = tuple(di * zi for di, zi in zip(diag, z))
        y = vsub(witness, vec(m))
        if not supp.contains(y):
            continue
        piece = sol.spline.piece_at(y)
        if piece is None:
            continue
        poly = sol.weight_poly(piece)
        if poly.is_zero():
            continue
        shifted = poly_compose_affine(poly, ident, tuple(-v for v in vec(m)))
        sites.append(tuple(int(v) for v in m))
        weights.append(shifted)
    order = sorted(range(len(sites)), key=lambda i: sites[i])
    return [sites[i] for i in order], [weights[i] for i in order]


def _reflective_axes(planes: Sequence[Plane], diag: Sequence[int]) -> tuple:
    """Per-axis: does reflecting about the box center preserve the cut-plane set?"""
    out = []
    plane_set = set(planes)
    for axis, d in enumerate(diag):
        ok = True
        for p in planes:
            normal = list(p.normal)
            normal[axis] = -normal[axis]
            offset = p.offset - p.normal[axis] * rat(d)
            if Plane.make(normal, offset) not in plane_set:
                ok = False
                break
        out.append(ok)
    return tuple(out)


def compress_code_table(codes: set, class_of: dict) -> tuple:
    """Smallest modulus keeping realized codes distinct, plus the lookup array."""
    codes = sorted(codes)
    n = len(codes)
    r = max(1, n)
    while True:
        residues = {c % r for c in codes}
        if len(residues) == n:
            break
        r += 1
    sigma = [SIGMA_SENTINEL] * r
    for c in codes:
        sigma[c % r] = class_of[c]
    return r, tuple(sigma)


# ---------------------------------------------------------------------------
# Symmetry search


def signed_permutation_group(s: int) -> list:
    """All signed permutation matrices, identity first, deterministic order."""
    mats = []
    for perm in permutations(range(s)):
        for signs in product((1, -1), repeat=s):
            rows = [[0] * s for _ in range(s)]
            for i in range(s):
                rows[i][perm[i]] = signs[i]
            mats.append(RationalMatrix(rows))
    ident = RationalMatrix.identity(s)
    mats.sort(key=lambda m: (m != ident, m.a))
    return mats


def search_symmetry(roe: RegionOfEvaluation, group: Sequence[RationalMatrix] | None = None) -> SymmetryAssignment:
    """Greedy kernel minimization.

    Classes are processed in order; each either rewrites onto an existing
    reference through some (T, t) with a perfect weight-polynomial matching
    (which yields the site renaming), or becomes a new reference. All
    identities are checked exactly, so an over-large candidate group only
    costs time, never correctness.
    """
    if group is None:
        group = signed_permutation_group(len(roe.diag))
    references: list[int] = []
    transforms: list[ClassTransform | None] = [None] * roe.N
    s = len(roe.diag)
    ident = RationalMatrix.identity(s)
    zero = tuple([R0] * s)
    for sr in roe.subregions:
        assigned = False
        for kernel_idx, ref_id in enumerate(references):
            ref = roe.subregions[ref_id]
            found = _match_subregion(sr, ref, group)
            if found is not None:
                T, t, pi_lin, pi_off = found
                transforms[sr.class_id] = ClassTransform(kernel_idx, T, t, pi_lin, pi_off)
                assigned = True
                break
        if not assigned:
            references.append(sr.class_id)
            transforms[sr.class_id] = ClassTransform(
                len(references) - 1, ident, zero, ident, tuple([0] * s)
            )
    return SymmetryAssignment(tuple(references), tuple(transforms))


def _match_subregion(sr: SubRegion, ref: SubRegion, group: Sequence[RationalMatrix]):
    """Find (T, t, pi) with ref-kernel(T x - t) == sr-kernel(x), pi affine."""
    if len(sr.sites) != len(ref.sites):
        return None
    vc_ref = ref.cell.vertex_centroid()
    vc_sr = sr.cell.vertex_centroid()
    sr_by_poly: dict = {}
    for site, poly in zip(sr.sites, sr.weight_polys):
        sr_by_poly.setdefault(poly, []).append(site)
    for T in group:
        t = vsub(T.matvec(vc_sr), vc_ref)
        if sr.cell.transformed(T, tuple(-v for v in t)) != ref.cell:
            continue
        minus_t = tuple(-v for v in t)
        # Compose each reference weight with x -> T x - t and match exactly.
        buckets = {poly: list(sites) for poly, sites in sr_by_poly.items()}
        pairs = []
        ok = True
        for site, poly in zip(ref.sites, ref.weight_polys):
            composed = poly_compose_affine(poly, T, minus_t)
            avail = buckets.get(composed)
            if not avail:
                ok = False
                break
            pairs.append((site, avail.pop(0)))
        if not ok:
            continue
        affine = _fit_affine_site_map(pairs, T)
        if affine is None:
            continue
        return T, t, affine[0], affine[1]
    return None


def _fit_affine_site_map(pairs: list, T: RationalMatrix):
    """Integer affine map sending each ref site to its matched site.

    The linear part T^-1 is tried first (renamings are rigid in practice);
    a general exact fit is attempted otherwise.
    """
    s = T.rows
    candidates = [T.inverse(), T]
    src = [vec(a) for a, _ in pairs]
    dst = [vec(b) for _, b in pairs]
    for A in candidates:
        b = vsub(dst[0], A.matvec(src[0]))
        if all(vadd(A.matvec(p), b) == q for p, q in zip(src, dst)):
            if A.is_integral() and all(v.denominator == 1 for v in b):
                return A, tuple(int(v) for v in b)
    # General fit from s+1 affinely independent pairs.
    base = src[0]
    idx = [0]
    for i in range(1, len(src)):
        trial = idx + [i]
        m = RationalMatrix([vsub(src[j], base) for j in trial[1:]])
        if m.rank() == len(trial) - 1:
            idx = trial
        if len(idx) == s + 1:
            break
    if len(idx) != s + 1:
        return None
    M = RationalMatrix([list(src[j]) + [1] for j in idx])
    cols = []
    for comp in range(s):
        sol = M.solve([dst[j][comp] for j in idx])
        if sol is None:
            return None
        cols.append(sol)
    A = RationalMatrix([[cols[r][c] for c in range(s)] for r in range(s)])
    b = tuple(cols[r][s] for r in range(s))
    if not (A.is_integral() and all(v.denominator == 1 for v in b)):
        return None
    if not all(vadd(A.matvec(p), b) == q for p, q in zip(src, dst)):
        return None
    return A, tuple(int(v) for v in b)

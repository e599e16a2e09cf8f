"""Lower analysis output to a serialized branch-free evaluation plan.

A plan holds everything point evaluation needs: coset shifts, the plane table
and compressed class lookup, per-class transforms and site renamings, and per
reference kernel an ordered schedule of fetch groups whose weights are Horner
programs. Consolidation rewrites 2/4/8 axis-aligned site reads on one coset as
a single (multi)linearly interpolated read with a correction factor g and
interpolation parameters; validity of a group is an exact rank-1 factorization
identity of its weight polynomials.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from itertools import combinations, permutations, product
from typing import Sequence

from .analysis import (
    SIGMA_SENTINEL,
    ClassTransform,
    RegionOfEvaluation,
    SymmetryAssignment,
)
from .exactmath import (
    HornerProgram,
    MultiPoly,
    R0,
    RationalMatrix,
    horner_factor,
    rat,
    rat_from_str,
    rat_to_str,
    vadd,
    vdot,
    vec,
)
from .minilang import KernelProgram, ProgramBuilder
from .spline import SplineOnLattice


class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class PlanOptions:
    grouped: bool = True
    predicated: bool = True
    ordered: bool = True
    texel_offset_half: bool = True


@dataclass(frozen=True)
class FetchGroup:
    """1, 2, 4 or 8 sites on one coset served by a single (multi)linear fetch.

    Sites are zero-coset lattice vectors in tensor-corner order over
    `span_axes`; g is the weight sum and t_num[j]/g the interpolation
    parameter along span axis j. Singletons carry their weight in g.
    """

    sites: tuple
    span_axes: tuple
    g: MultiPoly
    t_nums: tuple

    @property
    def size(self) -> int:
        return len(self.sites)

    def g_program(self) -> HornerProgram:
        return horner_factor(self.g)

    def t_programs(self) -> tuple:
        return tuple(horner_factor(t) for t in self.t_nums)


@dataclass(frozen=True)
class PlanKernel:
    ref_class: int
    groups: tuple

    @property
    def nearest_count(self) -> int:
        return sum(g.size for g in self.groups)

    @property
    def grouped_count(self) -> int:
        return len(self.groups)


@dataclass
class EvaluationPlan:
    name: str
    lattice_name: str
    s: int
    diag: tuple
    shifts: tuple
    scale: object
    planes: tuple            # (normal ints, exact offset) pairs
    r: int
    sigma: tuple
    classes: tuple           # ClassTransform per class
    kernels: tuple           # PlanKernel per kernel
    options: PlanOptions
    basis_nonnegative: bool
    pou_on_sublattice: bool
    reflective_axes: tuple
    octant_fold: bool = False

    @property
    def M(self) -> int:
        return len(self.shifts)

    @property
    def N(self) -> int:
        return len(self.classes)

    @property
    def Q(self) -> int:
        return len(self.planes)

    @property
    def K(self) -> int:
        return len(self.kernels)

    def nearest_fetch_counts(self) -> tuple:
        """Per-point nearest-mode lookup count, per class (over all cosets)."""
        out = []
        for cls in self.classes:
            out.append(self.M * self.kernels[cls.kernel].nearest_count)
        return tuple(out)

    def grouped_fetch_counts(self) -> tuple:
        out = []
        for cls in self.classes:
            out.append(self.M * self.kernels[cls.kernel].grouped_count)
        return tuple(out)

    def __eq__(self, other) -> bool:
        return isinstance(other, EvaluationPlan) and plan_to_dict(self) == plan_to_dict(other)


# ---------------------------------------------------------------------------
# Fetch grouping


def group_fetches(
    sites: Sequence[tuple],
    weights: Sequence[MultiPoly],
    diag: Sequence[int],
    grouped: bool = True,
    max_group_dim: int = 3,
) -> tuple:
    """Minimum-cardinality exact cover of the sites by valid fetch groups.

    Candidate groups are axis-aligned pairs, squares and cubes on the coset
    grid whose weight tensor factors rank-1 (checked as exact polynomial
    identities). Singletons are always valid, so a cover always exists; ties
    break toward the lexicographically smallest group list.
    """
    site_list = list(sites)
    weight_of = dict(zip(site_list, weights))
    index_of = {site: i for i, site in enumerate(site_list)}
    singles = [
        FetchGroup((site,), (), weight_of[site], ()) for site in site_list
    ]
    if not grouped:
        return tuple(singles)
    s = len(diag)
    candidates = list(singles)
    max_dim = min(max_group_dim, s)
    for ndim in range(1, max_dim + 1):
        for axes in combinations(range(s), ndim):
            for base in site_list:
                corners = []
                ok = True
                # corner index bit j steps along axes[j]
                for idx in range(1 << ndim):
                    site = list(base)
                    for j in range(ndim):
                        if idx >> j & 1:
                            site[axes[j]] += diag[axes[j]]
                    site = tuple(site)
                    if site not in weight_of:
                        ok = False
                        break
                    corners.append(site)
                if not ok:
                    continue
                group = _try_make_group(corners, axes, weight_of)
                if group is not None:
                    candidates.append(group)
    rows = [frozenset(index_of[site] for site in g.sites) for g in candidates]
    chosen = _min_exact_cover(len(site_list), rows)
    groups = sorted((candidates[i] for i in chosen), key=lambda g: (-g.size, g.sites))
    return tuple(groups)


def _try_make_group(corners: list, axes: tuple, weight_of: dict):
    """Validate the rank-1 factorization; return the FetchGroup or None."""
    ndim = len(axes)
    ws = [weight_of[c] for c in corners]
    g = ws[0]
    for w in ws[1:]:
        g = g + w
    if g.is_zero():
        return None
    t_nums = []
    for j in range(ndim):
        t = MultiPoly(g.dim)
        for idx, w in enumerate(ws):
            if idx >> j & 1:
                t = t + w
        t_nums.append(t)
    if ndim > 1:
        # Every corner weight must equal g * prod_j (t_j or 1-t_j); cross
        # multiply by g^(ndim-1) to keep it polynomial.
        for idx, w in enumerate(ws):
            lhs = w
            for _ in range(ndim - 1):
                lhs = lhs * g
            rhs = MultiPoly.constant(g.dim, 1)
            for j in range(ndim):
                rhs = rhs * (t_nums[j] if idx >> j & 1 else g - t_nums[j])
            if lhs != rhs:
                return None
    return FetchGroup(tuple(corners), tuple(axes), g, tuple(t_nums))


def _min_exact_cover(universe: int, rows: list) -> list:
    """Dancing-links style search for a smallest exact cover, deterministic."""
    full = frozenset(range(universe))
    covers_elem: dict = {e: [] for e in range(universe)}
    for i, row in enumerate(rows):
        for e in row:
            covers_elem[e].append(i)
    best: list | None = None
    best_key = None

    def dfs(remaining: frozenset, chosen: list):
        nonlocal best, best_key
        if not remaining:
            key = tuple(sorted(tuple(sorted(rows[i])) for i in chosen))
            if best is None or len(chosen) < len(best) or (len(chosen) == len(best) and key < best_key):
                best = list(chosen)
                best_key = key
            return
        bound = len(chosen) + (len(remaining) + 7) // 8
        if best is not None and bound > len(best):
            return
        elem = min(remaining, key=lambda e: (sum(1 for i in covers_elem[e] if rows[i] <= remaining), e))
        for i in covers_elem[elem]:
            if rows[i] <= remaining:
                chosen.append(i)
                dfs(remaining - rows[i], chosen)
                chosen.pop()

    dfs(full, [])
    if best is None:
        raise PlanError("no exact cover found")
    return best


# ---------------------------------------------------------------------------
# Fetch ordering


def footprint(group: FetchGroup, diag: Sequence[int], domain: tuple) -> frozenset:
    """Texel block a hardware linear fetch touches, in coset-grid coordinates.

    Spanned axes cover the group's own two texel planes; unspanned axes take
    the neighbor toward the domain interior (the 0.5-texel convention biases
    reads off the upper boundary).
    """
    s = len(diag)
    lo_z = [min(site[i] // diag[i] for site in group.sites) for i in range(s)]
    ranges = []
    for i in range(s):
        if i in group.span_axes:
            ranges.append((lo_z[i], lo_z[i] + 1))
        else:
            c = lo_z[i]
            if c >= domain[1][i]:
                ranges.append((c - 1, c))
            else:
                ranges.append((c, c + 1))
    return frozenset(product(*[range(a, b + 1) for a, b in ranges]))


def order_fetches(groups: Sequence[FetchGroup], diag: Sequence[int]) -> tuple:
    """Order groups to minimize modeled cache misses (exhaustive for <= 8)."""
    groups = list(groups)
    n = len(groups)
    if n <= 1:
        return tuple(groups)
    s = len(diag)
    all_z = [tuple(site[i] // diag[i] for i in range(s)) for g in groups for site in g.sites]
    domain = (
        tuple(min(z[i] for z in all_z) for i in range(s)),
        tuple(max(z[i] for z in all_z) for i in range(s)),
    )
    feet = [footprint(g, diag, domain) for g in groups]
    if n <= 8:
        best = None
        best_cost = None
        for perm in permutations(range(n)):
            cost = fetch_order_cost([feet[i] for i in perm])
            if best_cost is None or cost < best_cost:
                best, best_cost = perm, cost
        return tuple(groups[i] for i in best)
    # Nearest-neighbor heuristic for large schedules, deterministic.
    unused = list(range(n))
    seq = [unused.pop(0)]
    while unused:
        prev = feet[seq[-1]]
        nxt = min(unused, key=lambda i: (len(feet[i] - prev), i))
        unused.remove(nxt)
        seq.append(nxt)
    return tuple(groups[i] for i in seq)


def fetch_order_cost(footprints: Sequence[frozenset]) -> int:
    """Modeled cache misses of a fetch sequence: new texels per fetch."""
    cost = 0
    prev: frozenset = frozenset()
    for fp in footprints:
        cost += len(fp - prev)
        prev = fp
    return cost


# ---------------------------------------------------------------------------
# Plan assembly


def compile_plan(
    sol: SplineOnLattice,
    roe: RegionOfEvaluation,
    sym: SymmetryAssignment,
    options: PlanOptions | None = None,
    check_points: int = 512,
) -> EvaluationPlan:
    """Assemble the branch-free plan; validates cover and sigma reachability."""
    options = options or PlanOptions()
    if roe.N != len(sym.transforms):
        raise PlanError("analysis and symmetry outputs disagree")
    nonneg = sol.spline.is_nonnegative_sampled()
    grouped = options.grouped and nonneg
    kernels = []
    for ref_id in sym.references:
        sr = roe.subregions[ref_id]
        groups = group_fetches(sr.sites, sr.weight_polys, roe.diag, grouped=grouped)
        if options.ordered:
            groups = order_fetches(groups, roe.diag)
        covered = sorted(site for g in groups for site in g.sites)
        if covered != sorted(sr.sites):
            raise PlanError("fetch groups do not exactly cover the kernel sites")
        kernels.append(PlanKernel(ref_id, tuple(groups)))
    plan = EvaluationPlan(
        name=sol.spline.name,
        lattice_name=sol.lattice.name,
        s=sol.spline.s,
        diag=tuple(roe.diag),
        shifts=tuple(sol.cosets.shifts),
        scale=sol.scale,
        planes=tuple((p.normal, p.offset) for p in roe.cut_planes),
        r=roe.r,
        sigma=tuple(roe.sigma),
        classes=tuple(sym.transforms),
        kernels=tuple(kernels),
        options=replace(options, grouped=grouped),
        basis_nonnegative=nonneg,
        pou_on_sublattice=roe.pou_on_sublattice,
        reflective_axes=tuple(roe.reflective_axes),
    )
    _check_sigma_reachability(plan, roe, check_points)
    return plan


def _check_sigma_reachability(plan: EvaluationPlan, roe: RegionOfEvaluation, n_points: int) -> None:
    """Densely sample the box; any sentinel hit means a missing sub-region."""
    import random

    rng = random.Random(1021)
    for _ in range(n_points):
        x = tuple(rat(rng.randint(0, 4096 * d - 1), 4096) for d in plan.diag)
        code = roe.bitcode(x)
        if plan.sigma[code % plan.r] == SIGMA_SENTINEL:
            raise PlanError(f"runtime-reachable code {code} maps to the sigma sentinel")


# ---------------------------------------------------------------------------
# Serialization

_PLAN_FORMAT = "splineplan-plan"
_PLAN_VERSION = 1


def _poly_to_obj(p: MultiPoly) -> list:
    return [[list(e), rat_to_str(c)] for e, c in sorted(p.terms.items())]


def _poly_from_obj(dim: int, obj: list) -> MultiPoly:
    return MultiPoly(dim, {tuple(e): rat_from_str(c) for e, c in obj})


def _mat_to_obj(m: RationalMatrix) -> list:
    return [[rat_to_str(v) for v in row] for row in m.a]


def _mat_from_obj(obj: list) -> RationalMatrix:
    return RationalMatrix([[rat_from_str(v) for v in row] for row in obj])


def plan_to_dict(plan: EvaluationPlan) -> dict:
    return {
        "format": _PLAN_FORMAT,
        "version": _PLAN_VERSION,
        "header": {
            "name": plan.name,
            "lattice": plan.lattice_name,
            "s": plan.s,
            "diag": list(plan.diag),
            "shifts": [list(sh) for sh in plan.shifts],
            "scale": rat_to_str(plan.scale),
            "N": plan.N,
            "Q": plan.Q,
            "r": plan.r,
            "K": plan.K,
            "options": {
                "grouped": plan.options.grouped,
                "predicated": plan.options.predicated,
                "ordered": plan.options.ordered,
                "texel_offset_half": plan.options.texel_offset_half,
            },
            "basis_nonnegative": plan.basis_nonnegative,
            "pou_on_sublattice": plan.pou_on_sublattice,
            "reflective_axes": list(plan.reflective_axes),
            "octant_fold": plan.octant_fold,
        },
        "planes": [
            {"normal": list(n), "offset": rat_to_str(o), "offset_float": float(o)}
            for n, o in plan.planes
        ],
        "sigma": list(plan.sigma),
        "classes": [
            {
                "kernel": c.kernel,
                "T": _mat_to_obj(c.T),
                "t": [rat_to_str(v) for v in c.t],
                "T_float": [[float(v) for v in row] for row in c.T.a],
                "t_float": [float(v) for v in c.t],
                "piA": [[int(v) for v in row] for row in c.pi_linear.a],
                "pib": list(c.pi_offset),
            }
            for c in plan.classes
        ],
        "kernels": [
            {
                "ref_class": k.ref_class,
                "groups": [
                    {
                        "sites": [list(site) for site in g.sites],
                        "span_axes": list(g.span_axes),
                        "g": _poly_to_obj(g.g),
                        "t_nums": [_poly_to_obj(t) for t in g.t_nums],
                    }
                    for g in k.groups
                ],
            }
            for k in plan.kernels
        ],
    }


def plan_from_dict(doc: dict) -> EvaluationPlan:
    hdr = doc["header"]
    s = hdr["s"]
    classes = tuple(
        ClassTransform(
            kernel=c["kernel"],
            T=_mat_from_obj(c["T"]),
            t=tuple(rat_from_str(v) for v in c["t"]),
            pi_linear=RationalMatrix(c["piA"]),
            pi_offset=tuple(int(v) for v in c["pib"]),
        )
        for c in doc["classes"]
    )
    kernels = tuple(
        PlanKernel(
            ref_class=k["ref_class"],
            groups=tuple(
                FetchGroup(
                    sites=tuple(tuple(site) for site in g["sites"]),
                    span_axes=tuple(g["span_axes"]),
                    g=_poly_from_obj(s, g["g"]),
                    t_nums=tuple(_poly_from_obj(s, t) for t in g["t_nums"]),
                )
                for g in k["groups"]
            ),
        )
        for k in doc["kernels"]
    )
    opts = hdr["options"]
    return EvaluationPlan(
        name=hdr["name"],
        lattice_name=hdr["lattice"],
        s=s,
        diag=tuple(hdr["diag"]),
        shifts=tuple(tuple(sh) for sh in hdr["shifts"]),
        scale=rat_from_str(hdr["scale"]),
        planes=tuple(
            (tuple(p["normal"]), rat_from_str(p["offset"])) for p in doc["planes"]
        ),
        r=hdr["r"],
        sigma=tuple(doc["sigma"]),
        classes=classes,
        kernels=kernels,
        options=PlanOptions(
            grouped=opts["grouped"],
            predicated=opts["predicated"],
            ordered=opts["ordered"],
            texel_offset_half=opts["texel_offset_half"],
        ),
        basis_nonnegative=hdr["basis_nonnegative"],
        pou_on_sublattice=hdr["pou_on_sublattice"],
        reflective_axes=tuple(hdr["reflective_axes"]),
        octant_fold=hdr["octant_fold"],
    )


def serialize_plan(plan: EvaluationPlan) -> str:
    doc = plan_to_dict(plan)
    body = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    checksum = hashlib.sha256(body.encode()).hexdigest()
    return json.dumps({"checksum": checksum, "plan": doc}, sort_keys=True, indent=1)


def deserialize_plan(text: str) -> EvaluationPlan:
    try:
        wrapper = json.loads(text)
    except json.JSONDecodeError as exc:
        raise PlanError(f"malformed plan document: {exc}") from exc
    if "plan" not in wrapper or "checksum" not in wrapper:
        raise PlanError("plan document missing checksum or payload")
    doc = wrapper["plan"]
    body = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    if hashlib.sha256(body.encode()).hexdigest() != wrapper["checksum"]:
        raise PlanError("plan checksum mismatch")
    if doc.get("format") != _PLAN_FORMAT:
        raise PlanError("not an evaluation plan document")
    if doc.get("version") != _PLAN_VERSION:
        raise PlanError(f"unsupported plan version {doc.get('version')}")
    return plan_from_dict(doc)


# ---------------------------------------------------------------------------
# Kernel emission


def build_program(plan: EvaluationPlan) -> KernelProgram:
    """Deterministically lower the plan to the mini-language op list.

    The float-mode plan interpreter executes exactly this program, so emitted
    text and direct plan interpretation agree bit for bit.
    """
    s = plan.s
    b = ProgramBuilder(s)
    # Sentinel sigma slots emit class 0: unreachable off a measure-zero set,
    # enforced at compile time by the reachability check.
    b.table("sigma", [0 if v == SIGMA_SENTINEL else v for v in plan.sigma])
    b.table("kernel_of", [c.kernel for c in plan.classes])
    b.table("T", [v for c in plan.classes for row in c.T.a for v in (float(x) for x in row)])
    b.table("t", [float(x) for c in plan.classes for x in c.t])
    b.table("piA", [float(x) for c in plan.classes for row in c.pi_linear.a for x in row])
    b.table("pib", [float(x) for c in plan.classes for x in c.pi_offset])
    args = [b.arg(i) for i in range(s)]
    zero = b.const(0.0)
    total = zero
    for coset, shift in enumerate(plan.shifts):
        xl = [b.emit("sub", args[i], b.const(float(shift[i]))) for i in range(s)]
        kk = []
        xp = []
        for i in range(s):
            d = b.const(float(plan.diag[i]))
            fd = b.emit("floor", b.emit("div", xl[i], d))
            kki = b.emit("mul", d, fd)
            kk.append(kki)
            xp.append(b.emit("sub", xl[i], kki))
        q = zero
        for j, (normal, off) in enumerate(plan.planes):
            dot = None
            for i, ni in enumerate(normal):
                if ni == 0:
                    continue
                term = b.emit("mul", b.const(float(ni)), xp[i])
                dot = term if dot is None else b.emit("add", dot, term)
            bit = b.emit("ge", dot, b.const(float(off)))
            q = b.emit("add", q, b.emit("mul", bit, b.const(float(1 << j))))
        qm = b.emit("mod", q, b.const(float(plan.r)))
        cls = b.emit("lookup", "sigma", qm)
        kid = b.emit("lookup", "kernel_of", cls)
        # Hoist per-class table loads: T, t, piA, pib.
        ss = b.const(float(s * s))
        sc = b.const(float(s))
        base_ss = b.emit("mul", cls, ss)
        base_s = b.emit("mul", cls, sc)
        Treg = [
            [b.emit("lookup", "T", b.emit("add", base_ss, b.const(float(i * s + j)))) for j in range(s)]
            for i in range(s)
        ]
        treg = [b.emit("lookup", "t", b.emit("add", base_s, b.const(float(i)))) for i in range(s)]
        Areg = [
            [b.emit("lookup", "piA", b.emit("add", base_ss, b.const(float(i * s + j)))) for j in range(s)]
            for i in range(s)
        ]
        breg = [b.emit("lookup", "pib", b.emit("add", base_s, b.const(float(i)))) for i in range(s)]
        y = []
        for i in range(s):
            acc = None
            for j in range(s):
                term = b.emit("mul", Treg[i][j], xp[j])
                acc = term if acc is None else b.emit("add", acc, term)
            y.append(b.emit("sub", acc, treg[i]))
        coset_val = zero
        for kern_idx, kernel in enumerate(plan.kernels):
            v = zero
            for group in kernel.groups:
                v = b.emit("add", v, _emit_group(b, plan, coset, group, y, kk, Areg, breg))
            if plan.K == 1:
                coset_val = v
            else:
                sel = b.emit("eq", kid, b.const(float(kern_idx)))
                coset_val = b.emit("add", coset_val, b.emit("select", sel, v, zero))
        total = b.emit("add", total, coset_val)
    return b.finish(total)


def _emit_site_coords(b, plan, site, kk, Areg, breg):
    """Mapped texel coords of one site: z = (piA site + pib + k) / d."""
    s = plan.s
    out = []
    for i in range(s):
        acc = breg[i]
        for j in range(s):
            if site[j] == 0:
                continue
            acc = b.emit("add", acc, b.emit("mul", Areg[i][j], b.const(float(site[j]))))
        acc = b.emit("add", acc, kk[i])
        out.append(b.emit("div", acc, b.const(float(plan.diag[i]))))
    return out


def _emit_poly(b, prog: HornerProgram, y):
    """Inline a Horner program over the transformed coordinates."""
    regs = []
    for op in prog.ops:
        if op.kind == "var":
            regs.append(y[op.arg0])
        elif op.kind == "const":
            regs.append(b.const(float(op.arg0)))
        elif op.kind == "add":
            regs.append(b.emit("add", regs[op.arg0], regs[op.arg1]))
        elif op.kind == "mul":
            regs.append(b.emit("mul", regs[op.arg0], regs[op.arg1]))
        else:  # fma
            regs.append(
                b.emit("add", b.emit("mul", regs[op.arg0], regs[op.arg1]), regs[op.arg2])
            )
    return regs[-1]


def _emit_group(b, plan, coset, group: FetchGroup, y, kk, Areg, breg):
    greg = _emit_poly(b, group.g_program(), y)
    if not group.span_axes:
        z = _emit_site_coords(b, plan, group.sites[0], kk, Areg, breg)
        fetched = b.emit("fetch_nearest", coset, *z)
        return b.emit("mul", greg, fetched)
    zero = b.const(0.0)
    half = b.const(0.5)
    is_zero = b.emit("eq", greg, zero)
    ts = []
    for tprog in group.t_programs():
        tnum = _emit_poly(b, tprog, y)
        ts.append(b.emit("select", is_zero, half, b.emit("div", tnum, greg)))
    base = _emit_site_coords(b, plan, group.sites[0], kk, Areg, breg)
    u = list(base)
    for j in range(len(group.span_axes)):
        corner = _emit_site_coords(b, plan, group.sites[1 << j], kk, Areg, breg)
        for i in range(plan.s):
            delta = b.emit("sub", corner[i], base[i])
            u[i] = b.emit("add", u[i], b.emit("mul", ts[j], delta))
    if plan.options.texel_offset_half:
        u = [b.emit("add", ui, half) for ui in u]
    fetched = b.emit("fetch_linear", coset, *u)
    return b.emit("mul", greg, fetched)


def emit_kernel(plan: EvaluationPlan) -> str:
    return build_program(plan).render()

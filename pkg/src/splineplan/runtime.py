"""Plan interpretation against coset-decomposed coefficient grids.

Three evaluation paths share the plan:
  * float scalar: executes the same op list the kernel emitter renders, so
    emitted text and direct interpretation are bit-identical;
  * exact-debug: the same walk in rational arithmetic (grid floats lifted
    exactly), separating logic bugs from rounding;
  * batch: vectorized numpy for rendering and Monte Carlo work.

The brute-force convolution-sum evaluator lives here too; it knows nothing of
plans and is the oracle everything else is tested against.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from itertools import product
from typing import Callable, Sequence

import numpy as np

from .exactmath import MultiPoly, R0, RationalMatrix, rat, rfloor, vdot, vec, vsub
from .lattice import CosetDecomposition
from .minilang import KernelProgram, execute
from .plancompile import EvaluationPlan, build_program
from .spline import SplineOnLattice


class RuntimeError_(ValueError):
    pass


_BOUNDARIES = ("zero", "clamp", "mirror")


class CoefficientGrid:
    """Per-coset s-dimensional float arrays with a boundary policy.

    Site D z + l_k lives at arrays[k][z - origins[k]] when in range; reads
    outside follow the boundary policy (zero extension by default).
    """

    def __init__(
        self,
        cosets: CosetDecomposition,
        arrays: Sequence[np.ndarray],
        origins: Sequence[tuple],
        boundary: str = "zero",
    ):
        if boundary not in _BOUNDARIES:
            raise RuntimeError_(f"unknown boundary policy {boundary}")
        if len(arrays) != cosets.M:
            raise RuntimeError_("one array per coset required")
        self.cosets = cosets
        self.arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
        self.origins = [tuple(int(v) for v in o) for o in origins]
        self.boundary = boundary
        s = cosets.parent.s
        for a in self.arrays:
            if a.ndim != s:
                raise RuntimeError_("array rank must match the dimension")

    @staticmethod
    def zeros(cosets: CosetDecomposition, lo: Sequence, hi: Sequence, boundary: str = "zero") -> "CoefficientGrid":
        """Grid covering all sites with real coordinates in [lo, hi]."""
        arrays = []
        origins = []
        for shift in cosets.shifts:
            zlo = []
            zhi = []
            for i, d in enumerate(cosets.diag):
                zlo.append(math.ceil((lo[i] - shift[i]) / d))
                zhi.append(math.floor((hi[i] - shift[i]) / d))
            origins.append(tuple(zlo))
            arrays.append(np.zeros([b - a + 1 for a, b in zip(zlo, zhi)]))
        return CoefficientGrid(cosets, arrays, origins, boundary)

    def fill_from(self, fn: Callable[[tuple], float]) -> None:
        """Populate every slot with fn(real-space site coordinates)."""
        for k, shift in enumerate(self.cosets.shifts):
            arr = self.arrays[k]
            origin = self.origins[k]
            for idx in np.ndindex(arr.shape):
                site = tuple(
                    d * (origin[i] + idx[i]) + shift[i] for i, d in enumerate(self.cosets.diag)
                )
                arr[idx] = fn(site)

    def site_count(self) -> int:
        return sum(a.size for a in self.arrays)

    def site_value(self, site: Sequence) -> float:
        ci = self.cosets.index_of(site)
        z = tuple(c - o for c, o in zip(ci.cell, self.origins[ci.coset]))
        return self._read_scalar(ci.coset, z)

    def set_site(self, site: Sequence, value: float) -> None:
        ci = self.cosets.index_of(site)
        z = tuple(c - o for c, o in zip(ci.cell, self.origins[ci.coset]))
        arr = self.arrays[ci.coset]
        if any(v < 0 or v >= n for v, n in zip(z, arr.shape)):
            raise RuntimeError_("site outside grid storage")
        arr[z] = value

    # -- scalar reads --------------------------------------------------------

    def _read_scalar(self, coset: int, z: tuple) -> float:
        arr = self.arrays[coset]
        idx = []
        for v, n in zip(z, arr.shape):
            v = int(v)
            if 0 <= v < n:
                idx.append(v)
                continue
            if self.boundary == "zero":
                return 0.0
            if self.boundary == "clamp":
                idx.append(min(max(v, 0), n - 1))
            else:
                idx.append(_mirror_index(v, n))
        return float(arr[tuple(idx)])

    def fetch_nearest(self, coset: int, z: Sequence[float]) -> float:
        origin = self.origins[coset]
        idx = tuple(int(round(v)) - o for v, o in zip(z, origin))
        return self._read_scalar(coset, idx)

    def fetch_linear(self, coset: int, u: Sequence[float], offset_half: bool = False) -> float:
        """Multilinear interpolation of the 2^s surrounding slots."""
        if offset_half:
            u = [v - 0.5 for v in u]
        origin = self.origins[coset]
        base = [math.floor(v) for v in u]
        frac = [v - bv for v, bv in zip(u, base)]
        s = len(u)
        total = 0.0
        for corner in product((0, 1), repeat=s):
            w = 1.0
            for f, c in zip(frac, corner):
                w *= f if c else (1.0 - f)
            if w == 0.0:
                continue
            idx = tuple(b + c - o for b, c, o in zip(base, corner, origin))
            total += w * self._read_scalar(coset, idx)
        return total

    # -- batched reads -------------------------------------------------------

    def _gather(self, coset: int, idx: np.ndarray) -> np.ndarray:
        """idx: (n, s) integer array in storage coordinates."""
        arr = self.arrays[coset]
        n = idx.shape[0]
        if self.boundary == "zero":
            valid = np.ones(n, dtype=bool)
            for i, size in enumerate(arr.shape):
                valid &= (idx[:, i] >= 0) & (idx[:, i] < size)
            clipped = np.clip(idx, 0, np.array(arr.shape) - 1)
            vals = arr[tuple(clipped[:, i] for i in range(arr.ndim))]
            return np.where(valid, vals, 0.0)
        if self.boundary == "clamp":
            clipped = np.clip(idx, 0, np.array(arr.shape) - 1)
            return arr[tuple(clipped[:, i] for i in range(arr.ndim))]
        cols = []
        for i, size in enumerate(arr.shape):
            cols.append(_mirror_index_array(idx[:, i], size))
        return arr[tuple(cols)]

    def fetch_nearest_batch(self, coset: int, z: np.ndarray) -> np.ndarray:
        idx = np.rint(z).astype(np.int64) - np.array(self.origins[coset])
        return self._gather(coset, idx)

    def fetch_linear_batch(self, coset: int, u: np.ndarray, offset_half: bool = False) -> np.ndarray:
        if offset_half:
            u = u - 0.5
        base = np.floor(u)
        frac = u - base
        base = base.astype(np.int64) - np.array(self.origins[coset])
        s = u.shape[1]
        total = np.zeros(u.shape[0])
        for corner in product((0, 1), repeat=s):
            w = np.ones(u.shape[0])
            for i, c in enumerate(corner):
                w = w * (frac[:, i] if c else 1.0 - frac[:, i])
            idx = base + np.array(corner)
            total += w * self._gather(coset, idx)
        return total


def _mirror_index(v: int, n: int) -> int:
    if n == 1:
        return 0
    period = 2 * n - 2
    v = abs(v) % period
    return period - v if v >= n else v


def _mirror_index_array(v: np.ndarray, n: int) -> np.ndarray:
    if n == 1:
        return np.zeros_like(v)
    period = 2 * n - 2
    v = np.abs(v) % period
    return np.where(v >= n, period - v, v)


def fetch_linear_emulated(grid: CoefficientGrid, coset: int, u: Sequence[float], offset_half: bool = False) -> float:
    """Hardware-style (multi)linear fetch emulation in full double precision."""
    return grid.fetch_linear(coset, u, offset_half=offset_half)


# ---------------------------------------------------------------------------
# Plan interpretation


class PlanInterpreter:
    """Pure evaluation of (plan, grid, x); mode 'float' or 'exact'."""

    def __init__(self, plan: EvaluationPlan, mode: str = "float"):
        if mode not in ("float", "exact"):
            raise RuntimeError_(f"unknown interpreter mode {mode}")
        self.plan = plan
        self.mode = mode
        self._program: KernelProgram | None = None
        self._batch_cache: dict | None = None

    def program(self) -> KernelProgram:
        if self._program is None:
            self._program = build_program(self.plan)
        return self._program

    def eval(self, grid: CoefficientGrid, x: Sequence) -> float:
        self._check_grid(grid)
        if self.mode == "float":
            offset = self.plan.options.texel_offset_half
            return execute(
                self.program(),
                [float(v) for v in x],
                grid.fetch_nearest,
                lambda coset, u: grid.fetch_linear(coset, u, offset_half=offset),
            )
        return _eval_exact(self.plan, grid, x)

    def eval_batch(self, grid: CoefficientGrid, pts: np.ndarray) -> np.ndarray:
        self._check_grid(grid)
        if self.mode != "float":
            raise RuntimeError_("batch evaluation is float-mode only")
        return _eval_batch(self.plan, grid, np.asarray(pts, dtype=np.float64), self._batch_tables())

    def _check_grid(self, grid: CoefficientGrid) -> None:
        if tuple(grid.cosets.diag) != tuple(self.plan.diag) or tuple(grid.cosets.shifts) != tuple(
            self.plan.shifts
        ):
            raise RuntimeError_("grid decomposition does not match the plan header")

    def _batch_tables(self) -> dict:
        if self._batch_cache is None:
            plan = self.plan
            tabs = {
                "normals": np.array([[float(v) for v in n] for n, _ in plan.planes]).reshape(
                    plan.Q, plan.s
                ),
                "offsets": np.array([float(o) for _, o in plan.planes]),
                "sigma": np.array(plan.sigma, dtype=np.int64),
                "T": [np.array([[float(v) for v in row] for row in c.T.a]) for c in plan.classes],
                "t": [np.array([float(v) for v in c.t]) for c in plan.classes],
                "piA": [np.array([[int(v) for v in row] for row in c.pi_linear.a]) for c in plan.classes],
                "pib": [np.array([int(v) for v in c.pi_offset]) for c in plan.classes],
                "poly": {},
            }
            self._batch_cache = tabs
        return self._batch_cache


def eval_plan(interp: PlanInterpreter, grid: CoefficientGrid, x: Sequence) -> float:
    return interp.eval(grid, x)


def _eval_exact(plan: EvaluationPlan, grid: CoefficientGrid, x: Sequence):
    """Rational interpretation; grid floats are lifted exactly."""
    x = vec(x)
    s = plan.s
    total = R0
    for coset, shift in enumerate(plan.shifts):
        xl = vsub(x, vec(shift))
        kk = tuple(d * rfloor(v / d) for v, d in zip(xl, plan.diag))
        xp = vsub(xl, kk)
        q = 0
        for j, (normal, off) in enumerate(plan.planes):
            if vdot(vec(normal), xp) >= off:
                q |= 1 << j
        cls_id = plan.sigma[q % plan.r]
        if cls_id == -1:
            raise RuntimeError_("sigma sentinel hit in exact mode")
        ct = plan.classes[cls_id]
        y = vsub(ct.T.matvec(xp), ct.t)
        kernel = plan.kernels[ct.kernel]
        for group in kernel.groups:
            g = group.g.eval(y)
            mapped = [_map_site_exact(ct, site) for site in group.sites]
            if not group.span_axes:
                z = tuple((m + k) / d for m, k, d in zip(mapped[0], kk, plan.diag))
                c = rat(grid.fetch_nearest(coset, [float(v) for v in z]))
                total += g * c
            else:
                ts = []
                for tnum in group.t_nums:
                    ts.append(tnum.eval(y) / g if g != 0 else rat(1, 2))
                base = tuple((m + k) / d for m, k, d in zip(mapped[0], kk, plan.diag))
                u = list(base)
                for j in range(len(group.span_axes)):
                    corner = tuple(
                        (m + k) / d for m, k, d in zip(mapped[1 << j], kk, plan.diag)
                    )
                    u = [ui + ts[j] * (ci - bi) for ui, ci, bi in zip(u, corner, base)]
                total += g * _fetch_linear_exact(grid, coset, u)
    return total


def _map_site_exact(ct, site) -> tuple:
    mapped = ct.pi_linear.matvec(vec(site))
    return tuple(int(m) + o for m, o in zip(mapped, ct.pi_offset))


def _fetch_linear_exact(grid: CoefficientGrid, coset: int, u: Sequence):
    base = [rfloor(v) for v in u]
    frac = [v - b for v, b in zip(u, base)]
    origin = grid.origins[coset]
    total = R0
    for corner in product((0, 1), repeat=len(u)):
        w = rat(1)
        for f, c in zip(frac, corner):
            w *= f if c else 1 - f
        if w == 0:
            continue
        idx = tuple(b + c - o for b, c, o in zip(base, corner, origin))
        total += w * rat(grid._read_scalar(coset, idx))
    return total


# ---------------------------------------------------------------------------
# Batched float interpretation


def _poly_arrays(poly: MultiPoly, cache: dict):
    key = id(poly)
    hit = cache.get(key)
    if hit is None:
        exps = np.array(sorted(poly.terms), dtype=np.int64).reshape(len(poly.terms), poly.dim)
        coeffs = np.array([float(poly.terms[tuple(e)]) for e in exps])
        hit = (exps, coeffs)
        cache[key] = hit
    return hit


def _poly_batch(poly: MultiPoly, y: np.ndarray, cache: dict) -> np.ndarray:
    if not poly.terms:
        return np.zeros(y.shape[0])
    exps, coeffs = _poly_arrays(poly, cache)
    return np.power(y[:, None, :], exps[None, :, :]).prod(axis=2) @ coeffs


def _eval_batch(plan: EvaluationPlan, grid: CoefficientGrid, pts: np.ndarray, tabs: dict) -> np.ndarray:
    n = pts.shape[0]
    out = np.zeros(n)
    diag = np.array(plan.diag, dtype=np.float64)
    offset = plan.options.texel_offset_half
    pcache = tabs["poly"]
    with np.errstate(divide="ignore", invalid="ignore"):
        for coset, shift in enumerate(plan.shifts):
            xl = pts - np.array(shift, dtype=np.float64)
            kk = np.floor(xl / diag) * diag
            xp = xl - kk
            if plan.Q:
                bits = (xp @ tabs["normals"].T) >= tabs["offsets"]
                q = bits @ (1 << np.arange(plan.Q, dtype=np.int64))
            else:
                q = np.zeros(n, dtype=np.int64)
            cls = tabs["sigma"][q % plan.r]
            if np.any(cls == -1):
                raise RuntimeError_("sigma sentinel hit in batch evaluation")
            for c in np.unique(cls):
                sel = np.nonzero(cls == c)[0]
                ct = plan.classes[int(c)]
                y = xp[sel] @ tabs["T"][c].T - tabs["t"][c]
                kernel = plan.kernels[ct.kernel]
                A = tabs["piA"][c]
                bvec = tabs["pib"][c]
                acc = np.zeros(sel.size)
                for group in kernel.groups:
                    g = _poly_batch(group.g, y, pcache)
                    mapped = [A @ np.array(site) + bvec for site in group.sites]
                    if not group.span_axes:
                        z = (mapped[0] + kk[sel]) / diag
                        acc += g * grid.fetch_nearest_batch(coset, z)
                    else:
                        base = (mapped[0] + kk[sel]) / diag
                        u = base.copy()
                        for j in range(len(group.span_axes)):
                            tnum = _poly_batch(group.t_nums[j], y, pcache)
                            t = np.where(g == 0.0, 0.5, tnum / g)
                            corner = (mapped[1 << j] + kk[sel]) / diag
                            u = u + t[:, None] * (corner - base)
                        if offset:
                            u = (u + 0.5) - 0.5
                        acc += g * grid.fetch_linear_batch(coset, u)
                out[sel] += acc
    return out


# ---------------------------------------------------------------------------
# Brute-force convolution sum


def eval_bruteforce(sol: SplineOnLattice, grid: CoefficientGrid, x: Sequence) -> float:
    """Direct sum over contributing shifts via the PP form (float result)."""
    x = vec(x)
    total = 0.0
    xf = [float(v) for v in x]
    for m in sol.contributing_sites(x):
        y = vsub(x, vec(m))
        i = sol.spline.piece_at(y)
        if i is None:
            continue
        w = sol.spline.pieces[i].poly.eval_float([float(v) for v in y]) * float(sol.scale)
        total += w * grid.site_value(m)
    return total


def eval_bruteforce_exact(sol: SplineOnLattice, grid: CoefficientGrid, x: Sequence):
    """Same sum in exact arithmetic (grid floats lifted exactly)."""
    x = vec(x)
    total = R0
    for m in sol.contributing_sites(x):
        y = vsub(x, vec(m))
        w = sol.weight_eval(y)
        if w != 0:
            total += w * rat(grid.site_value(m))
    return total


# ---------------------------------------------------------------------------
# Volume files

_VOL_MAGIC = b"splinevol 1"


def write_volume(grid: CoefficientGrid, lattice_name: str = "") -> bytes:
    head = [
        _VOL_MAGIC.decode(),
        f"lattice {lattice_name or grid.cosets.parent.name}",
        f"dim {grid.cosets.parent.s}",
        "diag " + " ".join(str(d) for d in grid.cosets.diag),
        f"cosets {grid.cosets.M}",
        f"boundary {grid.boundary}",
    ]
    for k in range(grid.cosets.M):
        head.append("shift " + " ".join(str(v) for v in grid.cosets.shifts[k]))
        head.append("origin " + " ".join(str(v) for v in grid.origins[k]))
        head.append("extent " + " ".join(str(v) for v in grid.arrays[k].shape))
    head.append("data")
    buf = io.BytesIO()
    buf.write(("\n".join(head) + "\n").encode())
    for arr in grid.arrays:
        buf.write(arr.astype("<f8").tobytes(order="C"))
    return buf.getvalue()


def read_volume(data: bytes, cosets: CosetDecomposition) -> CoefficientGrid:
    """Parse a volume document; the coset decomposition must match its header."""
    nl = data.index(b"data\n") + len(b"data\n")
    head = data[:nl].decode().splitlines()
    if head[0] != _VOL_MAGIC.decode():
        raise RuntimeError_("not a volume document")
    fields: dict = {"shift": [], "origin": [], "extent": []}
    for line in head[1:-1]:
        key, *rest = line.split()
        if key in ("shift", "origin", "extent"):
            fields[key].append(tuple(int(v) for v in rest))
        else:
            fields[key] = rest
    s = int(fields["dim"][0])
    if s != cosets.parent.s or tuple(int(v) for v in fields["diag"]) != tuple(cosets.diag):
        raise RuntimeError_("volume lattice does not match the coset decomposition")
    if tuple(fields["shift"]) != tuple(cosets.shifts):
        raise RuntimeError_("volume coset shifts do not match")
    arrays = []
    pos = nl
    for extent in fields["extent"]:
        count = int(np.prod(extent))
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(extent)
        arrays.append(arr.copy())
        pos += count * 8
    return CoefficientGrid(cosets, arrays, fields["origin"], boundary=fields["boundary"][0])

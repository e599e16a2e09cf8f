"""Named lattice/spline pairs, their prefilters, and published reference data.

Extraction of the larger splines takes seconds to tens of seconds, so PP forms
are cached on disk in the spline-description format; a cache load runs the
full import validation, which doubles as a regression check.
"""

from __future__ import annotations

import os
from pathlib import Path

from .analysis import RegionOfEvaluation, SymmetryAssignment, enumerate_subregions, search_symmetry
from .exactmath import rat
from .lattice import decompose_cartesian, named_lattice
from .plancompile import EvaluationPlan, PlanOptions, compile_plan
from .spline import (
    DirectionMatrix,
    PiecewisePolySpline,
    SplineOnLattice,
    extract_pp_form,
    format_pp_spline,
    import_pp_spline,
)

_E3 = [(1, 0, 0), (0, 1, 0), (0, 0, 1)]
_DIAG = [(1, 1, 1), (-1, 1, 1), (1, -1, 1), (1, 1, -1)]
_FCC6 = [(1, 1, 0), (1, -1, 0), (0, 1, 1), (0, 1, -1), (1, 0, 1), (-1, 0, 1)]
_D4_COLS = [
    (1, 1, 1, 1), (1, 1, -1, 1), (1, -1, 1, 1), (1, -1, -1, 1),
    (-1, 1, 1, 1), (-1, 1, -1, 1), (-1, -1, 1, 1), (-1, -1, -1, 1),
]

# name -> (direction columns, lattice name)
DIRECTION_SETS = {
    "tp2": ([(1, 0), (0, 1), (-1, 0), (0, -1)], "CC2"),
    "zp": ([(1, 0), (0, 1), (1, 1), (-1, 1)], "CC2"),
    "qc_tensor": ([(2, 0), (0, 2), (-2, 0), (0, -2)], "QC"),
    "cc_trilinear": (_E3 + _E3, "CC3"),
    "bcc_linear_rd": (_DIAG, "BCC"),
    "bcc_quintic_rd": (_DIAG + _DIAG, "BCC"),
    "fcc_cubic": (_FCC6, "FCC"),
    "d4_order4": (_D4_COLS, "D4"),
}

CORPUS = [
    "tp2", "zp", "qc_tensor", "cc_trilinear",
    "bcc_linear_rd", "bcc_quintic_rd", "fcc_cubic",
]

# Published per-reconstruction nearest-lookup counts for the splines we build.
REFERENCE_LOOKUPS = {
    "cc_trilinear": 8,
    "bcc_linear_rd": 4,
    "bcc_quintic_rd": 32,
    "fcc_cubic": 16,
}

# Approximation order of each reconstruction space.
REFERENCE_ORDERS = {
    "tp2": 2,
    "qc_tensor": 2,
    "cc_trilinear": 2,
    "bcc_linear_rd": 2,
    "bcc_quintic_rd": 4,
    "fcc_cubic": 3,
    "d4_order4": 4,
}


def _quintic_rd_prefilter() -> dict:
    """Fourth-order quasi-interpolation taps for the eight-column diagonal spline.

    Matching 1/fourier(basis) = 1 + |w|^2/3 + O(w^4) with a center tap plus the
    eight nearest lattice sites gives 5/3 and -1/12.
    """
    taps = {(0, 0, 0): rat(5, 3)}
    for sx in (-1, 1):
        for sy in (-1, 1):
            for sz in (-1, 1):
                taps[(sx, sy, sz)] = rat(-1, 12)
    return taps


def _d4_prefilter() -> dict:
    """Center tap 7/3, -1/18 on the 24 lattice sites at squared distance 2."""
    taps = {(0, 0, 0, 0): rat(7, 3)}
    for i in range(4):
        for j in range(i + 1, 4):
            for si in (-1, 1):
                for sj in (-1, 1):
                    site = [0, 0, 0, 0]
                    site[i] = si
                    site[j] = sj
                    taps[tuple(site)] = rat(-1, 18)
    return taps


PREFILTERS = {
    "bcc_quintic_rd": _quintic_rd_prefilter,
    "d4_order4": _d4_prefilter,
}


def prefilter_taps(name: str) -> dict:
    """Quasi-interpolation taps for a corpus spline (identity if none needed)."""
    builder = PREFILTERS.get(name)
    if builder is None:
        s = len(DIRECTION_SETS[name][0][0])
        return {tuple([0] * s): rat(1)}
    return builder()


def default_cache_dir() -> Path:
    env = os.environ.get("SPLINEPLAN_CACHE")
    if env:
        return Path(env)
    return Path(__file__).resolve().parents[2] / ".cache" / "splinepp"


def direction_matrix(name: str) -> DirectionMatrix:
    return DirectionMatrix(DIRECTION_SETS[name][0])


def build_spline(name: str, cache_dir: Path | None = None, validate: bool = True) -> PiecewisePolySpline:
    """Extract (or load from cache) the PP form of a named corpus spline."""
    if name not in DIRECTION_SETS:
        raise KeyError(f"unknown corpus spline {name!r}; known: {sorted(DIRECTION_SETS)}")
    cache_dir = cache_dir if cache_dir is not None else default_cache_dir()
    cache_file = cache_dir / f"{name}.spp"
    if cache_file.exists():
        return import_pp_spline(cache_file.read_text(), validate=validate)
    spline = extract_pp_form(direction_matrix(name), name=name)
    if validate:
        spline.validate()
    cache_dir.mkdir(parents=True, exist_ok=True)
    cache_file.write_text(format_pp_spline(spline))
    return spline


def build_pair(name: str, cache_dir: Path | None = None) -> SplineOnLattice:
    spline = build_spline(name, cache_dir=cache_dir)
    lat = named_lattice(DIRECTION_SETS[name][1])
    return SplineOnLattice(spline, lat, decompose_cartesian(lat))


def analyze_pair(sol: SplineOnLattice):
    roe = enumerate_subregions(sol)
    sym = search_symmetry(roe)
    return roe, sym


def build_plan(name: str, options: PlanOptions | None = None, cache_dir: Path | None = None) -> EvaluationPlan:
    sol = build_pair(name, cache_dir=cache_dir)
    roe, sym = analyze_pair(sol)
    return compile_plan(sol, roe, sym, options=options)


def cheapest_spline_for_lattice(lattice_name: str) -> str:
    table = {"CC3": "cc_trilinear", "CC": "cc_trilinear", "BCC": "bcc_linear_rd", "FCC": "fcc_cubic"}
    key = lattice_name.upper()
    if key not in table:
        raise KeyError(f"no corpus spline for lattice {lattice_name}")
    return table[key]

"""Finite computational windows, generator assembly, and Dirichlet forms.

Windows are finite subsets of Z^d (boxes or Euclidean balls) with a
deterministic site ordering.  Generators restricted to a window treat
exterior jumps according to a policy: ``absorb`` folds all exterior mass
into a per-site kill rate; ``track-targets`` additionally retains the rate
toward each individual exterior site reachable within the enumeration
radius, so hitting distributions can be read off.

Rescaled objects live on S = D^{-1} Z^d.  A site u of a window stands for
the S-point u / D; the measure weight per site is D^{-d}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from .models import (
    ConductanceModel,
    Site,
    class_representatives,
    envelope_tail_bound,
    truncation_radius,
)

DEFAULT_SITE_CAP = 250_000


class WindowSizeError(RuntimeError):
    """Window exceeds the configured site budget."""


class DegenerateSiteError(RuntimeError):
    """A site's total conductance fell below the configured floor (A1 violation)."""


@dataclass(frozen=True, eq=False)
class LatticeWindow:
    """Finite subset of Z^d with a bijective site <-> index map."""

    d: int
    sites: Tuple[Site, ...]
    descriptor: str

    def __post_init__(self):
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.sites)})
        object.__setattr__(self, "_array", np.asarray(self.sites, dtype=np.int64))

    def __len__(self) -> int:
        return len(self.sites)

    def __contains__(self, site: Site) -> bool:
        return site in self._index

    def index(self, site: Site) -> int:
        return self._index[site]

    def site(self, i: int) -> Site:
        return self.sites[i]

    @property
    def site_array(self) -> np.ndarray:
        return self._array

    @staticmethod
    def box(ranges: Sequence[Tuple[int, int]]) -> "LatticeWindow":
        """Box window; ranges are inclusive (lo, hi) per axis."""
        axes = [np.arange(lo, hi + 1) for lo, hi in ranges]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(axes))
        sites = tuple(map(tuple, grid.tolist()))
        desc = "box " + "x".join(f"[{lo},{hi}]" for lo, hi in ranges)
        return LatticeWindow(d=len(axes), sites=sites, descriptor=desc)

    @staticmethod
    def ball(center: Site, radius: float) -> "LatticeWindow":
        """Euclidean ball {x : |x - center| < radius} (strict inequality)."""
        d = len(center)
        r = int(math.ceil(radius))
        axes = [np.arange(c - r, c + r + 1) for c in center]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
        dist2 = ((grid - np.asarray(center)) ** 2).sum(axis=1)
        grid = grid[dist2 < radius * radius]
        sites = tuple(map(tuple, grid.tolist()))
        return LatticeWindow(d=d, sites=sites, descriptor=f"ball(center={center}, r={radius})")

    def bounding_box(self) -> Tuple[np.ndarray, np.ndarray]:
        a = self.site_array
        return a.min(axis=0), a.max(axis=0)


@dataclass(eq=False)
class GeneratorMatrix:
    """Continuous-time generator of the chain restricted to a window.

    matrix holds interior rates off-diagonal and -(interior + kill) on the
    diagonal, so rows of (interior - diagonal - kill) sum to zero exactly.
    defect[i] is the certified per-site rate mass dropped by truncation.
    """

    window: LatticeWindow
    matrix: sp.csr_matrix
    kill: np.ndarray
    defect: np.ndarray
    nu: np.ndarray  # total truncated rate per site (interior + kill)
    truncation: int
    targets: Optional[Tuple[Site, ...]] = None
    target_rates: Optional[sp.csr_matrix] = None

    @property
    def n(self) -> int:
        return len(self.window)

    @property
    def uniformization_rate(self) -> float:
        return float(self.nu.max())

    def to_coordinate_text(self) -> str:
        coo = self.matrix.tocoo()
        lines = [
            f"{r} {c} {v:.17g}"
            for r, c, v in sorted(zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist()))
        ]
        return "\n".join(lines) + "\n"


def _index_grid(window: LatticeWindow, pad: int) -> Tuple[np.ndarray, np.ndarray]:
    """Dense int32 grid over the padded bounding box: site index or -1."""
    lo, hi = window.bounding_box()
    lo = lo - pad
    shape = tuple((hi - lo + pad + 1).tolist())
    grid = np.full(shape, -1, dtype=np.int64)
    rel = window.site_array - lo
    grid[tuple(rel.T)] = np.arange(len(window))
    return grid, lo


def build_generator(
    model: ConductanceModel,
    window: LatticeWindow,
    tol: float = 1e-10,
    policy: str = "absorb",
    site_cap: int = DEFAULT_SITE_CAP,
    max_radius: Optional[int] = None,
    target_radius: Optional[int] = None,
) -> GeneratorMatrix:
    """Assemble the window-restricted generator with certified truncation.

    tol bounds the per-site rate mass dropped beyond the truncation radius
    R*.  Jumps are enumerated only out to the window diameter (or the
    target-tracking radius); mass between there and R* exits the window for
    sure and is folded into the kill rate arithmetically, so the defect
    stays <= tol regardless of window size.  max_radius optionally caps R*;
    the defect then honestly reports the larger dropped mass.
    """
    n = len(window)
    if n > site_cap:
        raise WindowSizeError(
            f"window has {n} sites, cap is {site_cap}; shrink the window or raise the cap"
        )
    if policy not in ("absorb", "track-targets"):
        raise ValueError(f"unknown exterior policy {policy!r}")

    r_star = truncation_radius(model, tol)
    if max_radius is not None and max_radius < r_star:
        r_star = max_radius
    defect_value = envelope_tail_bound(model, r_star)

    lo, hi = window.bounding_box()
    diameter = int(math.ceil(math.sqrt(float(((hi - lo) ** 2).sum())))) + 1
    r_enum = min(r_star, diameter)
    if policy == "track-targets" and target_radius is not None:
        r_enum = min(r_star, max(diameter, int(target_radius)))

    if model.class_jumps is not None:
        per_row = min(
            max(len(w) for _, w in model.class_jumps.values()),
            (2 * r_enum + 1) ** model.d,
        )
        if n * per_row > 40_000_000:
            raise WindowSizeError(
                "explicit generator would exceed the sparsity budget; "
                "use the convolution evolver for large translation-invariant jobs"
            )
        rows, cols, vals, kill_enum, ext = _assemble_classed(model, window, r_enum, policy)
        reps = class_representatives(model)
        nu_map = {
            model.class_of(s): float(model.jumps_from(s, r_star)[1].sum()) for s in reps
        }
        nu_of_site = np.asarray([nu_map[model.class_of(s)] for s in window.sites])
    else:
        rows, cols, vals, kill_enum, ext = _assemble_generic(model, window, r_enum, policy)
        nu_of_site = None

    interior = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    interior.sum_duplicates()
    interior_sum = np.asarray(interior.sum(axis=1)).ravel()
    if nu_of_site is not None:
        kill = np.maximum(nu_of_site - interior_sum, 0.0)
    else:
        kill = kill_enum
    nu = interior_sum + kill
    diag = sp.diags(-nu)
    matrix = (interior + diag).tocsr()
    defect = np.full(n, defect_value)

    targets = None
    target_rates = None
    if policy == "track-targets":
        ext_sites, ext_rows, ext_vals, ext_cols = ext
        targets = tuple(map(tuple, ext_sites.tolist()))
        target_rates = sp.coo_matrix(
            (ext_vals, (ext_rows, ext_cols)), shape=(n, len(targets))
        ).tocsr()

    return GeneratorMatrix(
        window=window,
        matrix=matrix,
        kill=kill,
        defect=defect,
        nu=nu,
        truncation=r_star,
        targets=targets,
        target_rates=target_rates,
    )


def _assemble_classed(model, window, r_star, policy):
    """Vectorized assembly through per-class jump tables and an index grid."""
    n = len(window)
    grid, lo = _index_grid(window, pad=r_star + 1)
    sites = window.site_array
    rel = sites - lo

    if model.translation_invariant:
        groups = [(np.arange(n), *model.jumps_from(window.site(0), r_star))]
    else:
        keys = [model.class_of(s) for s in window.sites]
        uniq = sorted(set(keys))
        key_arr = np.asarray([uniq.index(k) for k in keys])
        groups = []
        for j, key in enumerate(uniq):
            members = np.nonzero(key_arr == j)[0]
            offs, wts = model.class_jumps[key]
            keep = np.einsum("ij,ij->i", offs, offs) <= r_star * r_star + 1e-9
            groups.append((members, offs[keep], wts[keep]))

    rows_l: List[np.ndarray] = []
    cols_l: List[np.ndarray] = []
    vals_l: List[np.ndarray] = []
    kill = np.zeros(n)
    ext_site_l: List[np.ndarray] = []
    ext_row_l: List[np.ndarray] = []
    ext_val_l: List[np.ndarray] = []

    for members, offsets, weights in groups:
        member_rel = rel[members]
        for z, w in zip(offsets, weights):
            if w <= 0.0:
                continue
            tgt = member_rel + z
            idx = grid[tuple(tgt.T)]
            inside = idx >= 0
            rows_l.append(members[inside])
            cols_l.append(idx[inside])
            vals_l.append(np.full(int(inside.sum()), float(w)))
            out = ~inside
            if out.any():
                np.add.at(kill, members[out], float(w))
                if policy == "track-targets":
                    ext_site_l.append(tgt[out] + lo)
                    ext_row_l.append(members[out])
                    ext_val_l.append(np.full(int(out.sum()), float(w)))

    rows = np.concatenate(rows_l) if rows_l else np.zeros(0, dtype=int)
    cols = np.concatenate(cols_l) if cols_l else np.zeros(0, dtype=int)
    vals = np.concatenate(vals_l) if vals_l else np.zeros(0)

    ext = None
    if policy == "track-targets":
        ext = _dedupe_targets(model.d, ext_site_l, ext_row_l, ext_val_l)
    return rows, cols, vals, kill, ext


def _assemble_generic(model, window, r_star, policy):
    """Per-site fallback for models without periodicity classes."""
    n = len(window)
    rows_l, cols_l, vals_l = [], [], []
    kill = np.zeros(n)
    ext_site_l, ext_row_l, ext_val_l = [], [], []
    for i, x in enumerate(window.sites):
        offsets, weights = model.jumps_from(x, r_star)
        for z, w in zip(offsets, weights):
            if w <= 0.0:
                continue
            y = tuple(int(a + b) for a, b in zip(x, z))
            if y in window:
                rows_l.append(i)
                cols_l.append(window.index(y))
                vals_l.append(float(w))
            else:
                kill[i] += float(w)
                if policy == "track-targets":
                    ext_site_l.append(np.asarray([y], dtype=np.int64))
                    ext_row_l.append(np.asarray([i]))
                    ext_val_l.append(np.asarray([float(w)]))
    rows = np.asarray(rows_l, dtype=int)
    cols = np.asarray(cols_l, dtype=int)
    vals = np.asarray(vals_l)
    ext = None
    if policy == "track-targets":
        ext = _dedupe_targets(model.d, ext_site_l, ext_row_l, ext_val_l)
    return rows, cols, vals, kill, ext


def _dedupe_targets(d, ext_site_l, ext_row_l, ext_val_l):
    if not ext_site_l:
        return (
            np.zeros((0, d), dtype=np.int64),
            np.zeros(0, dtype=int),
            np.zeros(0),
            np.zeros(0, dtype=int),
        )
    coords = np.concatenate(ext_site_l, axis=0)
    rows = np.concatenate(ext_row_l)
    vals = np.concatenate(ext_val_l)
    uniq, inverse = np.unique(coords, axis=0, return_inverse=True)
    return uniq, rows, vals, inverse.ravel()


def transition_matrix(
    model: ConductanceModel,
    window: LatticeWindow,
    tol: float = 1e-10,
    nu_floor: float = 1e-12,
) -> Tuple[sp.csr_matrix, np.ndarray, np.ndarray]:
    """One-step law P(x, y) = C(x, y) / nu_x on the window.

    Returns (P, kill_column, nu).  Rows of P plus the kill column sum to 1
    exactly (up to roundoff): the kill column holds the exterior mass.
    """
    gen = build_generator(model, window, tol=tol)
    nu = gen.nu
    if np.any(nu < nu_floor):
        bad = window.site(int(np.argmin(nu)))
        raise DegenerateSiteError(f"nu at {bad} is {nu.min()}, below floor {nu_floor}")
    inv = sp.diags(1.0 / nu)
    interior = gen.matrix + sp.diags(nu)  # strip the diagonal back off
    return (inv @ interior).tocsr(), gen.kill / nu, nu


@dataclass(frozen=True)
class RescaledForm:
    """Conventions for energies on S = D^{-1} Z^d.

    half_factor selects between the ordered-pair sum with 1/2 (the form
    whose resolvent identity matches the chain) and without (the
    homogenization-section convention that bridges to grad f . a grad g).
    truncation_radius, when set, drops pairs with |x - y| > radius in S
    units (the R-truncated conductances).
    """

    D: float = 1.0
    half_factor: bool = True
    truncation_radius: Optional[float] = None

    def measure_weight(self, d: int) -> float:
        return float(self.D) ** (-d)


def dirichlet_energy(
    form: RescaledForm,
    model: ConductanceModel,
    window: LatticeWindow,
    f: np.ndarray,
    g: Optional[np.ndarray] = None,
    tol: float = 1e-12,
) -> float:
    """Ordered-pair energy sum over pairs meeting the window.

    f and g are values on the window's sites (S-points site/D), extended by
    zero outside; cross-boundary terms are included.  The value is
    sum_{(x,y)} (f(x)-f(y)) (g(x)-g(y)) D^(2-d) C_{x,y}, halved when the
    form's half_factor is set.
    """
    if g is None:
        g = f
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    n = len(window)
    if f.shape != (n,) or g.shape != (n,):
        raise ValueError("f and g must be vectors over the window's sites")

    d = model.d
    D = float(form.D)
    r_star = truncation_radius(model, tol)
    if form.truncation_radius is not None:
        r_star = min(r_star, int(math.floor(form.truncation_radius * D + 1e-9)))

    gen = build_generator(model, window, tol=tol, max_radius=r_star)
    interior = gen.matrix + sp.diags(gen.nu)
    # Interior ordered pairs (x, y) with x in W: (f x - f y)(g x - g y) C.
    coo = interior.tocoo()
    fd = f[coo.row] - f[coo.col]
    gd = g[coo.row] - g[coo.col]
    total = float(np.dot(fd * gd, coo.data))
    # Pairs with exactly one endpoint inside appear twice in the ordered sum
    # over all of S x S; the assembly above captured them once via the kill
    # rate, so add the boundary term a second time.
    total += 2.0 * float(np.dot(f * g, gen.kill))
    total *= D ** (2 - d)
    if form.half_factor:
        total *= 0.5
    return total

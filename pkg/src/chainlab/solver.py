"""Exact heat kernels, resolvents, Green functions, and identity checks.

Kernels are computed by uniformization: the semigroup is a Poisson mixture
of powers of the substochastic matrix I + L / Lambda, truncated with a
certified geometric tail bound.  Long horizons are handled by slicing time
so each slice's Poisson mean stays in floating-point range.

Two evolver backends share the uniformization driver: an explicit sparse
matrix (the default; required for periodic and custom models) and a
matrix-free convolution for translation-invariant models on box or ball
windows, which keeps very large windows affordable.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .lattice import GeneratorMatrix, LatticeWindow, build_generator
from .models import (
    ConductanceModel,
    Site,
    class_representatives,
    envelope_tail_bound,
    truncation_radius,
)

_MAX_SLICE_MEAN = 600.0


class SolverError(RuntimeError):
    pass


class WindowTooSmallError(SolverError):
    """Boundary leakage exceeded its budget at the largest requested time."""


# ---------------------------------------------------------------------------
# Evolvers and uniformization
# ---------------------------------------------------------------------------


class SparseEvolver:
    """Applies I + L / Lambda through the explicit generator matrix."""

    def __init__(self, gen: GeneratorMatrix):
        self.window = gen.window
        self.rate = max(gen.uniformization_rate, 1e-300)
        self._step = (sp.identity(gen.n, format="csr") + gen.matrix / self.rate).tocsr()
        self.defect = float(gen.defect.max()) if gen.n else 0.0
        if self._step.data.size and self._step.data.min() < -1e-12:
            raise SolverError("uniformization step matrix has a negative entry")

    @property
    def n(self) -> int:
        return len(self.window)

    def apply(self, v: np.ndarray) -> np.ndarray:
        return self._step @ v


class ConvolutionEvolver:
    """Matrix-free I + L / Lambda for translation-invariant models.

    The window is embedded in its bounding box; interior rates act as a
    truncated convolution with the jump table, evaluated through FFTs with
    zero padding wide enough to kill wrap-around.  Exterior mass is absorbed
    (vectors are masked to the window after every application).
    """

    def __init__(self, model: ConductanceModel, window: LatticeWindow, tol: float = 1e-10,
                 max_radius: Optional[int] = None):
        if not model.translation_invariant:
            raise SolverError("convolution evolver needs a translation-invariant model")
        self.window = window
        r_star = truncation_radius(model, tol)
        if max_radius is not None:
            r_star = min(r_star, max_radius)
        self.truncation = r_star
        self.defect = envelope_tail_bound(model, r_star)
        offsets, weights = model.jumps_from(window.site(0), r_star)
        self.rate = float(weights.sum())

        lo, hi = window.bounding_box()
        shape = tuple(int(v) for v in (hi - lo + 1))
        self._shape = shape
        self._mask = np.zeros(shape, dtype=bool)
        rel = window.site_array - lo
        self._mask[tuple(rel.T)] = True
        self._rel = rel

        import scipy.fft

        # Circular kernel on the padded grid: the pad of width >= 2 r_star
        # guarantees wrapped indices never alias window sites.
        self._fft_shape = [scipy.fft.next_fast_len(s + 2 * r_star) for s in shape]
        kernel = np.zeros(self._fft_shape)
        kidx = offsets % np.asarray(self._fft_shape, dtype=np.int64)
        kernel[tuple(kidx.T)] = weights / self.rate
        axes = tuple(range(model.d))
        self._kernel_hat = scipy.fft.rfftn(kernel, axes=axes)
        self._fft = scipy.fft
        self._r = r_star
        self._d = model.d

    @property
    def n(self) -> int:
        return len(self.window)

    def apply(self, v: np.ndarray) -> np.ndarray:
        single = v.ndim == 1
        cols = v.reshape(self.n, -1)
        out = np.empty_like(cols)
        for j in range(cols.shape[1]):
            grid = np.zeros(self._shape)
            grid[tuple(self._rel.T)] = cols[:, j]
            axes = tuple(range(self._d))
            vh = self._fft.rfftn(grid, s=self._fft_shape, axes=axes)
            conv = self._fft.irfftn(vh * self._kernel_hat, s=self._fft_shape, axes=axes)
            conv = conv[tuple(slice(0, s) for s in self._shape)]
            out[:, j] = conv[tuple(self._rel.T)]
        return out.ravel() if single else out


def uniformized_evolve(
    evolver, v: np.ndarray, dt: float, tail_tol: float = 1e-13
) -> Tuple[np.ndarray, float]:
    """exp(dt L) v via the Poisson mixture; returns (result, certified tail)."""
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    if dt == 0:
        return v.copy(), 0.0
    rate = evolver.rate
    slices = max(1, int(math.ceil(rate * dt / _MAX_SLICE_MEAN)))
    mu = rate * dt / slices
    per_slice_tol = tail_tol / slices
    total_tail = 0.0
    for _ in range(slices):
        v, tail = _poisson_mixture(evolver, v, mu, per_slice_tol)
        total_tail += tail
    return v, total_tail


def _poisson_mixture(evolver, v, mu, tol):
    w = math.exp(-mu)
    acc = w * v
    vk = v
    k = 0
    cum = w
    while True:
        k += 1
        vk = evolver.apply(vk)
        w *= mu / k
        acc = acc + w * vk
        cum += w
        if k > mu:
            rho = mu / (k + 1)
            geo_tail = w * rho / (1.0 - rho)
            if geo_tail <= tol:
                return acc, geo_tail
        if k > 100 * (mu + 10):
            raise SolverError("uniformization series failed to converge")


# ---------------------------------------------------------------------------
# Kernel tables
# ---------------------------------------------------------------------------


@dataclass
class KernelTable:
    """p(t, x, y) with respect to mu = 1 on a window, one row per source.

    values has shape (n_sources, n_times, n_sites); windows are absorbing,
    so rows are substochastic and the missing mass is the killed mass.
    """

    window: LatticeWindow
    times: Tuple[float, ...]
    sources: Tuple[Site, ...]
    values: np.ndarray
    rate: float
    series_tail: float
    truncation_defect: float

    def p(self, t: float, x: Site, y: Site) -> float:
        ti = self.times.index(t)
        si = self.sources.index(x)
        return float(self.values[si, ti, self.window.index(y)])

    def row(self, t: float, x: Site) -> np.ndarray:
        return self.values[self.sources.index(x), self.times.index(t)]

    def mass(self, t: float, x: Site) -> float:
        return float(self.row(t, x).sum())

    def to_csv(self) -> str:
        d = self.window.d
        hdr = (
            "t,"
            + ",".join(f"x{i+1}" for i in range(d))
            + ","
            + ",".join(f"y{i+1}" for i in range(d))
            + ",value"
        )
        lines = [hdr]
        for si, src in enumerate(self.sources):
            for ti, t in enumerate(self.times):
                for yi, y in enumerate(self.window.sites):
                    v = self.values[si, ti, yi]
                    if v != 0.0:
                        lines.append(
                            f"{t:.17g},"
                            + ",".join(str(c) for c in src)
                            + ","
                            + ",".join(str(c) for c in y)
                            + f",{v:.17g}"
                        )
        return "\n".join(lines) + "\n"


def heat_kernel(
    evolver_or_gen,
    times: Sequence[float],
    sources: Sequence[Site],
    tail_tol: float = 1e-13,
) -> KernelTable:
    """Kernel rows from each source at each time, by uniformization."""
    evolver = (
        SparseEvolver(evolver_or_gen)
        if isinstance(evolver_or_gen, GeneratorMatrix)
        else evolver_or_gen
    )
    times = sorted(float(t) for t in times)
    if times and times[0] < 0:
        raise ValueError("times must be nonnegative")
    window = evolver.window
    n = len(window)
    v = np.zeros((n, len(sources)))
    for j, s in enumerate(sources):
        v[window.index(tuple(s)), j] = 1.0
    values = np.empty((len(sources), len(times), n))
    prev_t = 0.0
    total_tail = 0.0
    for ti, t in enumerate(times):
        v, tail = uniformized_evolve(evolver, v, t - prev_t, tail_tol)
        total_tail += tail
        values[:, ti, :] = v.T
        prev_t = t
    trunc = getattr(evolver, "defect", 0.0)
    return KernelTable(
        window=window,
        times=tuple(times),
        sources=tuple(tuple(s) for s in sources),
        values=values,
        rate=evolver.rate,
        series_tail=total_tail,
        truncation_defect=trunc,
    )


def make_evolver(
    model: ConductanceModel,
    window: LatticeWindow,
    tol: float = 1e-10,
    max_radius: Optional[int] = None,
    backend: str = "auto",
):
    """Choose the sparse or convolution backend for an absorbing window."""
    if backend == "sparse":
        return SparseEvolver(build_generator(model, window, tol=tol, max_radius=max_radius))
    if backend == "conv":
        return ConvolutionEvolver(model, window, tol=tol, max_radius=max_radius)
    if model.translation_invariant:
        r = truncation_radius(model, tol) if max_radius is None else max_radius
        if len(window) * (2 * r + 1) ** model.d > 2_000_000:
            return ConvolutionEvolver(model, window, tol=tol, max_radius=max_radius)
    return SparseEvolver(build_generator(model, window, tol=tol, max_radius=max_radius))


# ---------------------------------------------------------------------------
# Window sizing
# ---------------------------------------------------------------------------


@functools.lru_cache(maxsize=256)
def second_moment(model: ConductanceModel, tol: float = 1e-10) -> float:
    """sup_x sum_z |z|^2 C(x, x + z), truncated with certified tail folded in."""
    from .models import second_moment_tail_bound

    r = truncation_radius(model, tol)
    worst = 0.0
    for x in class_representatives(model):
        offsets, weights = model.jumps_from(x, r)
        if len(offsets):
            worst = max(worst, float(np.dot(np.einsum("ij,ij->i", offsets, offsets), weights)))
    return worst + second_moment_tail_bound(model, r)


def window_for_time(
    model: ConductanceModel,
    t_max: float,
    center: Site = None,
    leakage_tol: float = 1e-6,
    safety: float = 7.0,
) -> LatticeWindow:
    """Box window whose boundary leakage at t_max should be within budget.

    Two exit mechanisms size the radius: the diffusive scale
    sqrt(second moment * t), and, for unbounded ranges, single jumps past
    half the radius (expected count ~ t * envelope tail).  Callers verify
    the realized leakage from the kernel mass and enlarge if needed.
    """
    if center is None:
        center = (0,) * model.d
    t_eff = max(t_max, 1.0)
    spread = math.sqrt(max(second_moment(model), 1e-12) * t_eff)
    r_diff = safety * spread
    if model.bounded_range is not None:
        r_jump = 2.0 * model.bounded_range
    else:
        r_jump = 2.0 * truncation_radius(model, leakage_tol / (2.0 * t_eff))
    r = int(math.ceil(max(r_diff, r_jump))) + 2
    return LatticeWindow.box([(c - r, c + r) for c in center])


# ---------------------------------------------------------------------------
# Profile checks: Nash, truncated kernel, near-diagonal lower bound
# ---------------------------------------------------------------------------


_class_representatives = class_representatives


def nash_check(
    model: ConductanceModel,
    t_grid: Sequence[float],
    leakage_tol: float = 1e-5,
    assembly_tol: float = 1e-8,
    backend: str = "auto",
    max_enlarge: int = 3,
) -> List[dict]:
    """Profile of sup_x p(t, x, x) t^(d/2) over the time grid.

    For translation-invariant models the on-diagonal value is constant in x,
    so one row per periodicity class realizes the sup (up to the reported
    boundary leakage).
    """
    d = model.d
    t_max = max(t_grid)
    sources = _class_representatives(model)
    safety = 7.0
    for attempt in range(max_enlarge):
        window = window_for_time(model, t_max, leakage_tol=leakage_tol, safety=safety)
        evolver = make_evolver(model, window, tol=assembly_tol, backend=backend)
        table = heat_kernel(evolver, t_grid, sources)
        leakage = max(1.0 - table.mass(t_max, s) for s in table.sources)
        if leakage <= leakage_tol:
            break
        safety *= 1.5
    else:
        raise WindowTooSmallError(
            f"leakage {leakage} above budget {leakage_tol} after {max_enlarge} enlargements"
        )
    rows = []
    for t in table.times:
        val = max(table.p(t, s, s) for s in table.sources)
        rows.append(
            {
                "t": t,
                "profile": val * t ** (d / 2.0),
                "leakage": max(1.0 - table.mass(t, s) for s in table.sources),
            }
        )
    return rows


def truncated_model(model: ConductanceModel, radius: float) -> ConductanceModel:
    """Remove jumps longer than radius (Z^d units)."""
    if model.class_jumps is None:
        raise SolverError("truncation requires tabulated jump classes")
    r_int = int(math.floor(radius + 1e-9))
    new_jumps = {}
    for key, (offsets, weights) in model.class_jumps.items():
        keep = np.einsum("ij,ij->i", offsets, offsets) <= radius * radius + 1e-9
        new_jumps[key] = (offsets[keep], weights[keep])
    phi = model.envelope

    def phi_trunc(i: float) -> float:
        return phi(i) if phi is not None and i <= r_int else 0.0

    return replace(
        model,
        class_jumps=new_jumps,
        envelope=phi_trunc if phi is not None else None,
        bounded_range=float(r_int),
        table_radius=min(model.table_radius, float(r_int)),
        name=f"{model.name}|trunc{r_int}",
        enumerate_override=None,
    )


def truncated_kernel_check(
    model: ConductanceModel,
    lam: float,
    D: float,
    t_grid: Sequence[float],
    leakage_tol: float = 1e-9,
    assembly_tol: float = 1e-9,
    value_floor: float = 1e-13,
) -> List[dict]:
    """Weighted sup profile of the large-jump-removed kernel.

    For each t in (0, 1]: sup over x, y of
    p^(D,lam)(t, x, y) * t^(d/2) * exp(|x - y| / sqrt(lam)), evaluated from
    one source per class by translation invariance; x - y in S units.
    """
    d = model.d
    cut = D * math.sqrt(lam)
    wmodel = truncated_model(model, cut)
    t_unit_max = D * D * max(t_grid)
    window = window_for_time(wmodel, t_unit_max, leakage_tol=leakage_tol, safety=8.0)
    evolver = make_evolver(wmodel, window, tol=assembly_tol)
    sources = _class_representatives(wmodel)
    unit_times = [D * D * t for t in t_grid]
    table = heat_kernel(evolver, unit_times, sources, tail_tol=1e-16)
    sites = window.site_array
    rows = []
    for t in t_grid:
        best = 0.0
        arg = None
        for s in table.sources:
            row = table.row(D * D * t, s)
            dist = np.sqrt(((sites - np.asarray(s)) ** 2).sum(axis=1)) / D
            weighted = np.where(
                row > value_floor, row * D**d * np.exp(dist / math.sqrt(lam)), 0.0
            )
            j = int(np.argmax(weighted))
            if weighted[j] > best:
                best = float(weighted[j]) * t ** (d / 2.0)
                arg = window.site(j)
        rows.append({"t": t, "profile": best, "argmax": arg})
    return rows


def semigroup_perturbation(
    model: ConductanceModel,
    lam: float,
    D: float,
    t_grid: Sequence[float],
    assembly_tol: float = 1e-10,
) -> dict:
    """sup-norm distance between the full and truncated semigroups.

    Returns the distances d(t) = sup_x L1 distance of the two kernel rows,
    the least-squares slope c of d(t) ~ c t, and the worst relative residual
    of that linear fit.
    """
    cut = D * math.sqrt(lam)
    wmodel = truncated_model(model, cut)
    t_unit = [D * D * t for t in t_grid]
    window = window_for_time(model, max(t_unit), leakage_tol=1e-10, safety=8.0)
    ev_full = make_evolver(model, window, tol=assembly_tol)
    ev_trunc = make_evolver(wmodel, window, tol=assembly_tol)
    sources = _class_representatives(model)
    tab_full = heat_kernel(ev_full, t_unit, sources)
    tab_trunc = heat_kernel(ev_trunc, t_unit, sources)
    dists = []
    for tu in t_unit:
        worst = max(
            float(np.abs(tab_full.row(tu, s) - tab_trunc.row(tu, s)).sum())
            for s in sources
        )
        dists.append(worst)
    t_arr = np.asarray(t_grid, dtype=float)
    d_arr = np.asarray(dists)
    c = float(np.dot(t_arr, d_arr) / np.dot(t_arr, t_arr))
    resid = float(np.max(np.abs(d_arr - c * t_arr) / np.maximum(d_arr, 1e-300)))
    return {"t": list(t_grid), "distance": dists, "slope": c, "relative_residual": resid}


def lower_bound_check(
    model: ConductanceModel,
    t_grid: Sequence[float],
    kill_factor: float = 8.0,
    leakage_tol: float = 1e-8,
    assembly_tol: float = 1e-9,
) -> List[dict]:
    """min over |y - x| <= 2 sqrt(t) of p(t, x, y) t^(d/2), with and without
    killing outside the ball of radius kill_factor * sqrt(t)."""
    d = model.d
    sources = _class_representatives(model)
    rows = []
    for t in t_grid:
        big = window_for_time(model, t, leakage_tol=leakage_tol, safety=7.0)
        ev = make_evolver(model, big, tol=assembly_tol)
        free = heat_kernel(ev, [t], sources)
        r_kill = kill_factor * math.sqrt(t)
        entry = {"t": t}
        for label, table in (("free", free), ("killed", None)):
            vals = []
            for s in sources:
                if label == "killed":
                    ball = LatticeWindow.ball(s, r_kill)
                    evk = make_evolver(model, ball, tol=assembly_tol)
                    table_k = heat_kernel(evk, [t], [s])
                    row, win = table_k.row(t, s), ball
                else:
                    row, win = table.row(t, s), big
                sites = win.site_array
                dist2 = ((sites - np.asarray(s)) ** 2).sum(axis=1)
                near = dist2 <= 4.0 * t
                vals.append(float(row[near].min()))
            entry[label] = min(vals) * t ** (d / 2.0)
        rows.append(entry)
    return rows


def holder_modulus(
    model: ConductanceModel,
    D: float,
    t0: float,
    x0: Site = None,
    radii: Sequence[float] = (1.0, 2.0, 4.0, 8.0),
    assembly_tol: float = 1e-9,
    leakage_tol: float = 1e-6,
) -> dict:
    """Fitted oscillation-decay exponent of x -> p^D(t0, x, x0).

    Returns the log-log slope beta of osc over shrinking S-balls; flagged
    degenerate when the oscillation is below resolution.  A diagnostic, not
    a pinned constant: only positivity is asserted downstream.
    """
    if x0 is None:
        x0 = (0,) * model.d
    t_unit = D * D * t0
    center = tuple(int(round(D * c)) for c in x0)
    window = window_for_time(model, t_unit, center=center, leakage_tol=leakage_tol, safety=7.0)
    ev = make_evolver(model, window, tol=assembly_tol)
    table = heat_kernel(ev, [t_unit], [center])
    row = table.row(t_unit, center) * D**model.d
    sites = window.site_array
    dist = np.sqrt(((sites - np.asarray(center)) ** 2).sum(axis=1)) / D
    oscs, rads = [], []
    for r in sorted(radii):
        ball = row[dist <= r]
        osc = float(ball.max() - ball.min())
        if osc > 1e-13 * max(row.max(), 1e-300):
            oscs.append(osc)
            rads.append(r)
    if len(oscs) < 2:
        return {"beta": 0.0, "degenerate": True, "radii": list(radii), "osc": oscs}
    slope = np.polyfit(np.log(rads), np.log(oscs), 1)[0]
    return {"beta": float(slope), "degenerate": False, "radii": rads, "osc": oscs}


# ---------------------------------------------------------------------------
# Green functions, hitting distributions, exit moments, resolvents
# ---------------------------------------------------------------------------


def _dense_solve_refined(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    lu, piv = scipy.linalg.lu_factor(A)
    X = scipy.linalg.lu_solve((lu, piv), B)
    R = B - A @ X
    X += scipy.linalg.lu_solve((lu, piv), R)
    return X


def green_function(gen: GeneratorMatrix) -> np.ndarray:
    """G = (-L)^(-1): expected occupation time before exit (dense)."""
    A = -gen.matrix.toarray()
    if gen.kill.max() <= 0.0 and gen.defect.max() <= 0.0:
        raise SolverError("window never exits: Green function undefined")
    n = gen.n
    try:
        G = _dense_solve_refined(A, np.eye(n))
    except scipy.linalg.LinAlgError as e:
        raise SolverError(f"killed generator is singular: {e}") from e
    return G


def exit_time_moments(gen: GeneratorMatrix) -> np.ndarray:
    """E^x tau per site: solve (-L) u = 1."""
    A = -gen.matrix.toarray()
    return _dense_solve_refined(A, np.ones(gen.n))


def hitting_distribution(gen: GeneratorMatrix, x: Site) -> dict:
    """P^x(Y_tau = w) for tracked exterior targets w, by two routes.

    Route (i) solves (-L) H = B directly; route (ii) forms G = (-L)^(-1)
    and multiplies G B.  Their maximal discrepancy is an internal
    consistency sentinel.  The aggregated remainder bounds the exit mass
    through untracked (truncated) jumps.
    """
    if gen.target_rates is None:
        raise SolverError("generator was not assembled with track-targets policy")
    A = -gen.matrix.toarray()
    B = gen.target_rates.toarray()
    H = _dense_solve_refined(A, B)
    G = _dense_solve_refined(A, np.eye(gen.n))
    H2 = G @ B
    discrepancy = float(np.max(np.abs(H - H2))) if H.size else 0.0
    if discrepancy > 1e-8:
        raise SolverError(
            f"hitting-distribution routes disagree by {discrepancy}: internal error"
        )
    i = gen.window.index(tuple(x))
    untracked = np.maximum(gen.kill - np.asarray(B.sum(axis=1)).ravel(), 0.0)
    aggregate = _dense_solve_refined(A, untracked)
    remainder = _dense_solve_refined(A, gen.defect.copy())
    return {
        "targets": gen.targets,
        "probabilities": H[i],
        "aggregate": float(aggregate[i]),
        "remainder_bound": float(remainder[i]),
        "route_discrepancy": discrepancy,
        "all_rows": H,
        "all_aggregate": aggregate,
    }


def resolvent(
    gen: GeneratorMatrix, lam: float, f: np.ndarray, time_scale: float = 1.0
) -> np.ndarray:
    """u = (lam - time_scale * L)^(-1) f; time_scale D^2 gives the rescaled
    generator's resolvent."""
    if lam <= 0:
        raise ValueError("lam must be positive")
    f = np.asarray(f, dtype=float)
    A = lam * np.eye(gen.n) - time_scale * gen.matrix.toarray()
    return _dense_solve_refined(A, f)


# ---------------------------------------------------------------------------
# Time reversal
# ---------------------------------------------------------------------------


def time_reversal_check(
    model: ConductanceModel,
    window: LatticeWindow,
    C: Sequence[Site],
    t: float,
    x: Site,
    y: Site,
    assembly_tol: float = 1e-12,
    tail_tol: float = 1e-14,
) -> Tuple[float, float]:
    """Both sides of the last-hit / first-hit reversal identity.

    Left side: P^x(Y_t = y, last visit to C in [t/2, t]); right side:
    P^y(Y_t = x, first visit to C by t/2); Y is the window-absorbed chain.
    The two sides are computed from different sources and different killed
    semigroups, so agreement is a genuine cross-check.
    """
    C = [tuple(c) for c in C]
    cset = set(C)
    for c in C:
        if c not in window:
            raise ValueError(f"C site {c} outside window")
    gen_full = build_generator(model, window, tol=assembly_tol)
    ev_full = SparseEvolver(gen_full)

    avoid_sites = tuple(s for s in window.sites if s not in cset)
    sub = LatticeWindow(d=window.d, sites=avoid_sites, descriptor=window.descriptor + " minus C")
    if len(sub):
        gen_avoid = build_generator(model, sub, tol=assembly_tol)
        ev_avoid = SparseEvolver(gen_avoid)

    half = t / 2.0

    def full_row(src, dt):
        v = np.zeros(len(window))
        v[window.index(src)] = 1.0
        out, _ = uniformized_evolve(ev_full, v, dt, tail_tol)
        return out

    def embed(sub_v):
        v = np.zeros(len(window))
        for i, s in enumerate(sub.sites):
            v[window.index(s)] = sub_v[i]
        return v

    def restrict(full_v):
        return np.asarray([full_v[window.index(s)] for s in sub.sites])

    # LHS: start at x, run freely to t/2, then avoid C for the second half.
    u_half = full_row(tuple(x), half)
    p_t_xy = float(uniformized_evolve(ev_full, u_half, half, tail_tol)[0][window.index(tuple(y))])
    if len(sub) and tuple(y) not in cset:
        u_avoid = restrict(u_half)
        u_avoid, _ = uniformized_evolve(ev_avoid, u_avoid, half, tail_tol)
        no_visit = float(embed(u_avoid)[window.index(tuple(y))])
    else:
        no_visit = 0.0
    lhs = p_t_xy - no_visit

    # RHS: start at y, avoid C for the first half, then run freely.
    p_t_yx = float(full_row(tuple(y), t)[window.index(tuple(x))])
    if len(sub) and tuple(y) not in cset:
        v0 = np.zeros(len(sub))
        v0[sub.index(tuple(y))] = 1.0
        v_avoid, _ = uniformized_evolve(ev_avoid, v0, half, tail_tol)
        v_full = embed(v_avoid)
        v_full, _ = uniformized_evolve(ev_full, v_full, half, tail_tol)
        not_hit = float(v_full[window.index(tuple(x))])
    else:
        not_hit = 0.0
    rhs = p_t_yx - not_hit
    return lhs, rhs


# ---------------------------------------------------------------------------
# Weighted Poincare
# ---------------------------------------------------------------------------


def weighted_poincare_ratio(
    D: float, d: int, f, half_width_scale: float = 40.0
) -> float:
    """Ratio of the weighted variance to the weighted gradient energy.

    Weight g_D(l) = c0 D^d prod_i exp(-|l_i| / D), normalized numerically
    over |l_i| <= half_width_scale * D (exponential tail certified small).
    f maps an (m, d) array of S-points l / D to (m,) values; gradients step
    by one underlying lattice unit (1 / D in S coordinates).  Constants
    return 0 by the 0/0 convention.
    """
    L = int(math.ceil(half_width_scale * D))
    axes = [np.arange(-L, L + 1)] * d
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    g = np.exp(-np.abs(grid).sum(axis=1) / D)
    g = g / g.sum()  # c0 absorbed; tail ~ exp(-half_width_scale) per axis
    F = np.asarray(f(grid / D), dtype=float)
    mean = float(np.dot(F, g))
    lhs = D ** (-d) * float(np.dot((F - mean) ** 2, g))
    rhs = 0.0
    for i in range(d):
        shifted = grid.astype(float)
        shifted[:, i] += 1.0
        Fs = np.asarray(f(shifted / D), dtype=float)
        rhs += float(np.dot((Fs - F) ** 2, g))
    rhs *= D ** (2 - d)
    if lhs == 0.0 and rhs == 0.0:
        return 0.0
    return lhs / rhs


def weighted_poincare_check(
    D_values: Sequence[float], d: int, f_samples: Dict[str, object]
) -> List[dict]:
    rows = []
    for name, f in f_samples.items():
        for D in D_values:
            rows.append({"f": name, "D": D, "ratio": weighted_poincare_ratio(D, d, f)})
    return rows

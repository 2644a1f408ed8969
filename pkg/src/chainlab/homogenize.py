"""Homogenized diffusion matrices and the scaling-limit comparison harness.

Lattice points of n^{-1} Z^d are handled in integer coordinates (multiplied
by n) throughout, so membership tests and matrix sums are exact integer
arithmetic; only the final matrix entries are floats.

Two matrix fields are extracted from the conductances at scale n with
range truncation R:

  a-field: long bonds are attributed to the unit segments of an axis-ordered
      staircase path between their endpoints, weighted by n k_j sgn(k_i).
  b-field: plain second-moment field sum_k C(x, x+k) n^2 k_i k_j.

The two coincide for nearest-neighbor and i.i.d.-increment models; for
merely periodic conductances the b-field can oscillate while the a-field is
already constant, which is the phenomenon the diagnostics report.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .models import ConductanceModel, class_representatives
from .lattice import LatticeWindow, RescaledForm, build_generator, dirichlet_energy
from . import solver as _solver
from . import sampler as _sampler


class HomogenizeError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Staircase paths and membership sets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StaircasePath:
    """Axis-ordered segment list from the origin to k (integer coords)."""

    k: Tuple[int, ...]
    segments: Tuple[Tuple[Tuple[int, ...], Tuple[int, ...]], ...]

    @staticmethod
    def to(k: Sequence[int]) -> "StaircasePath":
        k = tuple(int(v) for v in k)
        segs = []
        cur = [0] * len(k)
        for i, ki in enumerate(k):
            start = tuple(cur)
            cur[i] += ki
            segs.append((start, tuple(cur)))
        return StaircasePath(k=k, segments=tuple(segs))

    @property
    def length(self) -> int:
        return sum(abs(v) for v in self.k)


def l_membership(x: Sequence[int], k: Sequence[int], z: Sequence[int], axis: int) -> bool:
    """Whether the axis-`axis` unit segment at z lies on x + P(k).

    All points are integer coordinates of the n^{-1}-lattice (i.e. n times
    the rational points); the test is scale free.  The covering interval on
    the segment axis is half open: z_axis in [min, max).
    """
    x = tuple(int(v) for v in x)
    k = tuple(int(v) for v in k)
    z = tuple(int(v) for v in z)
    d = len(x)
    for l in range(axis):
        if x[l] + k[l] != z[l]:
            return False
    for l in range(axis + 1, d):
        if x[l] != z[l]:
            return False
    lo = min(x[axis], x[axis] + k[axis])
    hi = max(x[axis], x[axis] + k[axis])
    return lo <= z[axis] < hi


def membership_starts(x: Sequence[int], k: Sequence[int], axis: int) -> List[Tuple[int, ...]]:
    """The z with (x, k) in L^axis_z, enumerated directly."""
    x = tuple(int(v) for v in x)
    k = tuple(int(v) for v in k)
    if k[axis] == 0:
        return []
    d = len(x)
    base = [x[l] + k[l] for l in range(axis)] + [0] + [x[l] for l in range(axis + 1, d)]
    lo = min(x[axis], x[axis] + k[axis])
    hi = max(x[axis], x[axis] + k[axis])
    out = []
    for zi in range(lo, hi):
        z = list(base)
        z[axis] = zi
        out.append(tuple(z))
    return out


def path_sum_telescoping(
    g: Callable[[Tuple[int, ...]], float], x: Sequence[int], k: Sequence[int]
) -> Tuple[float, float]:
    """(staircase unit-step sum, direct difference g(x+k) - g(x))."""
    d = len(x)
    total = 0.0
    for i in range(d):
        s = 1 if k[i] > 0 else -1
        for z in membership_starts(x, k, i):
            step = tuple(z[l] + (1 if l == i else 0) for l in range(d))
            total += (g(step) - g(z)) * s
    xk = tuple(int(a + b) for a, b in zip(x, k))
    return total, g(xk) - g(tuple(int(v) for v in x))


# ---------------------------------------------------------------------------
# Effective matrix fields
# ---------------------------------------------------------------------------


def _k_support(model: ConductanceModel, n: int, R: float) -> np.ndarray:
    """Jump offsets K (integer) with 0 < |K| <= n R, from the model tables."""
    cut = n * R
    if model.class_jumps is not None:
        seen = {}
        for key, (offsets, _) in model.class_jumps.items():
            for z in offsets.tolist():
                seen[tuple(z)] = True
        ks = np.asarray(sorted(seen), dtype=np.int64)
    elif model.bounded_range is not None:
        from .models import _ball_grid

        ks = _ball_grid(model.d, int(math.floor(min(model.bounded_range, cut))))
    else:
        raise HomogenizeError("effective fields need tabulated or bounded-range models")
    norms2 = (ks**2).sum(axis=1)
    return ks[(norms2 > 0) & (norms2 <= cut * cut + 1e-9)]


def effective_matrix(
    model: ConductanceModel, n: int, R: float, x: Sequence[float], kind: str
) -> np.ndarray:
    """a- or b-field value at the real point x (snapped to [x]_n)."""
    if kind not in ("a", "b"):
        raise ValueError("kind must be 'a' or 'b'")
    X = tuple(int(math.floor(n * xi)) for xi in x)
    return _effective_matrix_int(model, n, R, X, kind)


def _effective_matrix_int(
    model: ConductanceModel, n: int, R: float, X: Tuple[int, ...], kind: str
) -> np.ndarray:
    d = model.d
    ks = _k_support(model, n, R)
    out = np.zeros((d, d))
    if kind == "b":
        for K in ks.tolist():
            Y = tuple(int(a + b) for a, b in zip(X, K))
            w = model.evaluate(X, Y)
            if w:
                Kv = np.asarray(K, dtype=float)
                out += w * np.outer(Kv, Kv)
        return out
    for K in ks.tolist():
        for i in range(d):
            if K[i] == 0:
                continue
            s = 1.0 if K[i] > 0 else -1.0
            for Y in _a_sources(X, K, i):
                w = model.evaluate(Y, tuple(int(a + b) for a, b in zip(Y, K)))
                if w:
                    for j in range(d):
                        out[i, j] += w * K[j] * s
    return out


def _a_sources(X: Tuple[int, ...], K: Sequence[int], i: int) -> List[Tuple[int, ...]]:
    """The y with (y, K) in L^i_X: the characterization solved for y."""
    d = len(X)
    base = [X[l] - K[l] for l in range(i)] + [0] + list(X[i + 1 :])
    if K[i] > 0:
        lo, hi = X[i] - K[i] + 1, X[i] + 1
    else:
        lo, hi = X[i] + 1, X[i] - K[i] + 1
    out = []
    for yi in range(lo, hi):
        y = list(base)
        y[i] = yi
        out.append(tuple(y))
    return out


@dataclass
class MatrixField:
    """Field of d x d matrices on n^{-1} Z^d, constant on half-open cells."""

    model: ConductanceModel
    n: int
    R: float
    kind: str
    _cache: Dict[Tuple[int, ...], np.ndarray] = field(default_factory=dict)

    def at(self, x: Sequence[float]) -> np.ndarray:
        X = tuple(int(math.floor(self.n * xi)) for xi in x)
        key = X
        if self.model.class_of is not None and self.model.period is not None:
            key = self.model.class_of(X)
        if key not in self._cache:
            self._cache[key] = _effective_matrix_int(self.model, self.n, self.R, X, self.kind)
        return self._cache[key]

    def sample_csv(self, points: Sequence[Sequence[float]]) -> str:
        lines = ["x" + ",x".join(str(i + 1) for i in range(self.model.d)) + ",i,j,value,n,R,kind"]
        for p in points:
            m = self.at(p)
            for i in range(self.model.d):
                for j in range(self.model.d):
                    coords = ",".join(f"{c:.17g}" for c in p)
                    lines.append(
                        f"{coords},{i+1},{j+1},{m[i,j]:.17g},{self.n},{self.R:.17g},{self.kind}"
                    )
        return "\n".join(lines) + "\n"


def nu_bar(model: ConductanceModel, tol: float = 1e-10) -> float:
    """Mean vertex weight over periodicity classes (classes have equal
    density for diagonal periods)."""
    from .models import vertex_weight

    reps = class_representatives(model)
    return float(np.mean([vertex_weight(model, x, tol)[0] for x in reps]))


# ---------------------------------------------------------------------------
# Restriction and multilinear extension
# ---------------------------------------------------------------------------


@dataclass
class ExtensionGrid:
    """Values g on a box of n^{-1} Z^d with the axiswise-linear extension."""

    n: int
    lo: np.ndarray  # integer corner (d,)
    values: np.ndarray  # shape (m_1, ..., m_d)

    @staticmethod
    def from_function(
        n: int, lo: Sequence[int], hi: Sequence[int], g: Callable[[np.ndarray], np.ndarray]
    ) -> "ExtensionGrid":
        """Restriction R_n: sample g at the grid points lo..hi (integer
        coords, inclusive) of n^{-1} Z^d."""
        lo = np.asarray(lo, dtype=np.int64)
        hi = np.asarray(hi, dtype=np.int64)
        axes = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        pts = mesh.reshape(-1, len(axes)) / float(n)
        vals = np.asarray(g(pts), dtype=float).reshape(mesh.shape[:-1])
        return ExtensionGrid(n=n, lo=lo, values=vals)

    @property
    def d(self) -> int:
        return self.values.ndim

    def vertex(self, X: Sequence[int]) -> float:
        idx = tuple(int(a) - int(b) for a, b in zip(X, self.lo))
        return float(self.values[idx])

    def __call__(self, x: Sequence[float]) -> float:
        """E_n(g) at a real point: multilinear blend on the containing cell."""
        x = np.asarray(x, dtype=float)
        u = self.n * x - self.lo
        top = np.asarray(self.values.shape) - 1
        if np.any(u < -1e-9) or np.any(u > top + 1e-9):
            raise HomogenizeError(f"point {x} outside the extension grid")
        cell = np.minimum(np.floor(u + 1e-12).astype(int), top - 1)
        cell = np.maximum(cell, 0)
        frac = u - cell
        val = 0.0
        for corner in range(1 << self.d):
            w = 1.0
            idx = []
            for l in range(self.d):
                bit = (corner >> l) & 1
                w *= frac[l] if bit else (1.0 - frac[l])
                idx.append(cell[l] + bit)
            val += w * float(self.values[tuple(idx)])
        return val

    def gradient(self, x: Sequence[float], axis: int) -> float:
        """Exact partial derivative of the blend (piecewise multilinear)."""
        x = np.asarray(x, dtype=float)
        u = self.n * x - self.lo
        top = np.asarray(self.values.shape) - 1
        cell = np.minimum(np.floor(u + 1e-12).astype(int), top - 1)
        cell = np.maximum(cell, 0)
        frac = u - cell
        val = 0.0
        for corner in range(1 << self.d):
            idx = []
            w = 1.0
            for l in range(self.d):
                bit = (corner >> l) & 1
                if l == axis:
                    w *= (1.0 if bit else -1.0) * self.n
                else:
                    w *= frac[l] if bit else (1.0 - frac[l])
                idx.append(cell[l] + bit)
            val += w * float(self.values[tuple(idx)])
        return val

    def restrict_equals(self, g: Callable[[np.ndarray], np.ndarray]) -> float:
        """max |E_n(g)(vertex) - g(vertex)| over the grid (round-trip check)."""
        axes = [np.arange(a, a + s) for a, s in zip(self.lo, self.values.shape)]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.d)
        pts = mesh / float(self.n)
        vals = np.asarray(g(pts), dtype=float)
        return float(np.abs(vals - self.values.reshape(-1)).max())


_GL_NODES = (0.5 - 0.5 / math.sqrt(3.0), 0.5 + 0.5 / math.sqrt(3.0))


def cell_gradient_identity(
    grid: ExtensionGrid, cell_corner: Sequence[int], axis: int
) -> Tuple[float, float]:
    """Integral of the blend's axis derivative over one cell, two ways.

    Left: tensor two-point Gauss-Legendre quadrature of the analytic
    gradient (exact for multilinear integrands).  Right: the face-difference
    formula averaging g(z + e_axis / n) - g(z) over the 2^(d-1) vertices of
    the lower face, scaled by (2 n)^-(d-1) ... / n per the cell volume.
    """
    d = grid.d
    n = grid.n
    corner = np.asarray(cell_corner, dtype=np.int64)
    h = 1.0 / n
    lhs = 0.0
    for node in range(2 ** d):
        pt = []
        w = 1.0
        for l in range(d):
            tbit = (node >> l) & 1
            pt.append((corner[l] + _GL_NODES[tbit]) * h)
            w *= 0.5 * h
        lhs += w * grid.gradient(pt, axis)
    rhs = 0.0
    for corner_bits in range(1 << (d - 1)):
        z = list(corner)
        other = [l for l in range(d) if l != axis]
        for pos, l in enumerate(other):
            z[l] += (corner_bits >> pos) & 1
        z_up = list(z)
        z_up[axis] += 1
        rhs += grid.vertex(z_up) - grid.vertex(z)
    rhs /= (2.0 ** (d - 1)) * (float(n) ** (d - 1))
    return lhs, rhs


# ---------------------------------------------------------------------------
# Form-vs-field identity (independent summation orders)
# ---------------------------------------------------------------------------


def form_field_identity(
    model: ConductanceModel, n: int, R: float, x0: Sequence[int], i: int, j: int
) -> Tuple[float, float]:
    """n^(2-d) sum over (y, k) in L^i_{x0} of C k_j sgn(k_i), brute forced
    over candidate pairs, against n^(1-d) a^n_{ij}(x0) from the structured
    enumeration."""
    d = model.d
    X0 = tuple(int(v) for v in x0)
    ks = _k_support(model, n, R)
    lhs = 0.0
    for K in ks.tolist():
        if K[i] == 0:
            continue
        s = 1.0 if K[i] > 0 else -1.0
        # Brute force: scan all y in the bounding box of possible sources.
        spans = []
        for l in range(d):
            c = min(X0[l], X0[l] - K[l]), max(X0[l], X0[l] - K[l])
            spans.append(range(c[0] - 1, c[1] + 2))
        import itertools

        for y in itertools.product(*spans):
            if l_membership(y, K, X0, i):
                w = model.evaluate(y, tuple(a + b for a, b in zip(y, K)))
                lhs += w * (K[j] / n) * s
    lhs *= float(n) ** (2 - d)
    a = _effective_matrix_int(model, n, R, X0, "a")
    rhs = float(n) ** (1 - d) * a[i, j]
    return lhs, rhs


# ---------------------------------------------------------------------------
# Convergence diagnostics for the assumption battery
# ---------------------------------------------------------------------------


def convergence_diagnostics(
    models_by_n: Dict[int, ConductanceModel],
    R: float,
    box_radius: float,
    limit_a: Optional[np.ndarray] = None,
    grid_per_n: int = 64,
) -> dict:
    """Trends of the a- and b-fields over the scale sequence.

    Reports per n: sup and L1 distances to the limit (when given), the
    field's own spatial variation, the a-vs-b divergence, and the shift
    statistic sum_k sup |C^{n,R}(., . + k) - C^{n,R}(., . + k)| across
    periodicity classes.  Verdicts: uniform-convergence 'holds' when the
    a-field variation-plus-distance vanishes (or is exactly 0); the L1
    b-field criterion 'fails' when the b-field oscillation does not decay.
    """
    ns = sorted(models_by_n)
    rows = []
    for n in ns:
        model = models_by_n[n]
        af = MatrixField(model=model, n=n, R=R, kind="a")
        bf = MatrixField(model=model, n=n, R=R, kind="b")
        m = min(grid_per_n, 2 * int(box_radius * n) + 1)
        xs = np.linspace(-box_radius, box_radius, m)
        pts = (
            [(x,) for x in xs]
            if model.d == 1
            else [(x, y) for x in xs for y in xs]
        )
        avals = np.asarray([af.at(p) for p in pts])
        bvals = np.asarray([bf.at(p) for p in pts])
        row = {
            "n": n,
            "a_variation": float(np.abs(avals - avals.mean(axis=0)).max()),
            "b_variation": float(np.abs(bvals - bvals.mean(axis=0)).max()),
            "ab_divergence": float(np.abs(avals - bvals).max()),
            "a_mean": avals.mean(axis=0).tolist(),
            "b_mean": bvals.mean(axis=0).tolist(),
        }
        if limit_a is not None:
            row["a_sup_dist"] = float(np.abs(avals - limit_a).max())
            row["a_l1_dist"] = float(np.abs(avals - limit_a).mean())
            row["b_l1_dist"] = float(np.abs(bvals - limit_a).mean())
        row["shift_statistic"] = _shift_statistic(model, n, R)
        rows.append(row)

    a_var = [r["a_variation"] for r in rows]
    b_var = [r["b_variation"] for r in rows]
    if limit_a is not None:
        a_dist = [r["a_sup_dist"] for r in rows]
        a5 = "holds" if a_dist[-1] <= max(1e-9, 0.6 * a_dist[0]) and a_var[-1] <= max(
            1e-9, 0.6 * a_var[0] + 1e-12
        ) else "fails"
    else:
        a5 = "holds" if a_var[-1] <= 1e-9 else ("holds" if a_var[-1] <= 0.6 * a_var[0] else "fails")
    b_ref = [r["b_l1_dist"] for r in rows] if limit_a is not None else b_var
    a8 = "holds" if b_ref[-1] <= max(1e-9, 0.6 * b_ref[0]) else "fails"
    return {"rows": rows, "A5": a5, "A8": a8}


def _shift_statistic(model: ConductanceModel, n: int, R: float) -> float:
    """sum over k of the worst conductance shift between classes; exactly 0
    for translation-invariant models."""
    if model.class_jumps is None:
        return float("nan")
    tables = {}
    for key in model.classes():
        offsets, weights = model.class_jumps[key]
        tables[key] = {tuple(z): w for z, w in zip(offsets.tolist(), weights.tolist())}
    ks = _k_support(model, n, R)
    total = 0.0
    keys = list(tables)
    for K in map(tuple, ks.tolist()):
        worst = 0.0
        for k1 in keys:
            for k2 in keys:
                worst = max(worst, abs(tables[k1].get(K, 0.0) - tables[k2].get(K, 0.0)))
        total += worst
    return total


def moment_check(
    model: ConductanceModel, D_values: Sequence[float], box_radius: float
) -> List[dict]:
    """Low moments of the rescaled vertex-weight measure against the flat
    candidate limit (mean weight times Lebesgue) on a box."""
    from .models import vertex_weight

    rho = nu_bar(model)
    d = model.d
    rows = []
    for D in D_values:
        span = int(math.floor(box_radius * D))
        xs = np.arange(-span, span + 1)
        if d == 1:
            sites = xs.reshape(-1, 1)
        else:
            sites = np.stack(np.meshgrid(*([xs] * d), indexing="ij"), axis=-1).reshape(-1, d)
        nus = np.asarray([vertex_weight(model, tuple(s), 1e-9)[0] for s in sites.tolist()])
        weight = D ** (-d)
        mass = float(nus.sum() * weight)
        m2 = float((nus * ((sites / D) ** 2).sum(axis=1)).sum() * weight)
        vol = (2 * box_radius) ** d
        lim_mass = rho * vol
        lim_m2 = rho * d * vol * box_radius**2 / 3.0
        rows.append(
            {
                "D": D,
                "mass": mass,
                "limit_mass": lim_mass,
                "second_moment": m2,
                "limit_second_moment": lim_m2,
            }
        )
    return rows


# ---------------------------------------------------------------------------
# Energy bridging: discrete R-truncated form vs the a-field form
# ---------------------------------------------------------------------------


def energy_bridge_gap(
    model: ConductanceModel,
    n: int,
    R: float,
    lam: float,
    f: Callable[[np.ndarray], np.ndarray],
    g: Callable[[np.ndarray], np.ndarray],
    box_radius: float,
    assembly_tol: float = 1e-12,
) -> dict:
    """|E^R_n(F_n, R_n g) - E_{a^n}(E_n F_n, g)| at one scale.

    F_n is the lambda-resolvent of the n-rescaled generator applied to
    R_n f; the continuum side integrates grad E_n(F_n) . a^n grad g with
    two-point Gauss-Legendre per cell.  f and g must be supported well
    inside the box so boundary terms are negligible.
    """
    d = model.d
    span = int(math.ceil(box_radius * n))
    ranges = [(-span, span)] * d
    window = LatticeWindow.box(ranges)
    gen = build_generator(model, window, tol=assembly_tol)
    pts = window.site_array / float(n)
    fvec = np.asarray(f(pts), dtype=float)
    # Resolvent of the rescaled process: (lam - n^2 L) F = f.
    F = _solver.resolvent(gen, lam, fvec, time_scale=float(n) ** 2)
    gvec = np.asarray(g(pts), dtype=float)

    form = RescaledForm(D=float(n), half_factor=False, truncation_radius=R)
    discrete = dirichlet_energy(form, model, window, F, gvec, tol=assembly_tol)

    grid = ExtensionGrid(
        n=n,
        lo=np.asarray([-span] * d),
        values=F.reshape(*(2 * span + 1,) * d),
    )
    afield = MatrixField(model=model, n=n, R=R, kind="a")
    continuum = _integrate_field_form(grid, afield, g, span)
    return {
        "n": n,
        "discrete": discrete,
        "continuum": continuum,
        "gap": abs(discrete - continuum),
    }


def _grad_num(g, pts: np.ndarray, d: int, h: float = 1e-6) -> np.ndarray:
    out = np.empty((len(pts), d))
    for l in range(d):
        e = np.zeros(d)
        e[l] = h
        out[:, l] = (np.asarray(g(pts + e)) - np.asarray(g(pts - e))) / (2 * h)
    return out


def _integrate_field_form(grid: ExtensionGrid, afield: MatrixField, g, span: int) -> float:
    """integral of grad H . a^n grad g over the box, cellwise GL-2."""
    n = grid.n
    d = grid.d
    h = 1.0 / n
    total = 0.0
    cells = [range(-span, span)] * d
    import itertools

    for corner in itertools.product(*cells):
        a = afield.at([c / n for c in corner])
        for node in range(2 ** d):
            pt = np.asarray(
                [(corner[l] + _GL_NODES[(node >> l) & 1]) * h for l in range(d)]
            )
            w = (0.5 * h) ** d
            gh = np.asarray([grid.gradient(pt, l) for l in range(d)])
            gg = _grad_num(g, pt.reshape(1, -1), d)[0]
            total += w * float(gh @ a @ gg)
    return total


# ---------------------------------------------------------------------------
# Scaling-limit comparison
# ---------------------------------------------------------------------------


def clt_compare(
    models_by_n: Dict[int, ConductanceModel],
    t: float,
    a_limit: float,
    n_paths: int,
    seed: int,
    include_discrete: bool = True,
    stream: int = 0,
) -> List[dict]:
    """Empirical law of the n-rescaled chains against the flat-limit
    Gaussian with covariance a_limit * t per coordinate.

    Continuous chain: Y at horizon n t, scaled by 1/sqrt(n); target
    variance a_limit * t.  Discrete chain: X at [n t] steps, same scaling;
    its clock runs nu_bar times slower, so the target variance divides by
    the mean vertex weight.
    """
    from scipy import stats

    rows = []
    for idx, (n, model) in enumerate(sorted(models_by_n.items())):
        d = model.d
        ens = _sampler.simulate_endpoints(
            model, "Y", (0,) * d, n * t, n_paths, seed, stream=stream + 2 * idx
        )
        z = ens.summaries["endpoint"] / math.sqrt(n)
        row = {
            "n": n,
            "process": "Z",
            "target_var": a_limit * t,
            "var": [float(z[:, j].var()) for j in range(d)],
            "var_sigma3": [
                3.0 * float(np.sqrt(max(_var_of_var(z[:, j]), 0.0))) for j in range(d)
            ],
            "ks": [
                float(
                    stats.kstest(z[:, j], "norm", args=(0.0, math.sqrt(a_limit * t))).statistic
                )
                for j in range(d)
            ],
            "cov": np.cov(z.T).reshape(d, d).tolist(),
            "ensemble_hash": ens.content_hash(),
        }
        rows.append(row)
        if include_discrete:
            nb = nu_bar(model)
            ensx = _sampler.simulate_endpoints(
                model, "X", (0,) * d, float(int(n * t)), n_paths, seed, stream=stream + 2 * idx + 1
            )
            w = ensx.summaries["endpoint"] / math.sqrt(n)
            tgt = a_limit * t / nb
            rows.append(
                {
                    "n": n,
                    "process": "W",
                    "target_var": tgt,
                    "var": [float(w[:, j].var()) for j in range(d)],
                    "var_sigma3": [
                        3.0 * float(np.sqrt(max(_var_of_var(w[:, j]), 0.0))) for j in range(d)
                    ],
                    "ks": [
                        float(stats.kstest(w[:, j], "norm", args=(0.0, math.sqrt(tgt))).statistic)
                        for j in range(d)
                    ],
                    "ks_lattice": [
                        lattice_corrected_ks(w[:, j], math.sqrt(tgt)) for j in range(d)
                    ],
                    "cov": np.cov(w.T).reshape(d, d).tolist(),
                    "ensemble_hash": ensx.content_hash(),
                }
            )
    return rows


def lattice_corrected_ks(samples: np.ndarray, sigma: float) -> float:
    """KS distance against the Gaussian with a lattice continuity correction.

    Periodic discrete chains live on a sublattice of span h; their plain KS
    against a continuous law has a deterministic half-atom floor.  Comparing
    the empirical CDF at atom + h/2 removes it.
    """
    from scipy import stats

    vals, counts = np.unique(samples, return_counts=True)
    if len(vals) < 2:
        return 1.0
    h = float(np.diff(vals).min())
    fhat = np.cumsum(counts) / len(samples)
    phi = stats.norm.cdf(vals + h / 2.0, scale=sigma)
    return float(np.abs(fhat - phi).max())


def _var_of_var(x: np.ndarray) -> float:
    """Delta-method variance of the sample variance."""
    m = x.mean()
    c = x - m
    n = len(x)
    mu4 = float((c**4).mean())
    s2 = float((c**2).mean())
    return (mu4 - s2 * s2) / n


def aronson_envelope_fit(
    samples: np.ndarray, t: float, n: int, min_count: int = 50
) -> dict:
    """Fit the Gaussian-envelope shape to the empirical one-dimensional law.

    Bins the endpoint frequencies on the 1/sqrt(n) lattice, regresses
    log density against |x|^2 / t, and reports the fitted (prefactor,
    decay) with the residual band; a finite band means the law sits inside
    a two-sided Gaussian envelope with the returned constants.
    """
    step = 1.0 / math.sqrt(n)
    scaled = np.round(samples / step).astype(np.int64)
    vals, counts = np.unique(scaled, return_counts=True)
    keep = counts >= min_count
    vals, counts = vals[keep], counts[keep]
    if len(vals) < 5:
        return {"ok": False}
    density = counts / (len(samples) * step)
    x = vals * step
    u = x * x / t
    logd = np.log(density)
    slope, intercept = np.polyfit(u, logd, 1)
    resid = logd - (intercept + slope * u)
    return {
        "ok": True,
        "prefactor": float(math.exp(intercept)),
        "decay": float(-slope),
        "upper_prefactor": float(math.exp(intercept + resid.max())),
        "lower_prefactor": float(math.exp(intercept + resid.min())),
        "residual_band": float(resid.max() - resid.min()),
    }

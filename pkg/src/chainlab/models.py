"""Conductance families on Z^d and structural-assumption audits.

A conductance model assigns a symmetric nonnegative weight C(x, y) to pairs
of lattice sites.  Jumps may have unbounded range; in that case the model
carries a decreasing envelope phi with C(x, y) <= phi(|x - y|), and every
truncated sum comes with a certified tail bound derived from phi and a
lattice shell-count bound.

Site coordinates are plain tuples of ints throughout the public API.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

Site = Tuple[int, ...]

# Volume of the unit ball, used in the shell-count bound.
_UNIT_BALL_VOLUME = {1: 2.0, 2: math.pi, 3: 4.0 * math.pi / 3.0}

BUILTIN_NAMES = (
    "nearest_neighbor",
    "remark2_periodic",
    "radial_heavy_tail",
    "harnack_counterexample",
    "iid_table",
)


class ModelError(ValueError):
    """Invalid model parameters."""


class EnvelopeTooHeavyError(RuntimeError):
    """The envelope tail cannot be certified below the requested tolerance."""


def shell_count_bound(d: int, i: int) -> float:
    """Upper bound on #{z in Z^d : i < |z| <= i + 1}.

    d = 1 is exact; for d >= 2 the unit cubes centered at shell sites are
    packed into an annulus widened by sqrt(d)/2 on each side.
    """
    if d == 1:
        return 2.0
    v = _UNIT_BALL_VOLUME[d]
    h = math.sqrt(d) / 2.0
    outer = (i + 1 + h) ** d
    inner = max(0.0, i - h) ** d
    return v * (outer - inner)


@dataclass(frozen=True, eq=False)
class ConductanceModel:
    """Symmetric edge-weight function on Z^d with tail control.

    Attributes
    ----------
    d : lattice dimension.
    evaluate : C(x, y) for sites x != y; must be symmetric.
    class_of : maps a site to its periodicity class key.  Translation
        invariant models have the single class ``()``.  ``None`` marks a
        model with no usable periodicity (per-site enumeration only).
    class_jumps : per-class jump table: class key -> (offsets, weights),
        offsets an (m, d) int array, complete out to ``table_radius``.
    enumerate_override : optional fast enumerator for radii beyond the
        table (used by radial families, which vectorize over shells).
    envelope : decreasing phi with C(x, y) <= phi(max(1, floor(|x - y|))).
    envelope_doubling : declared constant c with phi(2i) <= c * phi(i).
    bounded_range : K such that C(x, y) = 0 for |x - y| > K, or None.
    period : componentwise periods of the conductance array, or None when
        the model is not (known to be) periodic.
    """

    d: int
    evaluate: Callable[[Site, Site], float]
    class_of: Optional[Callable[[Site], Tuple[int, ...]]]
    class_jumps: Optional[Dict[Tuple[int, ...], Tuple[np.ndarray, np.ndarray]]]
    envelope: Optional[Callable[[float], float]]
    envelope_doubling: Optional[float]
    table_radius: float
    bounded_range: Optional[float] = None
    period: Optional[Tuple[int, ...]] = None
    name: str = "custom"
    params: dict = field(default_factory=dict)
    enumerate_override: Optional[Callable[[Site, float], Tuple[np.ndarray, np.ndarray]]] = None

    def jumps_from(self, x: Site, radius: float) -> Tuple[np.ndarray, np.ndarray]:
        """All jumps (offsets, weights) from x with weight > 0 and |offset| <= radius."""
        if (
            self.class_jumps is not None
            and self.class_of is not None
            and (radius <= self.table_radius or self.bounded_range is not None)
        ):
            offsets, weights = self.class_jumps[self.class_of(x)]
            if radius >= self.table_radius:
                return offsets, weights
            keep = np.einsum("ij,ij->i", offsets, offsets) <= radius * radius + 1e-9
            return offsets[keep], weights[keep]
        if self.enumerate_override is not None:
            return self.enumerate_override(x, radius)
        return self._enumerate_ball(x, radius)

    def _enumerate_ball(self, x: Site, radius: float) -> Tuple[np.ndarray, np.ndarray]:
        r = int(math.floor(radius + 1e-9))
        offsets: List[Site] = []
        weights: List[float] = []
        for z in _ball_offsets(self.d, r):
            y = tuple(a + b for a, b in zip(x, z))
            w = self.evaluate(x, y)
            if w > 0.0:
                offsets.append(z)
                weights.append(w)
        if not offsets:
            return np.zeros((0, self.d), dtype=np.int64), np.zeros(0)
        return np.asarray(offsets, dtype=np.int64), np.asarray(weights)

    def classes(self) -> List[Tuple[int, ...]]:
        if self.class_jumps is None:
            raise ModelError(f"model {self.name!r} has no periodicity classes")
        return sorted(self.class_jumps.keys())

    @property
    def translation_invariant(self) -> bool:
        return self.class_jumps is not None and list(self.class_jumps) == [()]


def _ball_offsets(d: int, r: int) -> Iterable[Site]:
    """Nonzero integer vectors with Euclidean norm <= r."""
    rng = range(-r, r + 1)
    if d == 1:
        coords: Iterable[Site] = ((z,) for z in rng)
    elif d == 2:
        coords = ((a, b) for a in rng for b in rng)
    elif d == 3:
        coords = ((a, b, c) for a in rng for b in rng for c in rng)
    else:
        raise ModelError(f"dimension {d} not supported")
    r2 = r * r
    for z in coords:
        if any(z) and sum(c * c for c in z) <= r2:
            yield z


def _ball_grid(d: int, r: int) -> np.ndarray:
    """Vectorized version of _ball_offsets: (m, d) int array."""
    axes = [np.arange(-r, r + 1)] * d
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    n2 = np.einsum("ij,ij->i", grid, grid)
    return grid[(n2 > 0) & (n2 <= r * r)]


# ---------------------------------------------------------------------------
# Envelope tail certificates
# ---------------------------------------------------------------------------

_MAX_TAIL_RADIUS = 1_000_000


def _phi_values(phi, idx: np.ndarray) -> np.ndarray:
    try:
        vals = np.asarray(phi(idx), dtype=float)
        if vals.shape == idx.shape:
            return vals
    except (TypeError, ValueError):
        pass
    return np.asarray([phi(int(i)) for i in idx], dtype=float)


def _phi_shell_series(model: ConductanceModel, radius: int, moment: int) -> float:
    """Certified bound on sum over shells i >= radius of
    phi(i) * (i + 1)^moment * shell_count_bound(i).

    Sums dyadic blocks until they decay geometrically (ratio <= 1/2) and the
    last block is relatively negligible; the remainder is then dominated by
    the last block, which is added to the returned value.
    """
    phi = model.envelope
    d = model.d
    total = 0.0
    block_lo = max(int(radius), 1)
    prev_block = math.inf
    while block_lo < _MAX_TAIL_RADIUS:
        block_hi = 2 * block_lo + 16
        idx = np.arange(block_lo, block_hi)
        counts = np.asarray([shell_count_bound(d, int(i)) for i in idx])
        block = float(np.dot(_phi_values(phi, idx) * (idx + 1.0) ** moment, counts))
        total += block
        if block <= 0.5 * prev_block:
            # Observed geometric decay: the remaining blocks are dominated by
            # block * rho / (1 - rho).  Stop once that remainder is a small
            # fraction of the total (the returned value stays an upper bound,
            # just a slightly loose one).
            rho = block / prev_block if prev_block > 0 else 0.0
            remainder = block * rho / (1.0 - rho) if rho > 0 else 0.0
            if remainder <= 0.02 * max(total, 1e-300) or block == 0.0:
                return total + 1.5 * remainder
        prev_block = block
        block_lo = block_hi
    raise EnvelopeTooHeavyError(
        f"envelope tail of model {model.name!r} not summable below radius {_MAX_TAIL_RADIUS}"
    )


def envelope_tail_bound(model: ConductanceModel, radius: int) -> float:
    """Certified bound on sum_{|z| > radius} C(x, x + z), uniform in x."""
    if model.bounded_range is not None and radius >= model.bounded_range:
        return 0.0
    if model.envelope is None:
        raise EnvelopeTooHeavyError(
            f"model {model.name!r} has unbounded range and no envelope"
        )
    return _phi_shell_series(model, radius, moment=0)


def second_moment_tail_bound(model: ConductanceModel, radius: int) -> float:
    """Certified bound on sum_{|z| > radius} |z|^2 C(x, x + z)."""
    if model.bounded_range is not None and radius >= model.bounded_range:
        return 0.0
    if model.envelope is None:
        raise EnvelopeTooHeavyError(
            f"model {model.name!r} has unbounded range and no envelope"
        )
    return _phi_shell_series(model, radius, moment=2)


def truncation_radius(model: ConductanceModel, tol: float) -> int:
    """Minimal integer R with certified dropped-jump weight <= tol."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    if model.bounded_range is not None:
        return int(math.ceil(model.bounded_range))
    lo, hi = 1, 2
    while envelope_tail_bound(model, hi) > tol:
        lo, hi = hi, hi * 2
        if hi > _MAX_TAIL_RADIUS:
            raise EnvelopeTooHeavyError(
                f"no radius below {_MAX_TAIL_RADIUS} certifies tail <= {tol}"
            )
    while lo < hi:
        mid = (lo + hi) // 2
        if envelope_tail_bound(model, mid) <= tol:
            hi = mid
        else:
            lo = mid + 1
    return hi


def vertex_weight(model: ConductanceModel, x: Site, tol: float = 1e-10) -> Tuple[float, float]:
    """Total conductance nu_x at x as (truncated sum, certified tail <= tol)."""
    r = truncation_radius(model, tol)
    _, weights = model.jumps_from(x, r)
    return float(weights.sum()), envelope_tail_bound(model, r)


# ---------------------------------------------------------------------------
# Builtin families
# ---------------------------------------------------------------------------


def _table_model(
    d: int,
    tables: Dict[Tuple[int, ...], Dict[Site, float]],
    period: Optional[Tuple[int, ...]],
    envelope: Optional[Callable[[float], float]],
    envelope_doubling: Optional[float],
    bounded_range: float,
    name: str,
    params: dict,
) -> ConductanceModel:
    """Build a bounded-range model from explicit per-class jump tables."""
    class_jumps: Dict[Tuple[int, ...], Tuple[np.ndarray, np.ndarray]] = {}
    max_norm = 0.0
    for key, table in tables.items():
        items = sorted(table.items())
        offsets = np.asarray([z for z, _ in items], dtype=np.int64)
        weights = np.asarray([w for _, w in items], dtype=float)
        if np.any(weights < 0):
            raise ModelError("negative conductance in jump table")
        class_jumps[key] = (offsets, weights)
        if len(offsets):
            max_norm = max(max_norm, float(np.sqrt((offsets**2).sum(axis=1).max())))

    if period is None:
        def class_of(x: Site) -> Tuple[int, ...]:
            return ()
    else:
        def class_of(x: Site) -> Tuple[int, ...]:
            return tuple(c % p for c, p in zip(x, period))

    def evaluate(x: Site, y: Site) -> float:
        z = tuple(b - a for a, b in zip(x, y))
        table = tables[class_of(x)]
        return table.get(z, 0.0)

    model = ConductanceModel(
        d=d,
        evaluate=evaluate,
        class_of=class_of,
        class_jumps=class_jumps,
        envelope=envelope,
        envelope_doubling=envelope_doubling,
        table_radius=max_norm,
        bounded_range=bounded_range,
        period=period if period is not None else (1,) * d,
        name=name,
        params=params,
    )
    _check_table_symmetry(model)
    return model


def _check_table_symmetry(model: ConductanceModel) -> None:
    origin = (0,) * model.d
    for key in model.classes():
        x = tuple(key) if len(key) == model.d else origin
        offsets, weights = model.class_jumps[key]
        for z, w in zip(offsets, weights):
            y = tuple(int(a + b) for a, b in zip(x, z))
            back = model.evaluate(y, x)
            if not math.isclose(back, float(w), rel_tol=0.0, abs_tol=1e-15):
                raise ModelError(
                    f"asymmetric conductance: C({x},{y})={w} but C({y},{x})={back}"
                )


def nearest_neighbor(d: int, c: float = 1.0) -> ConductanceModel:
    """C(x, y) = c iff |x - y| = 1."""
    if c < 0:
        raise ModelError("c must be nonnegative")
    table: Dict[Site, float] = {}
    for i in range(d):
        for s in (1, -1):
            z = tuple(s if j == i else 0 for j in range(d))
            table[z] = c

    def phi(i: float) -> float:
        return c if i <= 1 else 0.0

    return _table_model(
        d, {(): table}, None, phi, 1.0, 1.0, "nearest_neighbor", {"d": d, "c": c}
    )


def remark2_periodic(r1: float, s1: float, r2: float, s2: float) -> ConductanceModel:
    """d = 1 chain with parity-dependent first- and second-neighbor bonds.

    C(k, k+1) is r1 for odd k and s1 for even k; C(k, k+2) is r2 for odd k
    and s2 for even k.
    """
    if min(r1, s1, r2, s2) < 0:
        raise ModelError("weights must be nonnegative")
    # Backward jumps read the forward weight of the lower endpoint; k-2 and k
    # share parity, so the second-neighbor weight repeats within a class.
    even = {(1,): s1, (-1,): r1, (2,): s2, (-2,): s2}
    odd = {(1,): r1, (-1,): s1, (2,): r2, (-2,): r2}
    top = max(r1, s1, r2, s2)

    def phi(i: float) -> float:
        if i <= 1:
            return top
        if i <= 2:
            return max(r2, s2)
        return 0.0

    return _table_model(
        1,
        {(0,): even, (1,): odd},
        (2,),
        phi,
        1.0,
        2.0,
        "remark2_periodic",
        {"r1": r1, "s1": s1, "r2": r2, "s2": s2},
    )


_RADIAL_TABLE_CAP = {1: 8192, 2: 384, 3: 48}


def radial_heavy_tail(
    d: int, exponent: float, scale: float = 1.0, offset: float = 1.0
) -> ConductanceModel:
    """C(x, y) = scale * (offset + |x - y|)^(-exponent), unbounded range.

    exponent must exceed d + 2 so the second-moment series converges.
    phi(2i)/phi(i) = ((offset + i)/(offset + 2i))^exponent <= 1, so the
    doubling constant is 1.
    """
    if exponent <= d + 2:
        raise ModelError(f"exponent must exceed d + 2 = {d + 2} for summability")
    if scale <= 0 or offset < 0:
        raise ModelError("scale must be positive and offset nonnegative")

    def phi(i: float) -> float:
        return scale * (offset + i) ** (-exponent)

    def class_of(x: Site) -> Tuple[int, ...]:
        return ()

    def evaluate(x: Site, y: Site) -> float:
        r = math.dist(x, y)
        if r == 0.0:
            return 0.0
        return scale * (offset + r) ** (-exponent)

    def enumerate_radial(x: Site, radius: float) -> Tuple[np.ndarray, np.ndarray]:
        grid = _ball_grid(d, int(math.floor(radius + 1e-9)))
        r = np.sqrt(np.einsum("ij,ij->i", grid, grid))
        return grid, scale * (offset + r) ** (-exponent)

    r_table = _RADIAL_TABLE_CAP[d]
    offsets_arr, weights_arr = enumerate_radial((0,) * d, r_table)
    order = np.lexsort(offsets_arr.T[::-1])
    offsets_arr, weights_arr = offsets_arr[order], weights_arr[order]
    return ConductanceModel(
        d=d,
        evaluate=evaluate,
        class_of=class_of,
        class_jumps={(): (offsets_arr, weights_arr)},
        envelope=phi,
        envelope_doubling=1.0,
        table_radius=float(r_table),
        bounded_range=None,
        period=(1,) * d,
        name="radial_heavy_tail",
        params={"d": d, "exponent": exponent, "scale": scale, "offset": offset},
        enumerate_override=enumerate_radial,
    )


def harnack_counterexample(
    d: int, b: Sequence[int], a: Sequence[float]
) -> ConductanceModel:
    """Random-walk jump law: unit jumps plus rare long jumps along axis 1.

    Each of the 2d unit atoms carries (1 - eps)/(2d) and each atom at
    +-b[n] e^1 carries a[n].  eps is the total long-jump mass 2*sum(a),
    which makes the law an exact probability kernel (nu_x = 1).
    """
    b = [int(v) for v in b]
    a = [float(v) for v in a]
    if len(a) != len(b) or not b:
        raise ModelError("b and a must be nonempty sequences of equal length")
    if any(v <= 1 for v in b) or sorted(set(b)) != b:
        raise ModelError("b must be strictly increasing integers > 1")
    if any(v <= 0 for v in a):
        raise ModelError("a must be positive")
    if sum(a) > 1.0 / 32.0 + 1e-15:
        raise ModelError(f"sum(a) = {sum(a)} exceeds 1/32")
    eps = 2.0 * sum(a)
    table: Dict[Site, float] = {}
    for i in range(d):
        for s in (1, -1):
            z = tuple(s if j == i else 0 for j in range(d))
            table[z] = (1.0 - eps) / (2 * d)
    for bn, an in zip(b, a):
        table[(bn,) + (0,) * (d - 1)] = an
        table[(-bn,) + (0,) * (d - 1)] = an

    def phi(i: float) -> float:
        vals = [w for z, w in table.items() if math.sqrt(sum(c * c for c in z)) >= i]
        return max(vals) if vals else 0.0

    return _table_model(
        d,
        {(): table},
        None,
        phi,
        None,
        float(max(b)),
        "harnack_counterexample",
        {"d": d, "b": list(b), "a": list(a), "eps": eps},
    )


def iid_table(
    d: int, offsets: Sequence[Site], weights: Sequence[float]
) -> ConductanceModel:
    """Translation-invariant model C(x, y) = w(y - x) from a symmetric table."""
    table: Dict[Site, float] = {}
    for z, w in zip(offsets, weights):
        z = tuple(int(c) for c in z)
        if len(z) != d:
            raise ModelError(f"offset {z} has wrong dimension")
        if not any(z):
            raise ModelError("table must not contain the zero offset")
        table[z] = float(w)
    for z, w in list(table.items()):
        neg = tuple(-c for c in z)
        if neg not in table or not math.isclose(table[neg], w, abs_tol=1e-15):
            raise ModelError(f"table not symmetric at offset {z}")

    def phi(i: float) -> float:
        vals = [w for z, w in table.items() if math.sqrt(sum(c * c for c in z)) >= i]
        return max(vals) if vals else 0.0

    k = max(math.sqrt(sum(c * c for c in z)) for z in table)
    return _table_model(
        d,
        {(): table},
        None,
        phi,
        None,
        k,
        "iid_table",
        {
            "d": d,
            "offsets": [list(z) for z in sorted(table)],
            "weights": [table[z] for z in sorted(table)],
        },
    )


def with_extra_edges(
    base: ConductanceModel, edges: Dict[Tuple[Site, Site], float]
) -> ConductanceModel:
    """Add sparse symmetric edges on top of a model; loses periodicity."""
    extra: Dict[Site, Dict[Site, float]] = {}
    max_len = 0.0
    for (x, y), w in edges.items():
        if w < 0:
            raise ModelError("extra edge weight must be nonnegative")
        extra.setdefault(x, {})[y] = w
        extra.setdefault(y, {})[x] = w
        max_len = max(max_len, math.dist(x, y))

    def evaluate(x: Site, y: Site) -> float:
        return base.evaluate(x, y) + extra.get(x, {}).get(y, 0.0)

    bounded = None
    if base.bounded_range is not None:
        bounded = max(base.bounded_range, max_len)
    return ConductanceModel(
        d=base.d,
        evaluate=evaluate,
        class_of=None,
        class_jumps=None,
        envelope=None,
        envelope_doubling=None,
        table_radius=0.0,
        bounded_range=bounded,
        period=None,
        name=f"{base.name}+edges",
        params=dict(base.params),
    )


def graded_nearest_neighbor(
    d: int, c_of_x: Callable[[Sequence[float]], float], n: int, c_max: float = 10.0
) -> ConductanceModel:
    """Nearest-neighbor conductances sampled from a smooth profile at scale n.

    C(x, y) = c_of_x(midpoint(x, y) / n) for |x - y| = 1.  Member n of a
    model sequence whose homogenized field tracks 2 c(x) I.
    """

    def evaluate(x: Site, y: Site) -> float:
        if sum((a - b) ** 2 for a, b in zip(x, y)) != 1:
            return 0.0
        mid = [(a + b) / (2.0 * n) for a, b in zip(x, y)]
        v = float(c_of_x(mid))
        if v < 0 or v > c_max:
            raise ModelError(f"profile value {v} outside [0, {c_max}]")
        return v

    def phi(i: float) -> float:
        return c_max if i <= 1 else 0.0

    return ConductanceModel(
        d=d,
        evaluate=evaluate,
        class_of=None,
        class_jumps=None,
        envelope=phi,
        envelope_doubling=1.0,
        table_radius=0.0,
        bounded_range=1.0,
        period=None,
        name="graded_nearest_neighbor",
        params={"d": d, "n": n},
    )


def class_representatives(model: ConductanceModel) -> List[Site]:
    """One site per periodicity class (the origin for invariant models)."""
    if model.class_jumps is None:
        return [(0,) * model.d]
    reps = []
    for key in model.classes():
        reps.append(tuple(key) if len(key) == model.d else (0,) * model.d)
    return reps


def builtin_model(name: str, **params) -> ConductanceModel:
    """Construct a named builtin family; see BUILTIN_NAMES."""
    if name == "nearest_neighbor":
        return nearest_neighbor(**params)
    if name == "remark2_periodic":
        return remark2_periodic(**params)
    if name == "radial_heavy_tail":
        return radial_heavy_tail(**params)
    if name == "harnack_counterexample":
        return harnack_counterexample(**params)
    if name == "iid_table":
        return iid_table(**params)
    raise ModelError(f"unknown builtin {name!r}; choose from {BUILTIN_NAMES}")

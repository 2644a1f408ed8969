"""Monte Carlo engines for the discrete and continuous-time chains.

Paths are generated in fixed-size blocks; block b of a run with (seed,
stream) uses the counter-based generator Philox(key=(seed, stream, b)), so
ensembles are bit-reproducible and independent of block execution order.
All per-block work is vectorized; jump draws go through per-class alias
tables built from the truncated jump law, whose dropped tail mass is the
reported truncation defect.

Process kinds:
  X    discrete-time chain, P(x, y) = C(x, y) / nu_x
  Y    continuous time, holding rate nu_x, same jump law
  Ynu  continuous time, holding rate 1, same jump law
Rescaled processes are time/space changes of these and are handled by the
callers (horizon n t and division by sqrt(n)).
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .models import ConductanceModel, Site, class_representatives, envelope_tail_bound, truncation_radius

BLOCK = 16384

KINDS = ("X", "Y", "Ynu")


class SamplerError(RuntimeError):
    pass


class TruncationDefectError(SamplerError):
    """Jump-law truncation defect above tolerance; pass allow_defect to override."""


# ---------------------------------------------------------------------------
# Alias-method jump tables
# ---------------------------------------------------------------------------


def alias_setup(probs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Walker alias tables (J, q) for a discrete distribution."""
    probs = np.asarray(probs, dtype=float)
    k = len(probs)
    q = probs * k / probs.sum()
    J = np.zeros(k, dtype=np.int64)
    smaller = [i for i in range(k) if q[i] < 1.0]
    larger = [i for i in range(k) if q[i] >= 1.0]
    while smaller and larger:
        small, large = smaller.pop(), larger.pop()
        J[small] = large
        q[large] -= 1.0 - q[small]
        (smaller if q[large] < 1.0 else larger).append(large)
    return J, q


def alias_draw(J: np.ndarray, q: np.ndarray, rng: np.random.Generator, m: int) -> np.ndarray:
    kk = rng.integers(0, len(J), size=m)
    keep = rng.random(m) < q[kk]
    return np.where(keep, kk, J[kk])


@dataclass
class JumpSampler:
    """Per-class O(1) jump sampling with defect accounting."""

    d: int
    class_keys: Tuple[Tuple[int, ...], ...]
    offsets: Tuple[np.ndarray, ...]  # per class, (m, d)
    rates: Tuple[float, ...]  # per class nu (truncated)
    alias: Tuple[Tuple[np.ndarray, np.ndarray], ...]
    defect: float
    period: Optional[Tuple[int, ...]]

    @staticmethod
    def build(
        model: ConductanceModel,
        tol: float = 1e-9,
        allow_defect: bool = False,
        max_radius: Optional[int] = None,
    ) -> "JumpSampler":
        if model.class_jumps is None:
            raise SamplerError(f"model {model.name!r} has no jump tables to sample from")
        r_star = truncation_radius(model, tol)
        if max_radius is not None and max_radius < r_star:
            r_star = max_radius
        defect = envelope_tail_bound(model, r_star)
        if defect > tol and not allow_defect:
            raise TruncationDefectError(f"defect {defect} above tol {tol}")
        keys, offs, rates, alias = [], [], [], []
        for rep in class_representatives(model):
            key = model.class_of(rep)
            offsets, weights = model.jumps_from(rep, r_star)
            positive = weights > 0
            offsets, weights = offsets[positive], weights[positive]
            keys.append(key)
            offs.append(np.ascontiguousarray(offsets))
            rates.append(float(weights.sum()))
            alias.append(alias_setup(weights))
        return JumpSampler(
            d=model.d,
            class_keys=tuple(keys),
            offsets=tuple(offs),
            rates=tuple(rates),
            alias=tuple(alias),
            defect=defect,
            period=model.period,
        )

    @property
    def n_classes(self) -> int:
        return len(self.class_keys)

    def class_index_of(self, pos: np.ndarray) -> np.ndarray:
        """Class index per row of pos; period-1 models are class 0."""
        if self.n_classes == 1:
            return np.zeros(len(pos), dtype=np.int64)
        # Period-2 in the first axis is the only multi-class builtin layout;
        # general periods reduce to mixed-radix keys.
        period = np.asarray(self.period, dtype=np.int64)
        keys = pos % period
        lut = {k: i for i, k in enumerate(self.class_keys)}
        radix = np.cumprod(np.concatenate(([1], period[:-1])))
        code = keys @ radix
        code_lut = np.full(int(period.prod()), -1, dtype=np.int64)
        for k, i in lut.items():
            code_lut[int(np.dot(np.asarray(k), radix))] = i
        return code_lut[code]

    def draw(self, class_idx: np.ndarray, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        """(jumps, rates) for one event per row, given per-row class index."""
        m = len(class_idx)
        jumps = np.empty((m, self.d), dtype=np.int64)
        rates = np.empty(m)
        for ci in range(self.n_classes):
            sel = np.nonzero(class_idx == ci)[0]
            if len(sel) == 0:
                continue
            J, q = self.alias[ci]
            picks = alias_draw(J, q, rng, len(sel))
            jumps[sel] = self.offsets[ci][picks]
            rates[sel] = self.rates[ci]
        return jumps, rates


# ---------------------------------------------------------------------------
# Ensembles
# ---------------------------------------------------------------------------


@dataclass
class PathEnsemble:
    """Summary of a Monte Carlo batch with RNG provenance."""

    model_name: str
    kind: str
    n_paths: int
    horizon: float
    seed: int
    stream: int
    truncation_defect: float
    summaries: Dict[str, np.ndarray] = field(default_factory=dict)
    events: Optional[List[np.ndarray]] = None

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(f"{self.model_name}|{self.kind}|{self.n_paths}|{self.horizon}|{self.seed}|{self.stream}".encode())
        for key in sorted(self.summaries):
            h.update(key.encode())
            h.update(np.ascontiguousarray(self.summaries[key]).tobytes())
        return h.hexdigest()


def _block_rng(seed: int, stream: int, block: int) -> np.random.Generator:
    # Philox takes a 128-bit key: seed in one word, (stream, block) packed
    # in the other.
    key = (seed % 2**64, ((stream % 2**32) << 32) + (block % 2**32))
    return np.random.Generator(np.random.Philox(key=key))


def _blocks(n_paths: int):
    start = 0
    b = 0
    while start < n_paths:
        yield b, min(BLOCK, n_paths - start)
        start += BLOCK
        b += 1


def _check_kind(kind: str):
    if kind not in KINDS:
        raise SamplerError(f"unknown process kind {kind!r}; choose from {KINDS}")


# ---------------------------------------------------------------------------
# Core simulation drivers
# ---------------------------------------------------------------------------


def simulate(
    kind: str,
    model: ConductanceModel,
    start: Site,
    horizon: float,
    n_paths: int,
    seed: int,
    collect: str = "endpoint",
    stream: int = 0,
    tol: float = 1e-9,
    allow_defect: bool = False,
    **kwargs,
) -> PathEnsemble:
    """Simulate independent paths of the chosen process kind.

    collect selects the summary: "endpoint" (positions at the horizon),
    "exit" (first-exit observations; pass radius=...), or "events" (full
    per-path event lists, small ensembles only).
    """
    if collect == "endpoint":
        return simulate_endpoints(
            model, kind, start, horizon, n_paths, seed, stream, tol, allow_defect
        )
    if collect == "exit":
        return simulate_exit(
            model, kind, start, kwargs["radius"], horizon, n_paths, seed, stream,
            tol, allow_defect,
        )
    if collect == "events":
        logs = event_log(model, kind, start, horizon, n_paths, seed, stream, tol)
        js = JumpSampler.build(model, tol=tol, allow_defect=allow_defect)
        ens = PathEnsemble(
            model_name=model.name,
            kind=kind,
            n_paths=n_paths,
            horizon=horizon,
            seed=seed,
            stream=stream,
            truncation_defect=js.defect,
            summaries={"endpoint": np.stack([log[-1, 1:].astype(np.int64) for log in logs])},
            events=logs,
        )
        return ens
    raise SamplerError(f"unknown collect mode {collect!r}")


def event_log_text(ensemble: PathEnsemble) -> str:
    """Line-delimited event log: path_id, time, site coordinates."""
    if ensemble.events is None:
        raise SamplerError("ensemble carries no event lists")
    lines = []
    for pid, log in enumerate(ensemble.events):
        for row in log:
            coords = " ".join(str(int(v)) for v in row[1:])
            lines.append(f"{pid} {row[0]:.17g} {coords}")
    return "\n".join(lines) + "\n"


def simulate_endpoints(
    model: ConductanceModel,
    kind: str,
    start: Site,
    horizon: float,
    n_paths: int,
    seed: int,
    stream: int = 0,
    tol: float = 1e-9,
    allow_defect: bool = False,
) -> PathEnsemble:
    """Positions at the horizon (time for Y/Ynu, steps for X)."""
    _check_kind(kind)
    js = JumpSampler.build(model, tol=tol, allow_defect=allow_defect)
    out = np.empty((n_paths, model.d), dtype=np.int64)
    jump_counts = np.empty(n_paths, dtype=np.int64)
    row = 0
    for b, m in _blocks(n_paths):
        rng = _block_rng(seed, stream, b)
        if kind == "X":
            pos, cnt = _run_discrete(js, start, int(horizon), m, rng)
        elif js.n_classes == 1 and kind in ("Y", "Ynu"):
            rate = js.rates[0] if kind == "Y" else 1.0
            pos, cnt = _run_invariant_continuous(js, start, horizon, m, rng, rate)
        else:
            pos, cnt = _run_continuous_loop(js, start, horizon, m, rng, kind)
        out[row : row + m] = pos
        jump_counts[row : row + m] = cnt
        row += m
    return PathEnsemble(
        model_name=model.name,
        kind=kind,
        n_paths=n_paths,
        horizon=horizon,
        seed=seed,
        stream=stream,
        truncation_defect=js.defect,
        summaries={"endpoint": out, "jump_count": jump_counts},
    )


def _run_discrete(js, start, steps, m, rng):
    pos = np.tile(np.asarray(start, dtype=np.int64), (m, 1))
    if js.n_classes == 1:
        total = steps * m
        if total:
            J, q = js.alias[0]
            picks = alias_draw(J, q, rng, total)
            jumps = js.offsets[0][picks].reshape(steps, m, js.d)
            pos += jumps.sum(axis=0)
        return pos, np.full(m, steps, dtype=np.int64)
    for _ in range(steps):
        ci = js.class_index_of(pos)
        jumps, _ = js.draw(ci, rng)
        pos += jumps
    return pos, np.full(m, steps, dtype=np.int64)


def _segment_sums(values: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Row sums of consecutive segments of the given lengths (exact for
    zero-length segments, unlike reduceat)."""
    pad = np.zeros((1,) + values.shape[1:], dtype=values.dtype)
    csum = np.concatenate([pad, np.cumsum(values, axis=0)])
    ends = np.cumsum(counts)
    return csum[ends] - csum[ends - counts]


def _run_invariant_continuous(js, start, horizon, m, rng, rate):
    """Translation-invariant continuous chain: Poisson number of iid jumps."""
    counts = rng.poisson(rate * horizon, size=m)
    total = int(counts.sum())
    pos = np.tile(np.asarray(start, dtype=np.int64), (m, 1))
    if total:
        J, q = js.alias[0]
        picks = alias_draw(J, q, rng, total)
        pos += _segment_sums(js.offsets[0][picks], counts)
    return pos, counts


def _run_continuous_loop(js, start, horizon, m, rng, kind):
    """General event loop: site-dependent holding rates, frozen at horizon."""
    pos = np.tile(np.asarray(start, dtype=np.int64), (m, 1))
    t = np.zeros(m)
    cnt = np.zeros(m, dtype=np.int64)
    active = np.ones(m, dtype=bool)
    while active.any():
        ci = js.class_index_of(pos[active])
        jumps, rates = js.draw(ci, rng)
        if kind == "Ynu":
            rates = np.ones_like(rates)
        waits = rng.exponential(1.0, size=len(jumps)) / rates
        t_new = t[active] + waits
        jump_ok = t_new <= horizon
        idx = np.nonzero(active)[0]
        adv = idx[jump_ok]
        pos[adv] += jumps[jump_ok]
        t[idx] = np.minimum(t_new, horizon)
        cnt[adv] += 1
        active[idx[~jump_ok]] = False
    return pos, cnt


def simulate_exit(
    model: ConductanceModel,
    kind: str,
    start: Site,
    radius: float,
    horizon: float,
    n_paths: int,
    seed: int,
    stream: int = 0,
    tol: float = 1e-9,
    allow_defect: bool = False,
) -> PathEnsemble:
    """First-exit observations from the ball {|x - start| < radius}.

    Records per path whether the exit happened by the horizon and the
    running maximum displacement (so one run yields the whole sup curve up
    to `radius`).  For X the horizon counts steps.
    """
    _check_kind(kind)
    js = JumpSampler.build(model, tol=tol, allow_defect=allow_defect)
    exited = np.empty(n_paths, dtype=bool)
    max_disp = np.empty(n_paths)
    exit_time = np.empty(n_paths)
    r2 = radius * radius
    row = 0
    start_arr = np.asarray(start, dtype=np.int64)
    for b, m in _blocks(n_paths):
        rng = _block_rng(seed, stream, b)
        pos = np.tile(start_arr, (m, 1))
        t = np.zeros(m)
        md2 = np.zeros(m, dtype=np.int64)
        done = np.zeros(m, dtype=bool)
        texit = np.full(m, np.inf)
        steps = 0
        while not done.all():
            act = np.nonzero(~done)[0]
            ci = js.class_index_of(pos[act])
            jumps, rates = js.draw(ci, rng)
            if kind == "X":
                t_new = t[act] + 1.0
            else:
                if kind == "Ynu":
                    rates = np.ones_like(rates)
                t_new = t[act] + rng.exponential(1.0, size=len(act)) / rates
            in_time = t_new <= horizon
            # Paths whose next event lands past the horizon freeze in place.
            pos_new = pos[act] + jumps
            disp2 = ((pos_new - start_arr) ** 2).sum(axis=1)
            moved = act[in_time]
            pos[moved] = pos_new[in_time]
            t[act] = np.minimum(t_new, horizon)
            md2[moved] = np.maximum(md2[moved], disp2[in_time])
            out_now = in_time & (disp2 >= r2)
            texit[act[out_now]] = t_new[out_now]
            done[act[out_now]] = True
            done[act[~in_time]] = True
            steps += 1
            if steps > 10_000_000:
                raise SamplerError("exit simulation failed to terminate")
        exited[row : row + m] = np.isfinite(texit)
        max_disp[row : row + m] = np.sqrt(md2.astype(float))
        exit_time[row : row + m] = texit
        row += m
    return PathEnsemble(
        model_name=model.name,
        kind=kind,
        n_paths=n_paths,
        horizon=horizon,
        seed=seed,
        stream=stream,
        truncation_defect=js.defect,
        summaries={"exited": exited, "max_disp": max_disp, "exit_time": exit_time},
    )


# ---------------------------------------------------------------------------
# Derived statistics
# ---------------------------------------------------------------------------


def wilson_interval(successes: int, n: int, z: float = 3.0) -> Tuple[float, float]:
    """Wilson score interval at z standard normal units."""
    if n == 0:
        return 0.0, 1.0
    p = successes / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, center - half), min(1.0, center + half)


def exit_statistics(
    model: ConductanceModel,
    kind: str,
    x: Site,
    A: float,
    D: float,
    gamma: float,
    n_paths: int,
    seed: int,
    stream: int = 0,
    tol: float = 1e-9,
    allow_defect: bool = False,
) -> dict:
    """Empirical P^x(tau_{B(x, A D)} < gamma D^2) with a Wilson interval."""
    ens = simulate_exit(
        model, kind, x, A * D, gamma * D * D, n_paths, seed, stream,
        tol=tol, allow_defect=allow_defect,
    )
    k = int(ens.summaries["exited"].sum())
    lo, hi = wilson_interval(k, n_paths)
    return {
        "probability": k / n_paths,
        "ci": (lo, hi),
        "exits": k,
        "n_paths": n_paths,
        "defect": ens.truncation_defect,
        "ensemble_hash": ens.content_hash(),
    }


def fit_exit_gamma(
    model: ConductanceModel,
    kind: str,
    x: Site,
    A: float,
    D: float,
    target: float,
    n_paths: int,
    seed: int,
    tol: float = 1e-9,
    iters: int = 8,
) -> float:
    """Bisect gamma so the empirical exit probability sits near target."""
    lo, hi = 1e-4, 4.0
    for i in range(iters):
        mid = 0.5 * (lo + hi)
        p = exit_statistics(model, kind, x, A, D, mid, n_paths, seed, stream=100 + i, tol=tol)[
            "probability"
        ]
        if p > target:
            hi = mid
        else:
            lo = mid
    return lo


def sup_displacement_curve(
    model: ConductanceModel,
    x: Site,
    t: float,
    lambdas: Sequence[float],
    n_paths: int,
    seed: int,
    stream: int = 0,
    tol: float = 1e-9,
) -> List[dict]:
    """Empirical P^x(sup_{s <= t} |Y_s - x| >= lam sqrt(t)) over the grid."""
    radius = max(lambdas) * math.sqrt(t) + 1.0
    ens = simulate_exit(model, "Y", x, radius, t, n_paths, seed, stream, tol=tol)
    md = ens.summaries["max_disp"]
    rows = []
    for lam in lambdas:
        k = int((md >= lam * math.sqrt(t)).sum())
        lo, hi = wilson_interval(k, n_paths)
        rows.append({"lambda": lam, "probability": k / n_paths, "ci": (lo, hi)})
    return rows


def jump_statistics(
    model: ConductanceModel,
    kind: str,
    start: Site,
    horizon: float,
    n_paths: int,
    seed: int,
    stream: int = 0,
    tol: float = 1e-9,
) -> Dict[Tuple[Tuple[int, ...], Tuple[int, ...]], int]:
    """Counts of jumps keyed by (class of departure site, offset)."""
    _check_kind(kind)
    js = JumpSampler.build(model, tol=tol)
    counts: Dict[Tuple[Tuple[int, ...], Tuple[int, ...]], int] = {}
    for b, m in _blocks(n_paths):
        rng = _block_rng(seed, stream, b)
        pos = np.tile(np.asarray(start, dtype=np.int64), (m, 1))
        t = np.zeros(m)
        active = np.ones(m, dtype=bool)
        step = 0
        while active.any():
            act = np.nonzero(active)[0]
            ci = js.class_index_of(pos[act])
            jumps, rates = js.draw(ci, rng)
            if kind == "X":
                t_new = t[act] + 1.0
            else:
                if kind == "Ynu":
                    rates = np.ones_like(rates)
                t_new = t[act] + rng.exponential(1.0, size=len(act)) / rates
            ok = t_new <= horizon
            for ci_val in np.unique(ci[ok]):
                sel = ok & (ci == ci_val)
                uniq, cnt = np.unique(jumps[sel], axis=0, return_counts=True)
                key_class = js.class_keys[int(ci_val)]
                for z, c in zip(uniq, cnt):
                    k = (key_class, tuple(int(v) for v in z))
                    counts[k] = counts.get(k, 0) + int(c)
            pos[act[ok]] += jumps[ok]
            t[act] = np.minimum(t_new, horizon)
            active[act[~ok]] = False
            step += 1
            if step > 10_000_000:
                raise SamplerError("jump statistics loop failed to terminate")
    return counts


def levy_system_check(
    model: ConductanceModel,
    f: Callable[[np.ndarray, np.ndarray], np.ndarray],
    g: Callable[[np.ndarray], np.ndarray],
    start: Site,
    stop_rule: dict,
    n_paths: int,
    seed: int,
    stream: int = 0,
    tol: float = 1e-9,
) -> dict:
    """Empirical two-sided jump-identity check along shared paths.

    lhs averages sum over jumps of f(from, to); rhs averages the time
    integral of g(position), where g(x) must equal sum_y f(x, y) C(x, y)
    (the caller supplies the closed-form g; both sides then estimate the
    same quantity).  stop_rule: {"kind": "time", "t": T} or
    {"kind": "exit", "radius": r} (exit of the ball around the start, capped
    at "t_cap").  Returns means, the paired difference, and its 3 sigma.
    """
    js = JumpSampler.build(model, tol=tol)
    lhs = np.empty(n_paths)
    rhs = np.empty(n_paths)
    row = 0
    start_arr = np.asarray(start, dtype=np.int64)
    r2 = stop_rule.get("radius", 0.0) ** 2
    t_cap = stop_rule.get("t_cap", stop_rule.get("t", 0.0))
    for b, m in _blocks(n_paths):
        rng = _block_rng(seed, stream, b)
        pos = np.tile(start_arr, (m, 1))
        t = np.zeros(m)
        acc_l = np.zeros(m)
        acc_r = np.zeros(m)
        active = np.ones(m, dtype=bool)
        guard = 0
        while active.any():
            act = np.nonzero(active)[0]
            ci = js.class_index_of(pos[act])
            jumps, rates = js.draw(ci, rng)
            waits = rng.exponential(1.0, size=len(act)) / rates
            t_new = t[act] + waits
            jump_ok = t_new <= t_cap
            # Integral side accrues over the holding interval actually spent.
            spent = np.minimum(t_new, t_cap) - t[act]
            acc_r[act] += spent * g(pos[act])
            new_pos = pos[act] + jumps
            acc_l[act[jump_ok]] += f(pos[act][jump_ok], new_pos[jump_ok])
            pos[act[jump_ok]] = new_pos[jump_ok]
            t[act] = np.minimum(t_new, t_cap)
            active[act[~jump_ok]] = False
            if stop_rule["kind"] == "exit":
                disp2 = ((pos[act] - start_arr) ** 2).sum(axis=1)
                stopped = jump_ok & (disp2 >= r2)
                active[act[stopped]] = False
            guard += 1
            if guard > 10_000_000:
                raise SamplerError("levy loop failed to terminate")
        lhs[row : row + m] = acc_l
        rhs[row : row + m] = acc_r
        row += m
    diff = lhs - rhs
    sigma = float(diff.std(ddof=1) / math.sqrt(n_paths))
    return {
        "lhs": float(lhs.mean()),
        "rhs": float(rhs.mean()),
        "diff": float(diff.mean()),
        "sigma3": 3.0 * sigma,
        "n_paths": n_paths,
    }


def jump_tightness(
    model: ConductanceModel,
    n_values: Sequence[int],
    eta: float,
    t0: float,
    n_paths: int,
    seed: int,
    stream: int = 0,
    tol: float = 1e-10,
) -> List[dict]:
    """Empirical P(some jump of the n-rescaled chain exceeds eta before t0),
    next to the envelope bound n t0 * (weight beyond eta sqrt(n))."""
    rows = []
    js_tol = tol
    for i, n in enumerate(n_values):
        thresh = eta * math.sqrt(n)
        horizon = n * t0
        js = JumpSampler.build(model, tol=js_tol)
        big = np.zeros(0, dtype=bool)
        for b, m in _blocks(n_paths):
            rng = _block_rng(seed, stream + i, b)
            if js.n_classes == 1:
                rate = js.rates[0]
                counts = rng.poisson(rate * horizon, size=m)
                total = int(counts.sum())
                J, q = js.alias[0]
                picks = alias_draw(J, q, rng, total)
                norms2 = (js.offsets[0][picks] ** 2).sum(axis=1)
                flags = (norms2 >= thresh * thresh).astype(np.int64)
                any_big = _segment_sums(flags, counts) > 0
            else:
                raise SamplerError("jump_tightness expects a translation-invariant model")
            big = np.concatenate([big, any_big])
        k = int(big.sum())
        lo, hi = wilson_interval(k, n_paths)
        # Expected-count envelope: exact truncated law beyond the threshold,
        # plus the certified envelope tail beyond the truncation radius.
        r_used = truncation_radius(model, js_tol)
        offsets, weights = model.jumps_from((0,) * model.d, r_used)
        norms2 = (offsets**2).sum(axis=1)
        heavy = float(weights[norms2 >= thresh * thresh].sum())
        heavy += envelope_tail_bound(model, max(int(math.floor(thresh)), r_used))
        envelope = horizon * heavy
        rows.append(
            {
                "n": n,
                "probability": k / n_paths,
                "ci": (lo, hi),
                "envelope": envelope,
            }
        )
    return rows


def doob_transfer_check(
    n: int, t0: float, eta: float, n_paths: int, seed: int, stream: int = 0
) -> dict:
    """Empirical P(sup_{k <= [n t0]} |T_k - k| >= n eta) against the
    second-moment maximal bound 4 [n t0] / (n eta)^2."""
    m_steps = int(n * t0)
    exceed = 0
    for b, m in _blocks(n_paths):
        rng = _block_rng(seed, stream, b)
        waits = rng.exponential(1.0, size=(m, m_steps))
        walk = np.cumsum(waits, axis=1) - np.arange(1, m_steps + 1)
        exceed += int((np.abs(walk).max(axis=1) >= n * eta).sum())
    bound = 4.0 * m_steps / (n * eta) ** 2
    lo, hi = wilson_interval(exceed, n_paths)
    return {
        "probability": exceed / n_paths,
        "ci": (lo, hi),
        "bound": bound,
        "n": n,
        "eta": eta,
    }


def event_log(
    model: ConductanceModel,
    kind: str,
    start: Site,
    horizon: float,
    n_paths: int,
    seed: int,
    stream: int = 0,
    tol: float = 1e-9,
    max_events: int = 1_000_000,
) -> List[np.ndarray]:
    """Full (time, site...) event lists per path; small runs only."""
    _check_kind(kind)
    if n_paths > 4096:
        raise SamplerError("event logs are limited to small ensembles")
    js = JumpSampler.build(model, tol=tol)
    logs: List[List[Tuple[float, Tuple[int, ...]]]] = [[] for _ in range(n_paths)]
    rng = _block_rng(seed, stream, 0)
    for i in range(n_paths):
        pos = np.asarray(start, dtype=np.int64).copy()
        t = 0.0
        log = [(0.0,) + tuple(int(v) for v in pos)]
        while True:
            ci = js.class_index_of(pos.reshape(1, -1))
            jumps, rates = js.draw(ci, rng)
            rate = 1.0 if kind == "Ynu" else float(rates[0])
            dt = 1.0 if kind == "X" else float(rng.exponential(1.0) / rate)
            if t + dt > horizon:
                break
            t += dt
            pos = pos + jumps[0]
            log.append((t,) + tuple(int(v) for v in pos))
            if len(log) > max_events:
                raise SamplerError("event log exceeded max_events")
        logs[i] = np.asarray(log)
    return logs

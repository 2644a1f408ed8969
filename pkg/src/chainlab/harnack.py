"""Harmonic-function experiments: Harnack constants and their failure.

Harmonic extensions on a finite set A need boundary data on all of Z^d in
principle; the compromise for unbounded ranges is explicit data on every
tracked exterior target (exterior sites reachable by enumerated jumps) plus
one aggregated far-field value whose weight is the untracked exit mass.
The enumeration tail certifies the aggregation error.

The headline contrast: models with long-range comparability keep their
measured Harnack constants bounded across radii, while the rare-long-jump
random walk's hitting-probability ratios grow without bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
import scipy.linalg

from .models import ConductanceModel, Site
from .lattice import GeneratorMatrix, LatticeWindow, build_generator
from .sampler import _block_rng, _blocks, JumpSampler, wilson_interval


class HarnackError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Harmonic extension
# ---------------------------------------------------------------------------


def harmonic_solve(
    model: ConductanceModel,
    window: LatticeWindow,
    boundary_data: Dict[Site, float],
    far_field: float = 0.0,
    tol: float = 1e-8,
    target_radius: Optional[int] = None,
) -> dict:
    """Solve for h on the window given exterior data and a far-field value.

    boundary_data assigns values on tracked exterior sites (missing tracked
    targets default to the far-field value).  Returns h, the linear-solve
    residual, and the worst harmonicity defect sum_z h(z) P(x, z) - h(x).
    """
    gen = build_generator(
        model, window, tol=tol, policy="track-targets", target_radius=target_radius
    )
    data = np.asarray(
        [boundary_data.get(w, far_field) for w in gen.targets], dtype=float
    )
    B = gen.target_rates
    untracked = np.maximum(gen.kill - np.asarray(B.sum(axis=1)).ravel(), 0.0)
    rhs = B @ data + untracked * far_field
    A = -gen.matrix.toarray()
    lu, piv = scipy.linalg.lu_factor(A)
    h = scipy.linalg.lu_solve((lu, piv), rhs)
    h += scipy.linalg.lu_solve((lu, piv), rhs - A @ h)
    residual = float(np.abs(A @ h - rhs).max())
    # One-step harmonicity: (interior C h + boundary) / nu - h; gen.matrix
    # already carries -nu on the diagonal.
    one_step = (gen.matrix @ h + rhs) / np.maximum(gen.nu, 1e-300)
    defect = float(np.abs(one_step).max())
    return {
        "h": h,
        "window": window,
        "residual": residual,
        "harmonicity_defect": defect,
        "generator": gen,
        "tail_bound": float(gen.defect.max()),
    }


def hitting_rows(
    gen: GeneratorMatrix, row_idx: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """Hitting probabilities H[rows, targets] and the aggregate column.

    H = (-L)^(-1) B needs only the requested rows; since -L is symmetric,
    those are columns of the inverse, so one solve with |rows| right-hand
    sides followed by a sparse product with B does it.
    """
    if gen.target_rates is None:
        raise HarnackError("generator must track targets")
    A = -gen.matrix.toarray()
    row_idx = np.asarray(row_idx, dtype=int)
    E = np.zeros((gen.n, len(row_idx)))
    E[row_idx, np.arange(len(row_idx))] = 1.0
    lu, piv = scipy.linalg.lu_factor(A)
    X = scipy.linalg.lu_solve((lu, piv), E)
    X += scipy.linalg.lu_solve((lu, piv), E - A @ X)
    B = gen.target_rates
    H = B.T.dot(X).T  # (rows, targets)
    untracked = np.maximum(gen.kill - np.asarray(B.sum(axis=1)).ravel(), 0.0)
    agg = X.T @ untracked
    return H, agg


@dataclass
class HarnackExperiment:
    model: ConductanceModel
    center: Site
    radii: Tuple[float, ...]
    core_fraction: float = 0.5
    tol: float = 2e-4
    target_radius: Optional[int] = None


def harnack_constants(exp: HarnackExperiment) -> List[dict]:
    """Measured sup h(x)/h(y) over the core, per radius.

    The probe family is all exterior point masses (each tracked target w
    gives the harmonic function x -> P^x(Y_tau = w)) plus axis half-space
    indicators; the reported constant is the family supremum.  Columns
    whose core minimum underflows are reported separately, not maximized
    over (they indicate the probe leaving the comparability regime, and for
    zero data the ratio is undefined).
    """
    rows = []
    d = exp.model.d
    for R in exp.radii:
        window = LatticeWindow.ball(exp.center, R)
        gen = build_generator(
            exp.model,
            window,
            tol=exp.tol,
            policy="track-targets",
            target_radius=exp.target_radius,
        )
        core_sites = [
            i
            for i, s in enumerate(window.sites)
            if math.dist(s, exp.center) < exp.core_fraction * R
        ]
        core = np.asarray(core_sites, dtype=int)
        H, agg = hitting_rows(gen, core)
        floor = 1e-300
        col_min = H.min(axis=0)
        col_max = H.max(axis=0)
        usable = col_min > floor
        ratios = col_max[usable] / col_min[usable]
        constant = float(ratios.max()) if ratios.size else float("nan")
        # Half-space indicator mixtures probe correlated data.
        targets = np.asarray(gen.targets, dtype=float)
        for axis in range(d):
            sel = targets[:, axis] > exp.center[axis]
            hvals = H[:, sel].sum(axis=1)
            if hvals.min() > floor:
                constant = max(constant, float(hvals.max() / hvals.min()))
        rows.append(
            {
                "R": R,
                "constant": constant,
                "n_targets": H.shape[1],
                "skipped_columns": int((~usable).sum()),
                "aggregate_max": float(agg.max()),
                "core_size": len(core),
            }
        )
    return rows


def maximum_principle_gap(result: dict, boundary_data: Dict[Site, float], far_field: float) -> float:
    """How far h escapes [min data, max data]; nonpositive when it holds."""
    vals = list(boundary_data.values()) + [far_field]
    h = result["h"]
    return float(max(h.max() - max(vals), min(vals) - h.min()))


# ---------------------------------------------------------------------------
# The failure example: rare long jumps break uniform comparability
# ---------------------------------------------------------------------------


def counterexample_ratio(
    model: ConductanceModel,
    n_index: int,
    n_paths: int,
    seed: int,
    delta: float = 0.5,
    stream: int = 0,
    max_rounds: int = 5_000_000,
    y_override: Optional[Site] = None,
) -> dict:
    """Monte Carlo estimate of h_n(0) / h_n(y_n) for the long-jump walk.

    h_n(x) is the probability of exiting B(0, r_n) exactly at z_n = b_n e^1,
    which requires the single long jump from the origin; hence
    h_n(y) = P^y(T_0 < tau_n) h_n(0) and the ratio is the reciprocal
    hitting probability, estimated by simulation started at y_n of size
    about r_n / 4 along axis 1.  At y = 0 the ratio is 1 identically.
    """
    b = model.params["b"]
    if not (0 <= n_index < len(b)):
        raise HarnackError(f"n_index {n_index} outside the b-sequence")
    bn = b[n_index]
    rn = (1.0 - delta) * bn
    y = y_override
    if y is None:
        y = (max(1, int(round(rn / 4.0))),) + (0,) * (model.d - 1)
    if not any(y):
        return {
            "n_index": n_index, "b_n": bn, "r_n": rn, "y_n": tuple(y),
            "hit_probability": 1.0, "hit_ci": (1.0, 1.0), "ratio": 1.0,
            "ratio_ci": (1.0, 1.0), "n_paths": n_paths,
        }
    hits, exits = _hit_zero_before_exit(model, y, rn, n_paths, seed, stream, max_rounds)
    p = hits / n_paths
    lo, hi = wilson_interval(hits, n_paths)
    return {
        "n_index": n_index,
        "b_n": bn,
        "r_n": rn,
        "y_n": y,
        "hit_probability": p,
        "hit_ci": (lo, hi),
        "ratio": (1.0 / p) if p > 0 else float("inf"),
        "ratio_ci": ((1.0 / hi) if hi > 0 else float("inf"), (1.0 / lo) if lo > 0 else float("inf")),
        "n_paths": n_paths,
    }


def _hit_zero_before_exit(model, start, radius, n_paths, seed, stream, max_rounds):
    js = JumpSampler.build(model, tol=1e-12, allow_defect=True)
    hits = 0
    exits = 0
    r2 = radius * radius
    start_arr = np.asarray(start, dtype=np.int64)
    for b, m in _blocks(n_paths):
        rng = _block_rng(seed, stream, b)
        pos = np.tile(start_arr, (m, 1))
        active = np.ones(m, dtype=bool)
        rounds = 0
        while active.any():
            act = np.nonzero(active)[0]
            ci = js.class_index_of(pos[act])
            jumps, _ = js.draw(ci, rng)
            newpos = pos[act] + jumps
            pos[act] = newpos
            at_zero = ~newpos.any(axis=1)
            dist2 = (newpos**2).sum(axis=1)
            gone = dist2 >= r2
            hits += int((at_zero & ~gone).sum())
            exits += int(gone.sum())
            active[act[at_zero | gone]] = False
            rounds += 1
            if rounds > max_rounds:
                raise HarnackError("hitting simulation failed to terminate")
    return hits, exits

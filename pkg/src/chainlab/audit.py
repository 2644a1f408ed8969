"""Audits of the structural assumptions on finite regions.

Verdicts are ``pass`` / ``fail`` / ``inconclusive``; a fail always carries a
concrete witness.  The long-range comparability audit (A4) is sampling
based: a pass means no violation was found up to the configured radius,
which is recorded in the report.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .lattice import LatticeWindow
from .models import (
    ConductanceModel,
    Site,
    second_moment_tail_bound,
    truncation_radius,
    vertex_weight,
)


@dataclass
class AssumptionCheck:
    assumption: str
    verdict: str  # pass | fail | inconclusive
    constants: Dict[str, float] = field(default_factory=dict)
    witnesses: List[dict] = field(default_factory=list)

    def to_dict(self, region: str) -> dict:
        return {
            "assumption": self.assumption,
            "verdict": self.verdict,
            "constants": self.constants,
            "witnesses": self.witnesses,
            "region": region,
        }


@dataclass
class AssumptionReport:
    region: str
    checks: List[AssumptionCheck]

    def check(self, assumption: str) -> AssumptionCheck:
        for c in self.checks:
            if c.assumption == assumption:
                return c
        raise KeyError(assumption)

    def to_json(self, indent: int = 2) -> str:
        payload = [c.to_dict(self.region) for c in self.checks]
        for entry in payload:
            if entry["verdict"] == "fail" and not entry["witnesses"]:
                raise AssertionError("fail verdict without witness")
        return json.dumps(payload, indent=indent, sort_keys=True)

    @property
    def all_pass(self) -> bool:
        return all(c.verdict == "pass" for c in self.checks)


def audit_assumptions(
    model: ConductanceModel,
    region: LatticeWindow,
    m0_cap: int = 8,
    delta: Optional[float] = None,
    a4_radius: int = 20,
    a4_sample_cap: int = 3_000_000,
    tol: float = 1e-9,
) -> AssumptionReport:
    """Audit (A1)-(A4) and the second-moment bound over a finite region."""
    checks = [
        _audit_a1(model, region, tol),
        _audit_a2(model, region, m0_cap, delta),
        _audit_a3(model, region, tol),
        _audit_second_moment(model, region, tol),
        _audit_a4(model, region, a4_radius, a4_sample_cap),
    ]
    return AssumptionReport(region=region.descriptor, checks=checks)


def _audit_a1(model, region, tol) -> AssumptionCheck:
    nus = [vertex_weight(model, x, tol)[0] for x in region.sites]
    c1, c2 = float(min(nus)), float(max(nus))
    verdict = "pass" if c1 > 0 else "fail"
    witnesses = []
    if verdict == "fail":
        x = region.site(int(np.argmin(nus)))
        witnesses.append({"site": list(x), "nu": c1})
    return AssumptionCheck("A1", verdict, {"c1": c1, "c2": c2}, witnesses)


def _audit_a2(model, region, m0_cap, delta) -> AssumptionCheck:
    """BFS between every unit-neighbor pair through edges of weight >= delta,
    with all path points kept in the closed ball around the start."""
    if delta is None:
        delta = _default_delta(model)
    worst_n = 0
    needed_m0 = 1
    for x in region.sites:
        for axis in range(model.d):
            y = tuple(c + (1 if i == axis else 0) for i, c in enumerate(x))
            if y not in region:
                continue
            found = False
            for m0 in range(needed_m0, m0_cap + 1):
                length = _delta_path_length(model, x, y, m0, delta)
                if length is not None:
                    worst_n = max(worst_n, length)
                    needed_m0 = max(needed_m0, m0)
                    found = True
                    break
            if not found:
                return AssumptionCheck(
                    "A2",
                    "inconclusive",
                    {"M0_cap": float(m0_cap), "delta": delta},
                    [{"pair": [list(x), list(y)], "note": "no delta-path within cap"}],
                )
    return AssumptionCheck(
        "A2", "pass", {"M0": float(needed_m0), "delta": delta, "N": float(worst_n)}, []
    )


def _default_delta(model) -> float:
    origin = (0,) * model.d
    offsets, weights = model.jumps_from(origin, 2.0)
    positive = weights[weights > 0]
    return 0.5 * float(positive.min()) if len(positive) else 1e-12


def _delta_path_length(model, x, y, m0, delta) -> Optional[int]:
    """Vertex count of a shortest path x -> y using edges >= delta inside the
    closed ball of radius m0 around x, or None."""
    if math.dist(x, y) > m0:
        return None
    seen = {x: 1}
    queue = deque([x])
    while queue:
        cur = queue.popleft()
        n_cur = seen[cur]
        offsets, weights = model.jumps_from(cur, 2 * m0)
        for z, w in zip(offsets, weights):
            if w < delta:
                continue
            nxt = tuple(int(a + b) for a, b in zip(cur, z))
            if nxt in seen or math.dist(x, nxt) > m0:
                continue
            if nxt == y:
                return n_cur + 1
            seen[nxt] = n_cur + 1
            queue.append(nxt)
    return None


def _audit_a3(model, region, tol) -> AssumptionCheck:
    """Envelope domination, numerical summability, and doubling."""
    if model.envelope is None:
        return AssumptionCheck(
            "A3", "inconclusive", {}, [{"note": "model declares no envelope"}]
        )
    phi = model.envelope
    r_star = truncation_radius(model, tol)
    witnesses = []
    for x in region.sites:
        offsets, weights = model.jumps_from(x, r_star)
        if len(offsets) == 0:
            continue
        dist = np.sqrt(np.einsum("ij,ij->i", offsets, offsets))
        bound = np.asarray([phi(max(1, int(math.floor(r)))) for r in dist])
        bad = weights > bound + 1e-15
        if bad.any():
            j = int(np.argmax(weights - bound))
            witnesses.append(
                {
                    "site": list(x),
                    "offset": [int(v) for v in offsets[j]],
                    "C": float(weights[j]),
                    "phi": float(bound[j]),
                }
            )
            break
    # Summability of i^(d+1) phi(i): dyadic blocks must decay geometrically
    # and leave a relatively small certified remainder.
    total, block, i, lo = 0.0, math.inf, 1, 1
    converged = False
    while i < 1_000_000:
        hi = 2 * lo + 16
        b = sum(phi(j) * j ** (model.d + 1) for j in range(i, hi))
        i, lo = hi, hi
        prev, block = block, b
        total += b
        if b <= 0.5 * prev:
            rho = b / prev if prev > 0 else 0.0
            if b == 0.0 or b * rho / (1.0 - rho) <= 0.02 * max(total, 1e-300):
                converged = True
                break
    doubling = 0.0
    for j in range(1, 65):
        if phi(j) > 0:
            doubling = max(doubling, phi(2 * j) / phi(j))
    verdict = "fail" if witnesses else ("pass" if converged else "inconclusive")
    return AssumptionCheck(
        "A3",
        verdict,
        {"series_i_d1_phi": total, "doubling_measured": doubling},
        witnesses,
    )


def _audit_second_moment(model, region, tol) -> AssumptionCheck:
    r_star = truncation_radius(model, tol)
    tail = second_moment_tail_bound(model, r_star)
    worst = 0.0
    for x in region.sites:
        offsets, weights = model.jumps_from(x, r_star)
        if len(offsets) == 0:
            continue
        m2 = float(np.dot(np.einsum("ij,ij->i", offsets, offsets), weights))
        worst = max(worst, m2)
    return AssumptionCheck("fin2mo", "pass", {"C0": worst + tail, "tail": tail}, [])


def _audit_a4(model, region, a4_radius, sample_cap) -> AssumptionCheck:
    """sup over triples (x, y, y') with |y - y'| <= |x - y| / 3 of the ratio
    C(x, y) / C(x, y').  Enumerates jump targets up to a4_radius; a zero
    denominator against a positive numerator is an immediate fail."""
    rng = np.random.default_rng(0)
    sup_ratio = 1.0
    sampled = 0
    sites = list(region.sites)
    if len(sites) > 32:
        sites = [sites[i] for i in rng.choice(len(sites), 32, replace=False)]
    for x in sites:
        offsets, weights = model.jumps_from(x, a4_radius)
        for z, w in zip(offsets, weights):
            if w <= 0.0:
                continue
            r = math.sqrt(sum(int(c) * int(c) for c in z))
            max_shift = r / 3.0
            if max_shift < 1.0:
                continue
            y = tuple(int(a + b) for a, b in zip(x, z))
            for yp in _shift_targets(model.d, y, max_shift, rng):
                sampled += 1
                if sampled > sample_cap:
                    return AssumptionCheck(
                        "A4",
                        "inconclusive",
                        {"ratio_up_to_cap": sup_ratio, "audit_radius": float(a4_radius)},
                        [],
                    )
                w2 = model.evaluate(x, yp)
                if w2 <= 0.0:
                    return AssumptionCheck(
                        "A4",
                        "fail",
                        {"audit_radius": float(a4_radius)},
                        [
                            {
                                "x": list(x),
                                "y": list(y),
                                "y_prime": list(yp),
                                "C_xy": float(w),
                                "C_xyprime": 0.0,
                            }
                        ],
                    )
                sup_ratio = max(sup_ratio, w / w2)
    return AssumptionCheck(
        "A4",
        "pass",
        {"comparison_constant": sup_ratio, "audit_radius": float(a4_radius)},
        [],
    )


def _shift_targets(d: int, y: Site, max_shift: float, rng) -> List[Site]:
    """Perturbations y' of y with |y - y'| <= max_shift: all unit shifts plus
    a few random ones out to the allowed radius."""
    out = []
    for axis in range(d):
        for s in (1, -1):
            out.append(tuple(c + (s if i == axis else 0) for i, c in enumerate(y)))
    m = int(max_shift)
    if m >= 2:
        for _ in range(8):
            shift = rng.integers(-m, m + 1, size=d)
            if 0 < float(shift @ shift) <= max_shift * max_shift:
                out.append(tuple(int(c + s) for c, s in zip(y, shift)))
    return out

import math

import numpy as np
import pytest

from chainlab import harnack as HK
from chainlab import solver as SO
from chainlab.lattice import LatticeWindow, build_generator
from chainlab.models import (
    harnack_counterexample,
    iid_table,
    nearest_neighbor,
    radial_heavy_tail,
)

from oracles import gambler_hit_low

NN1 = nearest_neighbor(1, 1.0)
CX = harnack_counterexample(3, [8, 32, 128], [1 / 128, 1 / 512, 1 / 2048])


def test_constant_boundary_data_gives_constant_h():
    w = LatticeWindow.box([(1, 9)])
    res = HK.harmonic_solve(NN1, w, {}, far_field=3.25, tol=1e-12)
    assert np.abs(res["h"] - 3.25).max() <= 1e-12
    assert res["harmonicity_defect"] <= 1e-12


def test_gambler_harmonic_oracle():
    m = 9
    w = LatticeWindow.box([(1, m)])
    res = HK.harmonic_solve(NN1, w, {(m + 1,): 1.0}, far_field=0.0, tol=1e-12)
    for x in range(1, m + 1):
        assert res["h"][w.index((x,))] == pytest.approx(
            1.0 - gambler_hit_low(x, m), abs=1e-12
        )


def test_optional_stopping_consistency_with_hitting_distribution():
    m2 = radial_heavy_tail(2, 5.0)
    w = LatticeWindow.ball((0, 0), 5.0)
    rng = np.random.default_rng(0)
    gen = build_generator(m2, w, tol=1e-6, policy="track-targets")
    data = {t: float(rng.uniform(0.5, 2.0)) for t in gen.targets}
    far = 0.8
    res = HK.harmonic_solve(m2, w, data, far_field=far, tol=1e-6)
    hd = SO.hitting_distribution(gen, (1, 1))
    data_vec = np.asarray([data[t] for t in gen.targets])
    i = w.index((1, 1))
    via_hitting = float(hd["all_rows"][i] @ data_vec) + far * hd["all_aggregate"][i]
    assert abs(res["h"][i] - via_hitting) <= 1e-9


def test_maximum_principle():
    m2 = radial_heavy_tail(2, 5.0)
    w = LatticeWindow.ball((0, 0), 6.0)
    rng = np.random.default_rng(1)
    gen = build_generator(m2, w, tol=1e-6, policy="track-targets")
    data = {t: float(rng.uniform(-1.0, 4.0)) for t in gen.targets}
    res = HK.harmonic_solve(m2, w, data, far_field=1.0, tol=1e-6)
    gap = HK.maximum_principle_gap(res, data, 1.0)
    assert gap <= 1e-10


def test_positivity_on_core_with_nonnegative_data():
    w = LatticeWindow.ball((0, 0), 8.0)
    m2 = nearest_neighbor(2, 1.0)
    some_target = (8, 1)
    res = HK.harmonic_solve(m2, w, {some_target: 1.0}, far_field=0.0, tol=1e-12)
    core = [i for i, s in enumerate(w.sites) if math.dist(s, (0, 0)) < 4.0]
    assert res["h"][core].min() > 0.0


def test_harnack_constants_bounded_and_family_monotone():
    exp = HK.HarnackExperiment(
        model=nearest_neighbor(2, 1.0), center=(0, 0), radii=(8.0, 16.0), tol=1e-10
    )
    rows = HK.harnack_constants(exp)
    for r in rows:
        assert 1.0 <= r["constant"] < 50.0
        assert r["skipped_columns"] == 0
    # The family constant dominates any single member's ratio by definition;
    # cross-check against one explicit point-mass probe.
    w = LatticeWindow.ball((0, 0), 8.0)
    gen = build_generator(nearest_neighbor(2, 1.0), w, tol=1e-10, policy="track-targets")
    core = np.asarray(
        [i for i, s in enumerate(w.sites) if math.dist(s, (0, 0)) < 4.0], dtype=int
    )
    H, _ = HK.hitting_rows(gen, core)
    single = H[:, 0]
    assert rows[0]["constant"] >= single.max() / single.min() - 1e-12


def test_counterexample_ratio_trivial_origin():
    res = HK.counterexample_ratio(CX, 0, 100, seed=3, y_override=(0, 0, 0))
    assert res["ratio"] == 1.0
    assert res["hit_probability"] == 1.0


def test_counterexample_ratio_grows():
    r0 = HK.counterexample_ratio(CX, 0, 30_000, seed=4)
    r1 = HK.counterexample_ratio(CX, 1, 30_000, seed=5)
    assert r1["ratio_ci"][0] > 2.0 * r0["ratio_ci"][1]
    assert r0["hit_probability"] > r1["hit_probability"]


def test_counterexample_index_validation():
    with pytest.raises(HK.HarnackError):
        HK.counterexample_ratio(CX, 7, 100, seed=6)


def test_bounded_range_regime_constants():
    # Bounded-range chain probed at radii >= 8 K (heuristic regime).
    m = iid_table(2, [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (-1, -1)],
                  [1.0, 1.0, 1.0, 1.0, 0.5, 0.5])
    k = m.bounded_range
    exp = HK.HarnackExperiment(model=m, center=(0, 0), radii=(8.0 * k + 4.0,), tol=1e-10)
    rows = HK.harnack_constants(exp)
    assert rows[0]["constant"] >= 1.0
    assert math.isfinite(rows[0]["constant"])

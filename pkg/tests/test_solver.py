import math

import numpy as np
import pytest
import scipy.linalg

from chainlab import solver as SO
from chainlab.lattice import LatticeWindow, RescaledForm, build_generator, dirichlet_energy
from chainlab.models import (
    iid_table,
    nearest_neighbor,
    radial_heavy_tail,
    remark2_periodic,
    with_extra_edges,
)

from oracles import bessel_kernel, dense_expm_kernel, gambler_hit_low

NN1 = nearest_neighbor(1, 1.0)
HT1 = radial_heavy_tail(1, 5.0, offset=0.0)


# ---------------------------------------------------------------------------
# Heat kernels
# ---------------------------------------------------------------------------


def test_kernel_matches_bessel_series():
    w = SO.window_for_time(NN1, 16.0, leakage_tol=1e-12)
    table = SO.heat_kernel(
        SO.make_evolver(NN1, w, tol=1e-14), [0.5, 1.0, 4.0, 16.0], [(0,)], tail_tol=1e-14
    )
    for t in (0.5, 1.0, 4.0, 16.0):
        assert abs(table.p(t, (0,), (0,)) - bessel_kernel(t, 0)) <= 1e-9


def test_kernel_short_time_holding_probability():
    w = LatticeWindow.box([(-2, 2)])
    table = SO.heat_kernel(build_generator(NN1, w, 1e-13), [1e-6], [(0,)])
    p = table.p(1e-6, (0,), (0,))
    assert p <= 1.0
    assert p >= 1.0 - 2.0 * 2.0 * 1e-6  # nu = 2


def test_kernel_symmetry_random_pairs():
    m = remark2_periodic(0.5, 1.5, 2.0, 3.0)
    w = LatticeWindow.box([(-6, 6)])
    gen = build_generator(m, w, 1e-12)
    rng = np.random.default_rng(0)
    pairs = [tuple(rng.integers(-6, 7, size=2)) for _ in range(100)]
    sources = sorted({(int(a),) for a, b in pairs} | {(int(b),) for a, b in pairs})
    table = SO.heat_kernel(gen, [1.5], sources)
    for a, b in pairs:
        assert abs(table.p(1.5, (int(a),), (int(b),)) - table.p(1.5, (int(b),), (int(a),))) <= 1e-10


def test_kernel_chapman_kolmogorov_via_row_inner_product():
    # On an absorbing window p(2t, x, y) = <p(t, x, .), p(t, y, .)> exactly.
    m = HT1
    w = LatticeWindow.box([(-10, 10)])
    gen = build_generator(m, w, 1e-12)
    table = SO.heat_kernel(gen, [1.0, 2.0], [(-2,), (3,)], tail_tol=1e-15)
    lhs = table.p(2.0, (-2,), (3,))
    rhs = float(np.dot(table.row(1.0, (-2,)), table.row(1.0, (3,))))
    assert abs(lhs - rhs) <= 1e-11


def test_kernel_mass_submarkov_and_killed_leq_unkilled():
    w_small = LatticeWindow.ball((0,), 4.0)
    w_big = LatticeWindow.box([(-12, 12)])
    t = 2.0
    small = SO.heat_kernel(build_generator(NN1, w_small, 1e-13), [t], [(0,)])
    big = SO.heat_kernel(build_generator(NN1, w_big, 1e-13), [t], [(0,)])
    assert small.mass(t, (0,)) <= 1.0 + 1e-12
    for s in w_small.sites:
        assert small.p(t, (0,), s) <= big.p(t, (0,), s) + 1e-12


def test_kernel_against_dense_expm():
    m = remark2_periodic(1, 1, 2, 3)
    w = LatticeWindow.box([(-5, 5)])
    gen = build_generator(m, w, 1e-13)
    table = SO.heat_kernel(gen, [0.8], [(0,)], tail_tol=1e-15)
    E = dense_expm_kernel(gen.matrix.toarray(), 0.8)
    np.testing.assert_allclose(table.row(0.8, (0,)), E[w.index((0,))], atol=1e-12)


def test_conv_and_sparse_evolvers_agree():
    m2 = radial_heavy_tail(2, 6.0, scale=4.0)
    w = LatticeWindow.ball((0, 0), 6.2)
    t1 = SO.heat_kernel(SO.SparseEvolver(build_generator(m2, w, 1e-9)), [2.0], [(0, 0)])
    t2 = SO.heat_kernel(SO.ConvolutionEvolver(m2, w, 1e-9), [2.0], [(0, 0)])
    assert np.abs(t1.values - t2.values).max() <= 1e-11


# ---------------------------------------------------------------------------
# Nash profiles
# ---------------------------------------------------------------------------


def test_nash_d1_plateau_bessel_asymptotic():
    rows = SO.nash_check(NN1, [1.0, 4.0, 16.0, 64.0, 100.0], leakage_tol=1e-8,
                         assembly_tol=1e-12)
    plateau = rows[-1]["profile"]
    # Confirm the asymptotic numerically from the series before asserting.
    target = bessel_kernel(400.0, 0) * math.sqrt(400.0)
    assert abs(target - 1.0 / (2.0 * math.sqrt(math.pi))) <= 1e-3
    assert abs(plateau - 1.0 / (2.0 * math.sqrt(math.pi))) <= 0.01 * plateau
    values = [r["profile"] for r in rows]
    assert max(values) <= 0.31  # bounded profile


def test_nash_d2_tensor_factorization():
    t = 25.0
    nn2 = nearest_neighbor(2, 1.0)
    w2 = SO.window_for_time(nn2, t, leakage_tol=1e-9)
    tab2 = SO.heat_kernel(SO.make_evolver(nn2, w2, tol=1e-12), [t], [(0, 0)], tail_tol=1e-14)
    w1 = SO.window_for_time(NN1, t, leakage_tol=1e-10)
    tab1 = SO.heat_kernel(SO.make_evolver(NN1, w1, tol=1e-12), [t], [(0,)], tail_tol=1e-14)
    for a, b in [(0, 0), (1, 2), (3, -4), (5, 5), (-2, 7)]:
        lhs = tab2.p(t, (0, 0), (a, b))
        rhs = tab1.p(t, (0,), (a,)) * tab1.p(t, (0,), (b,))
        assert abs(lhs - rhs) <= 1e-9


def test_nash_heavy_tail_bounded_by_ten_nn_plateaus():
    rows = SO.nash_check(HT1, [1.0, 10.0, 100.0], leakage_tol=1e-6, assembly_tol=1e-8)
    assert max(r["profile"] for r in rows) <= 10.0 / (2.0 * math.sqrt(math.pi))


# ---------------------------------------------------------------------------
# Truncated kernels
# ---------------------------------------------------------------------------


def test_truncation_vacuous_for_bounded_range():
    m = iid_table(1, [(1,), (-1,), (2,), (-2,)], [1.0, 1.0, 0.5, 0.5])
    lam, D = 9.0, 2.0  # cut D sqrt(lam) = 6 > range 2
    wm = SO.truncated_model(m, D * math.sqrt(lam))
    w = LatticeWindow.box([(-20, 20)])
    t1 = SO.heat_kernel(build_generator(m, w, 1e-12), [3.0], [(0,)])
    t2 = SO.heat_kernel(build_generator(wm, w, 1e-12), [3.0], [(0,)])
    np.testing.assert_allclose(t1.values, t2.values, atol=1e-15)


def test_truncated_profile_finite_and_perturbation_slopes():
    rows4 = SO.truncated_kernel_check(HT1, 4.0, 4.0, [0.25, 1.0])
    assert all(math.isfinite(r["profile"]) and r["profile"] > 0 for r in rows4)
    p4 = SO.semigroup_perturbation(HT1, 4.0, 4.0, [0.025, 0.05, 0.1])
    p16 = SO.semigroup_perturbation(HT1, 16.0, 4.0, [0.025, 0.05, 0.1])
    assert p4["relative_residual"] <= 0.10
    assert p16["relative_residual"] <= 0.10
    assert p16["slope"] < p4["slope"]  # c decreasing in lambda


# ---------------------------------------------------------------------------
# Green functions, hitting, exit moments
# ---------------------------------------------------------------------------


def test_green_single_site():
    g = build_generator(remark2_periodic(1, 1, 2, 3), LatticeWindow.box([(0, 0)]), 1e-13)
    assert SO.green_function(g)[0, 0] == pytest.approx(1.0 / 8.0, abs=1e-15)


def test_green_dense_inverse_oracle_and_symmetry():
    m = 5
    g = build_generator(NN1, LatticeWindow.box([(1, m)]), 1e-13)
    G = SO.green_function(g)
    G_oracle = np.linalg.inv(-g.matrix.toarray())
    np.testing.assert_allclose(G, G_oracle, atol=1e-12)
    m2 = radial_heavy_tail(2, 6.0, scale=4.0)
    g2 = build_generator(m2, LatticeWindow.ball((0, 0), 4.2), 1e-10)
    G2 = SO.green_function(g2)
    assert np.abs(G2 - G2.T).max() <= 1e-10


def test_hitting_distribution_gambler_and_long_edge():
    m = 9
    gen = build_generator(NN1, LatticeWindow.box([(1, m)]), 1e-13, policy="track-targets")
    hd = SO.hitting_distribution(gen, (3,))
    probs = dict(zip(hd["targets"], hd["probabilities"]))
    assert abs(probs[(0,)] - gambler_hit_low(3, m)) <= 1e-10
    assert abs(sum(probs.values()) + hd["aggregate"] - 1.0) <= 1e-10
    assert hd["route_discrepancy"] <= 1e-8

    model = with_extra_edges(NN1, {((0,), (10,)): 0.01})
    w = LatticeWindow.box([(-4, 6)])
    gen2 = build_generator(model, w, 1e-13, policy="track-targets")
    hd2 = SO.hitting_distribution(gen2, (2,))
    probs2 = dict(zip(hd2["targets"], hd2["probabilities"]))
    assert probs2[(10,)] > 0.0
    G = SO.green_function(gen2)
    oracle = G[w.index((2,)), w.index((0,))] * 0.01
    assert abs(probs2[(10,)] - oracle) <= 1e-12


def test_exit_time_single_site_and_parabola():
    gen = build_generator(remark2_periodic(1, 1, 2, 3), LatticeWindow.box([(0, 0)]), 1e-13)
    assert SO.exit_time_moments(gen)[0] == pytest.approx(1.0 / 8.0, abs=1e-15)
    gen5 = build_generator(NN1, LatticeWindow.ball((0,), 5.0), 1e-13)
    u = SO.exit_time_moments(gen5)
    # discrete solve oracle: u(x) = (r^2 - x^2) / 2 for the unit-rate walk
    for x in range(-4, 5):
        assert u[gen5.window.index((x,))] == pytest.approx((25 - x * x) / 2.0, abs=1e-10)


def test_exit_time_scaling_band_heavy_tail():
    values = {}
    for r in (4, 8, 16):
        gen = build_generator(HT1, LatticeWindow.ball((0,), float(r)), 1e-10)
        values[r] = SO.exit_time_moments(gen)[gen.window.index((0,))]
    assert 2.0 <= values[8] / values[4] <= 8.0
    assert 2.0 <= values[16] / values[8] <= 8.0


# ---------------------------------------------------------------------------
# Time reversal
# ---------------------------------------------------------------------------


def test_reversal_trivial_cases():
    w = LatticeWindow.box([(-5, 5)])
    lhs, rhs = SO.time_reversal_check(NN1, w, [], 2.0, (-1,), (1,))
    assert abs(lhs) <= 1e-12 and abs(rhs) <= 1e-12
    lhs, rhs = SO.time_reversal_check(NN1, w, list(w.sites), 2.0, (-1,), (1,))
    table = SO.heat_kernel(build_generator(NN1, w, 1e-13), [2.0], [(-1,)])
    assert lhs == pytest.approx(table.p(2.0, (-1,), (1,)), abs=1e-11)
    assert rhs == pytest.approx(lhs, abs=1e-11)


def test_reversal_identity_d1_and_heavy():
    w = LatticeWindow.box([(-5, 5)])
    lhs, rhs = SO.time_reversal_check(NN1, w, [(2,)], 2.0, (-1,), (1,))
    assert abs(lhs - rhs) <= 1e-9
    assert lhs > 0.0
    lhs, rhs = SO.time_reversal_check(HT1, w, [(2,), (-3,)], 1.5, (-1,), (1,))
    assert abs(lhs - rhs) <= 1e-9


# ---------------------------------------------------------------------------
# Near-diagonal lower bounds
# ---------------------------------------------------------------------------


def test_lower_bound_positive_and_bessel_oracle():
    rows = SO.lower_bound_check(NN1, [16.0], kill_factor=8.0)
    assert rows[0]["free"] > 0 and rows[0]["killed"] > 0
    # independent check of one entry: min over |m| <= 8 at t = 16 is at m = 8
    oracle = bessel_kernel(16.0, 8) * 4.0
    assert rows[0]["free"] <= oracle + 1e-9
    assert rows[0]["free"] >= oracle * 0.99


def test_lower_bound_killing_gap_shrinks_with_radius():
    t = 9.0
    gaps = {}
    for factor in (4.0, 8.0):
        rows = SO.lower_bound_check(NN1, [t], kill_factor=factor)
        gaps[factor] = rows[0]["free"] - rows[0]["killed"]
    assert gaps[8.0] <= gaps[4.0]
    assert gaps[8.0] >= -1e-12


def test_lower_bound_profile_symmetry():
    w = SO.window_for_time(NN1, 9.0, leakage_tol=1e-9)
    table = SO.heat_kernel(SO.make_evolver(NN1, w, tol=1e-12), [9.0], [(0,)])
    for mte in range(1, 7):
        assert table.p(9.0, (0,), (mte,)) == pytest.approx(
            table.p(9.0, (0,), (-mte,)), abs=1e-12
        )


# ---------------------------------------------------------------------------
# Oscillation decay (Holder diagnostic)
# ---------------------------------------------------------------------------


def test_holder_degenerate_flag():
    res = SO.holder_modulus(NN1, 1.0, 4000.0, radii=(0.5, 1.0))
    assert res["degenerate"] or res["beta"] >= 0.0


def test_holder_d1_smooth_fit():
    res = SO.holder_modulus(NN1, 1.0, 4.0, radii=(1.0, 2.0, 4.0, 8.0))
    assert not res["degenerate"]
    assert 0.0 < res["beta"] <= 1.5


def test_holder_stability_across_scales():
    # First-run freeze: beta grows toward the smooth-limit slope ~1 as D
    # resolves the probe radii; positivity holds at every scale, and the
    # 50%-stability window opens once the lattice resolves the smallest
    # ball (D >= 2 for unit radii).
    m2 = radial_heavy_tail(2, 6.0, scale=4.0)
    betas = {}
    for D in (1.0, 2.0, 4.0):
        res = SO.holder_modulus(m2, D, 4.0, radii=(1.0, 2.0, 4.0), leakage_tol=1e-5)
        assert not res["degenerate"]
        assert res["beta"] > 0.0
        betas[D] = res["beta"]
    assert abs(betas[4.0] - betas[2.0]) <= 0.5 * max(betas[4.0], betas[2.0])


# ---------------------------------------------------------------------------
# Resolvents
# ---------------------------------------------------------------------------


def test_resolvent_constant_unkilled():
    # Periodic wrap has no boundary: emulate with a window plus the kill-free
    # check on interior sites far from the boundary.
    w = LatticeWindow.box([(-30, 30)])
    gen = build_generator(NN1, w, 1e-13)
    f = np.ones(len(w))
    u = SO.resolvent(gen, 2.0, f)
    assert u[w.index((0,))] == pytest.approx(0.5, abs=1e-8)


def test_resolvent_large_lambda_limit():
    w = LatticeWindow.box([(-20, 20)])
    gen = build_generator(NN1, w, 1e-13)
    f = np.asarray([math.sin(s[0] / 20.0) for s in w.sites])
    u = SO.resolvent(gen, 1e4, f)
    assert np.abs(1e4 * u - f).max() <= 1e-3 * np.abs(f).max()


def test_resolvent_identity_with_half_form():
    rng = np.random.default_rng(11)
    m = remark2_periodic(1, 1, 2, 3)
    w = LatticeWindow.box([(-8, 8)])
    gen = build_generator(m, w, 1e-13)
    f = rng.normal(size=len(w))
    g = rng.normal(size=len(w))
    form = RescaledForm(D=1.0, half_factor=True)
    for lam in (0.5, 1.0, 4.0):
        u = SO.resolvent(gen, lam, f)
        lhs = dirichlet_energy(form, m, w, u, g, tol=1e-13)
        rhs = float(np.dot(f, g) - lam * np.dot(u, g))
        assert abs(lhs - rhs) <= 1e-9
        assert np.linalg.norm(u) <= np.linalg.norm(f) / lam + 1e-12


# ---------------------------------------------------------------------------
# Weighted Poincare
# ---------------------------------------------------------------------------


def test_poincare_constant_zero():
    assert SO.weighted_poincare_ratio(2.0, 1, lambda p: np.ones(len(p))) == 0.0


def test_poincare_linear_direct_sum_oracle():
    # d = 1, D = 1, f(l) = l: both sides by direct summation over |l| <= 40.
    ls = np.arange(-40, 41)
    g = np.exp(-np.abs(ls))
    g = g / g.sum()
    mean = float(np.dot(ls, g))
    lhs = float(np.dot((ls - mean) ** 2, g))
    rhs = float(np.dot(np.ones_like(ls), g))  # unit steps squared
    oracle = lhs / rhs
    got = SO.weighted_poincare_ratio(1.0, 1, lambda p: p[:, 0], half_width_scale=40.0)
    assert got == pytest.approx(oracle, rel=1e-10)


def test_poincare_scaling_robustness():
    f = lambda p: np.sin(p[:, 0])
    r1 = SO.weighted_poincare_ratio(1.0, 1, f)
    r2 = SO.weighted_poincare_ratio(2.0, 1, f)
    assert 0.25 <= r2 / r1 <= 4.0

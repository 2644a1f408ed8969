import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chainlab import homogenize as HG
from chainlab.models import (
    graded_nearest_neighbor,
    iid_table,
    nearest_neighbor,
    radial_heavy_tail,
    remark2_periodic,
)

R2 = remark2_periodic(1.0, 1.0, 2.0, 3.0)


# ---------------------------------------------------------------------------
# Membership sets and staircase paths
# ---------------------------------------------------------------------------


def test_membership_interval_example():
    # z = 0, x = -1/n, k = 3/n in integer coordinates: 0 in [-1, 2).
    assert HG.l_membership((-1,), (3,), (0,), 0)
    assert not HG.l_membership((2,), (3,), (0,), 0)  # 0 not in [2, 5)


def test_membership_zero_k_empty():
    assert not HG.l_membership((0,), (0,), (0,), 0)
    assert not HG.l_membership((0, 1), (3, 0), (0, 1), 1)  # axis-2 leg empty


def test_membership_count_bound_exhaustive_d1_d2():
    for d in (1, 2):
        for K in itertools.product(range(-4, 5), repeat=d):
            if not any(K):
                continue
            for i in range(d):
                cnt = sum(
                    1
                    for x in itertools.product(range(-6, 7), repeat=d)
                    if HG.l_membership(x, K, (0,) * d, i)
                )
                assert cnt <= abs(K[i])
                if all(abs(v) <= 2 for v in K):  # no clipping in the x-range
                    assert cnt == abs(K[i])


@settings(max_examples=60, deadline=None)
@given(
    K=st.tuples(*(st.integers(-4, 4) for _ in range(3))),
    i=st.integers(0, 2),
)
def test_membership_count_bound_d3_sampled(K, i):
    if not any(K):
        return
    cnt = sum(
        1
        for x in itertools.product(range(-5, 6), repeat=3)
        if HG.l_membership(x, K, (0, 0, 0), i)
    )
    assert cnt <= abs(K[i])


def test_staircase_path_structure():
    p = HG.StaircasePath.to((2, -3))
    assert p.length == 5
    assert p.segments == (((0, 0), (2, 0)), ((2, 0), (2, -3)))


@settings(max_examples=40, deadline=None)
@given(
    x=st.tuples(st.integers(-4, 4), st.integers(-4, 4)),
    k=st.tuples(st.integers(-4, 4), st.integers(-4, 4)),
)
def test_path_sum_telescoping_property(x, k):
    g = lambda z: math.sin(0.37 * z[0] + 0.11 * z[1]) + 0.05 * (z[0] ** 2 - z[1] ** 2)
    s, diff = HG.path_sum_telescoping(g, x, k)
    assert abs(s - diff) <= 1e-12


# ---------------------------------------------------------------------------
# Effective matrices
# ---------------------------------------------------------------------------


def test_nearest_neighbor_fields_are_2c_identity():
    m = nearest_neighbor(2, 1.5)
    for pt in [(0.0, 0.0), (0.3, 0.7), (-0.26, 0.93)]:
        a = HG.effective_matrix(m, 4, 2.0, pt, "a")
        b = HG.effective_matrix(m, 4, 2.0, pt, "b")
        np.testing.assert_allclose(a, 3.0 * np.eye(2), atol=1e-15)
        np.testing.assert_allclose(b, a, atol=1e-15)


def test_remark2_field_values_exact_integers():
    for k in range(-4, 5):
        a = HG.effective_matrix(R2, 8, 2.0, (k / 8.0,), "a")[0, 0]
        b = HG.effective_matrix(R2, 8, 2.0, (k / 8.0,), "b")[0, 0]
        assert a == 22.0
        assert b == (18.0 if k % 2 else 26.0)


def test_iid_fields_constant_and_equal():
    m = iid_table(1, [(1,), (-1,), (3,), (-3,)], [1.0, 1.0, 0.25, 0.25])
    vals_a = [HG.effective_matrix(m, 8, 4.0, (x,), "a")[0, 0] for x in (-0.7, 0.0, 0.4)]
    vals_b = [HG.effective_matrix(m, 8, 4.0, (x,), "b")[0, 0] for x in (-0.7, 0.0, 0.4)]
    expected = 2.0 * 1.0 + 2.0 * 9.0 * 0.25  # sum w(z) z^2
    assert vals_a == vals_b == [expected] * 3


def test_b_field_psd_heavy_tail():
    m = radial_heavy_tail(2, 6.0, scale=4.0)
    rng = np.random.default_rng(2)
    field = HG.MatrixField(model=m, n=4, R=3.0, kind="b")
    for _ in range(100):
        pt = tuple(rng.uniform(-2, 2, size=2))
        eig = np.linalg.eigvalsh(field.at(pt))
        assert eig.min() >= -1e-12


def test_field_snapping_convention():
    # a^n(x) reads the lower-corner grid point [x]_n.
    field = HG.MatrixField(model=R2, n=8, R=2.0, kind="b")
    assert field.at((0.124,))[0, 0] == 26.0  # floor(8 * 0.124) = 0, even
    assert field.at((0.126,))[0, 0] == 18.0  # floor = 1, odd
    assert field.at((-0.001,))[0, 0] == 18.0  # floor = -1, odd


def test_form_field_identity_brute_force():
    for x0 in ((0,), (3,), (-2,)):
        lhs, rhs = HG.form_field_identity(R2, 8, 2.0, x0, 0, 0)
        assert abs(lhs - rhs) <= 1e-12
    m2 = nearest_neighbor(2, 1.5)
    for i in range(2):
        for j in range(2):
            lhs, rhs = HG.form_field_identity(m2, 4, 2.0, (1, -1), i, j)
            assert abs(lhs - rhs) <= 1e-12


# ---------------------------------------------------------------------------
# Extension / restriction
# ---------------------------------------------------------------------------


def test_extension_center_average_d2():
    grid = HG.ExtensionGrid(n=1, lo=np.array([0, 0]), values=np.array([[1.0, 2.0], [3.0, 4.0]]))
    assert grid((0.5, 0.5)) == pytest.approx(2.5)
    # paper-style corner weights at (s, t) = (0.25, 0.75)
    want = 1 * 0.75 * 0.25 + 2 * 0.75 * 0.75 + 3 * 0.25 * 0.25 + 4 * 0.25 * 0.75
    assert grid((0.25, 0.75)) == pytest.approx(want)


def test_extension_reproduces_linear():
    lin = lambda p: 1.7 * p[:, 0] - 0.4 * p[:, 1]
    grid = HG.ExtensionGrid.from_function(2, (-2, -2), (2, 2), lin)
    rng = np.random.default_rng(3)
    for _ in range(50):
        pt = rng.uniform(-1, 1, size=2)
        assert grid(pt) == pytest.approx(1.7 * pt[0] - 0.4 * pt[1], abs=1e-12)


def test_restriction_extension_round_trip():
    rng = np.random.default_rng(4)
    for _ in range(1000):
        n = int(rng.integers(1, 5))
        vals = rng.normal(size=(3, 3))
        grid = HG.ExtensionGrid(n=n, lo=np.array([0, 0]), values=vals)
        i, j = rng.integers(0, 3, size=2)
        assert grid((i / n, j / n)) == pytest.approx(vals[i, j], abs=1e-12)


def test_extension_outside_support_raises():
    grid = HG.ExtensionGrid(n=1, lo=np.array([0]), values=np.array([1.0, 2.0]))
    with pytest.raises(HG.HomogenizeError):
        grid((2.5,))


# ---------------------------------------------------------------------------
# Cell gradient identity
# ---------------------------------------------------------------------------


def test_cell_gradient_constant_and_linear():
    const = HG.ExtensionGrid(n=2, lo=np.array([0, 0]), values=np.full((3, 3), 7.0))
    lhs, rhs = HG.cell_gradient_identity(const, (0, 0), 0)
    assert lhs == pytest.approx(0.0, abs=1e-15) and rhs == 0.0
    lin = HG.ExtensionGrid.from_function(
        2, (0, 0), (3, 3), lambda p: 2.0 * p[:, 0] + 5.0 * p[:, 1]
    )
    for axis, grad in ((0, 2.0), (1, 5.0)):
        lhs, rhs = HG.cell_gradient_identity(lin, (1, 1), axis)
        assert lhs == pytest.approx(grad * 2.0 ** (-2), abs=1e-14)
        assert rhs == pytest.approx(lhs, abs=1e-14)


def test_cell_gradient_random_d2():
    rng = np.random.default_rng(5)
    vals = rng.normal(size=(5, 5))
    grid = HG.ExtensionGrid(n=2, lo=np.array([0, 0]), values=vals)
    for cell in [(0, 0), (1, 2), (3, 3), (2, 1)]:
        for axis in (0, 1):
            lhs, rhs = HG.cell_gradient_identity(grid, cell, axis)
            assert abs(lhs - rhs) <= 1e-12


def test_cell_gradient_random_d3():
    rng = np.random.default_rng(6)
    vals = rng.normal(size=(3, 3, 3))
    grid = HG.ExtensionGrid(n=1, lo=np.zeros(3, dtype=np.int64), values=vals)
    for axis in range(3):
        lhs, rhs = HG.cell_gradient_identity(grid, (1, 0, 1), axis)
        assert abs(lhs - rhs) <= 1e-12


# ---------------------------------------------------------------------------
# Diagnostics and the scaling-limit harness
# ---------------------------------------------------------------------------


def test_diagnostics_remark2_a5_holds_a8_fails():
    diag = HG.convergence_diagnostics(
        {n: R2 for n in (4, 8, 16)}, 2.0, 1.0, limit_a=np.array([[22.0]])
    )
    assert diag["A5"] == "holds"
    assert diag["A8"] == "fails"
    for row in diag["rows"]:
        assert row["a_variation"] == 0.0
        assert row["b_variation"] > 3.0
        assert row["shift_statistic"] == pytest.approx(2.0)  # |r2 - s2| on +-2


def test_diagnostics_iid_constant():
    m = iid_table(1, [(1,), (-1,), (3,), (-3,)], [1.0, 1.0, 0.25, 0.25])
    diag = HG.convergence_diagnostics({n: m for n in (4, 8)}, 4.0, 1.0)
    for row in diag["rows"]:
        assert row["a_variation"] == 0.0
        assert row["ab_divergence"] == 0.0
        assert row["shift_statistic"] == 0.0


def test_diagnostics_graded_profile_tracks_2c():
    c = lambda x: 1.0 + 0.5 * math.sin(x[0])
    models = {n: graded_nearest_neighbor(1, c, n) for n in (4, 8, 16, 32)}
    dists = []
    for n, m in sorted(models.items()):
        field = HG.MatrixField(model=m, n=n, R=2.0, kind="a")
        xs = np.linspace(-1, 1, 41)
        dists.append(
            max(abs(field.at((float(x),))[0, 0] - 2.0 * c((x,))) for x in xs)
        )
    assert dists[-1] < dists[0]
    assert dists[-1] <= 0.2


def test_moment_check_flat_limit():
    rows = HG.moment_check(R2, [4.0, 8.0, 16.0], 1.0)
    devs = [abs(r["mass"] - r["limit_mass"]) / r["limit_mass"] for r in rows]
    assert devs[-1] <= 0.15
    assert devs[-1] <= devs[0] + 1e-12


def test_nu_bar_values():
    assert HG.nu_bar(nearest_neighbor(1, 1.0)) == pytest.approx(2.0)
    assert HG.nu_bar(R2) == pytest.approx(7.0)


def test_energy_bridge_gap_shrinks():
    f = lambda p: np.exp(-4.0 * (p**2).sum(axis=1))
    g = lambda p: np.exp(-6.0 * (p**2).sum(axis=1)) * np.cos(p[:, 0])
    gaps = []
    for n in (8, 16, 32):
        res = HG.energy_bridge_gap(R2, n, 2.0, 1.0, f, g, box_radius=2.0)
        gaps.append(res["gap"])
    assert gaps[2] < gaps[0]
    assert gaps[2] <= 0.6 * gaps[0]


def test_clt_variance_convention_bootstrap():
    rows = HG.clt_compare({64: nearest_neighbor(1, 1.0)}, 1.0, 2.0, 40_000, seed=31,
                          include_discrete=True)
    z = [r for r in rows if r["process"] == "Z"][0]
    assert abs(z["var"][0] - 2.0) <= z["var_sigma3"][0]
    w = [r for r in rows if r["process"] == "W"][0]
    assert w["target_var"] == pytest.approx(1.0)  # a / nu_bar = 2 / 2
    assert abs(w["var"][0] - 1.0) <= w["var_sigma3"][0]


def test_lattice_corrected_ks_removes_parity_floor():
    rng = np.random.default_rng(7)
    steps = rng.choice([-1, 1], size=(20_000, 256)).sum(axis=1) / 16.0
    from scipy import stats

    plain = stats.kstest(steps, "norm", args=(0.0, 1.0)).statistic
    corrected = HG.lattice_corrected_ks(steps, 1.0)
    assert plain > 0.02  # bipartite half-atom floor
    assert corrected < 0.02


def test_aronson_fit_reports_gaussian_shape():
    rng = np.random.default_rng(8)
    n = 256
    samples = rng.normal(scale=math.sqrt(2.0), size=200_000)
    samples = np.round(samples * math.sqrt(n)) / math.sqrt(n)
    fit = HG.aronson_envelope_fit(samples, 1.0, n)
    assert fit["ok"]
    assert fit["decay"] == pytest.approx(0.25, rel=0.1)  # |x|^2/(2 sigma^2), sigma^2=2
    assert fit["residual_band"] <= 0.5

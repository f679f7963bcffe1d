import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bcdiff.oracle import reference_coeff
from bcdiff.schedules import Schedule, linear_beta_sqrt_alphas_cumprod, make_schedule


@pytest.fixture(scope="module")
def vp():
    return make_schedule("VP", 2000)


def test_ot_midpoint_and_endpoint():
    s = make_schedule("OT", 1000)
    assert s.coeff(500) == (0.5, 0.5)
    u, v = s.coeff(0)
    assert (u, v) == (1.0, 0.0)


def test_vp_half_alpha_bar_gives_symmetric_coeffs():
    # a custom table with abar = 0.5 at t = 1
    table = np.sqrt(np.array([1.0, 0.5, 0.25]))
    s = Schedule("VP", 2, sqrt_alphas_cumprod=table)
    u, v = s.coeff(1)
    assert u == pytest.approx(0.70711, abs=1e-5)
    assert v == pytest.approx(0.70711, abs=1e-5)


def test_coeff_out_of_range_raises(vp):
    with pytest.raises(IndexError):
        vp.coeff(-1)
    with pytest.raises(IndexError):
        vp.coeff(2001)


def test_bad_construction():
    with pytest.raises(ValueError):
        make_schedule("cosine", 10)
    with pytest.raises(ValueError):
        make_schedule("OT", 1)
    with pytest.raises(ValueError):
        make_schedule("VE", 10, sigma0=1.0, sigmaT=0.5)
    with pytest.raises(ValueError):
        Schedule("VP", 2, sqrt_alphas_cumprod=np.array([1.0, 0.5, 0.6]))


def test_algebraic_constraints():
    t = np.arange(0, 2001)
    u, v = make_schedule("VP", 2000).coeff(t)
    assert np.max(np.abs(u**2 + v**2 - 1)) < 1e-6
    u, v = make_schedule("OT", 2000).coeff(t)
    assert np.all(u + v == 1.0)
    u, v = make_schedule("VE", 2000).coeff(t)
    assert np.all(u == 1.0)
    assert np.all(np.diff(v) > 0)
    assert v[0] == pytest.approx(0.01) and v[-1] == pytest.approx(50.0)


def test_vp_table_shape_and_monotonicity(vp):
    table = vp.sqrt_alphas_cumprod
    assert table.shape == (2001,)
    assert table[0] == 1.0
    assert np.all(np.diff(table) < 0)
    assert table[-1] < 1e-3


def test_coefficients_match_independent_reference():
    t = np.linspace(0, 1000, 357)
    for kind in ("VP", "VE", "OT"):
        s = make_schedule(kind, 1000)
        np.testing.assert_allclose(s.coeff(t), reference_coeff(kind, 1000, t), rtol=1e-12, atol=1e-15)


def test_time_from_u_ot():
    s = make_schedule("OT", 1000)
    assert s.time_from_u(0.5)[0] == 500
    assert s.time_from_u(1.0)[0] == 0


def test_time_from_u_vp_counting_rule(vp):
    table = vp.sqrt_alphas_cumprod
    rng = np.random.default_rng(0)
    for k in rng.integers(0, 2000, size=50):
        u = 0.5 * (table[k] + table[k + 1])
        t, clamped = vp.time_from_u(u)
        # brute-force scan of the table
        assert t == sum(1 for a in table if a > u) == k + 1
        assert not clamped


def test_time_from_u_clamps_and_flags(vp):
    t, c = vp.time_from_u(np.array([0.0, 1.5]))
    assert list(t) == [2000, 0]
    assert list(c) == [True, True]
    with pytest.raises(ValueError):
        make_schedule("VE", 10).time_from_u(0.5)


def test_time_from_v_ve():
    s = make_schedule("VE", 1000)
    t, c = s.time_from_v(np.array([0.01, 50.0, 1e-5, 1e5]))
    np.testing.assert_allclose(t, [0, 1000, 0, 1000], atol=1e-9)
    assert list(c) == [False, False, True, True]


@given(st.integers(0, 1000))
def test_ot_round_trip_exact(t):
    s = make_schedule("OT", 1000)
    assert s.time_from_u(s.coeff(t)[0])[0] == t


@settings(max_examples=200)
@given(st.integers(0, 2000))
def test_vp_round_trip_within_one_step(t):
    s = make_schedule("VP", 2000)
    assert abs(int(s.time_from_u(s.coeff(t)[0])[0]) - t) <= 1


def test_derivatives():
    ot = make_schedule("OT", 100)
    assert ot.coeff_derivative(30.0) == (-0.01, 0.01)
    ve = make_schedule("VE", 100)
    h = 1e-4
    fd = (ve.coeff(50 + h)[1] - ve.coeff(50 - h)[1]) / (2 * h)
    assert ve.coeff_derivative(50.0)[1] == pytest.approx(fd, rel=1e-6)
    vp = make_schedule("VP", 100)
    du, dv = vp.coeff_derivative(np.array([10.0, 100.0]))
    tab = linear_beta_sqrt_alphas_cumprod(100)
    assert du[0] == tab[11] - tab[10]
    assert du[1] == tab[100] - tab[99]

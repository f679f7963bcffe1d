import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bcdiff.boundary import (
    Q_SENTINEL,
    boundary_coeffs,
    boundary_fraction,
    estimate_boundary,
    psi,
    psi_inverse,
    stopping_time,
)
from bcdiff.discrete_space import EmbeddingTable, bit_table, bits_to_indices, encode_binary, likelihood
from bcdiff.oracle import brute_first_exit
from bcdiff.schedules import make_schedule

PM = EmbeddingTable(np.array([[1.0], [-1.0]]))
X0 = np.array([1.0])


def frac(eps):
    q, j, m = boundary_fraction(X0, np.array([eps]), 0, PM)
    return float(q), int(j), bool(m)


def test_fraction_examples():
    assert frac(-1.0) == (1.0, 1, False)
    assert frac(-2.0) == (0.5, 1, False)
    assert frac(1.0) == (Q_SENTINEL, -1, True)


def test_coeff_examples():
    u, v = boundary_coeffs(1.0, "VP")
    assert u == pytest.approx(0.70711, abs=1e-5) and v == pytest.approx(0.70711, abs=1e-5)
    assert boundary_coeffs(1.0, "OT") == (0.5, 0.5)
    u, v = boundary_coeffs(0.5, "OT")
    assert u == pytest.approx(2 / 3) and v == pytest.approx(1 / 3)
    x = u * 1.0 + v * (-2.0)
    assert likelihood(np.array([x]), 0, PM) == pytest.approx(likelihood(np.array([x]), 1, PM), abs=1e-15)
    u, v = boundary_coeffs(4.0, "VE")
    assert (u, v) == (1.0, 4.0)
    # the VE crossing: x0 + v * eps on the boundary for the 1-D example with eps = -0.25
    assert 1.0 + v * -0.25 == 0.0
    with pytest.raises(ValueError):
        boundary_coeffs(-0.1, "OT")


def test_stopping_time_examples():
    ot = make_schedule("OT", 1000)
    assert stopping_time(1.0, ot) == 500
    assert stopping_time(0.0, ot) == 0
    vp = make_schedule("VP", 2000)
    table = vp.sqrt_alphas_cumprod
    first = next(k for k, a in enumerate(table) if a <= 1 / np.sqrt(2))
    assert stopping_time(1.0, vp) == first


def test_ve_stopping_time_formula_and_masking():
    ve = make_schedule("VE", 1000)
    q = np.array([2.0])
    expect = 1000 * (np.log(2.0) - np.log(0.01)) / (np.log(50) - np.log(0.01))
    assert stopping_time(q, ve)[0] == pytest.approx(expect)
    est = estimate_boundary(X0[None], np.array([[1.0]]), np.array([0]), PM, ve)
    assert est.masked[0] and est.t0[0] == 1000
    assert est.v_t0[0] == pytest.approx(50.0)


def test_masked_elements_take_sentinel_time():
    vp = make_schedule("VP", 2000)
    est = estimate_boundary(X0[None], np.array([[1.0]]), np.array([0]), PM, vp)
    u = 1 / np.sqrt(1 + Q_SENTINEL**2)
    assert est.masked[0] and est.t0[0] == np.sum(vp.sqrt_alphas_cumprod > u)
    ot = make_schedule("OT", 1000)
    est = estimate_boundary(X0[None], np.array([[1.0]]), np.array([0]), PM, ot)
    assert est.t0[0] == pytest.approx(1000 * 100 / 101)


def test_psi_examples():
    vp = make_schedule("VP", 2000)
    x, t0 = psi(np.array([[-1.0]]), X0[None], np.array([0]), PM, vp)
    # one grid step past the crossing: just across the boundary
    assert abs(x[0, 0]) < 5e-3
    assert psi_inverse(x, t0, X0[None], vp)[0, 0] == pytest.approx(-1.0, abs=1e-12)
    # masked: eps points into C_I, the boundary point is near pure noise
    x, t0 = psi(np.array([[0.7]]), X0[None], np.array([0]), PM, vp)
    u, v = vp.coeff(t0)
    assert x[0, 0] == pytest.approx(u[0] + 0.7 * v[0])
    assert u[0] < 0.02


def test_psi_inverse_degenerate():
    ot = make_schedule("OT", 100)
    with pytest.raises(ValueError):
        psi_inverse(np.ones((1, 1)), np.array([0.0]), np.ones((1, 1)), ot)


def test_psi_round_trip_random_ot():
    rng = np.random.default_rng(0)
    table = EmbeddingTable(rng.standard_normal((6, 4)))
    ot = make_schedule("OT", 1000)
    labels = rng.integers(0, 6, size=100)
    x0 = table.embed(labels)
    eps = rng.standard_normal((100, 4))
    x, t0 = psi(eps, x0, labels, table, ot)
    ok = t0 > 0
    back = psi_inverse(x[ok], t0[ok], x0[ok], ot)
    assert np.max(np.abs(back - eps[ok])) < 1e-6


def _unit_table(rng, K, m):
    W = rng.standard_normal((K, m))
    return EmbeddingTable(W / np.linalg.norm(W, axis=1, keepdims=True))


@pytest.mark.parametrize("kind", ["VP", "VE", "OT"])
def test_boundary_point_lies_on_boundary(kind):
    rng = np.random.default_rng(1)
    table = _unit_table(rng, 8, 5)
    s = make_schedule(kind, 1000)
    labels = rng.integers(0, 8, size=400)
    x0 = table.embed(labels)
    eps = rng.standard_normal((400, 5))
    est = estimate_boundary(x0, eps, labels, table, s)
    live = ~est.masked
    x = est.u_t0[:, None] * x0 + est.v_t0[:, None] * eps
    fi = likelihood(x[live], labels[live], table)
    fj = likelihood(x[live], est.j_star[live], table)
    assert np.all(np.abs(fi - fj) <= 1e-4 * (1 + np.abs(fi)))
    assert np.all((est.t0 >= 0) & (est.t0 <= s.T))


@pytest.mark.parametrize("kind", ["VP", "VE", "OT"])
def test_min_fraction_equals_min_time(kind):
    """Minimising over q and over per-competitor times picks the same crossing."""
    rng = np.random.default_rng(2)
    table = _unit_table(rng, 6, 3)
    s = make_schedule(kind, 500)
    for _ in range(100):
        I = int(rng.integers(6))
        x0, eps = table.weights[I], rng.standard_normal(3)
        q, j, masked = boundary_fraction(x0, eps, I, table)
        if masked:
            continue
        W = table.weights
        times = []
        for J in range(6):
            a = W[I] @ W[I] - W[J] @ x0
            b = W[J] @ eps - W[I] @ eps
            if J != I and a >= 0 and b > 0:
                times.append(float(stopping_time(a / b, s)))
        assert float(stopping_time(q, s)) == pytest.approx(min(times), rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["VP", "VE", "OT"]))
def test_oracle_agreement_property(seed, kind):
    rng = np.random.default_rng(seed)
    table = _unit_table(rng, 4, 3)
    s = make_schedule(kind, 200)
    I = int(rng.integers(4))
    x0, eps = table.weights[I], rng.standard_normal(3)
    est = estimate_boundary(x0[None], eps[None], np.array([I]), table, s)
    ref = brute_first_exit(x0, eps, I, table.weights, kind, 200)
    if est.masked[0]:
        assert ref == 200
    else:
        assert abs(ref - est.t0[0]) <= 2 * 200 / (32 * 200)


def test_per_bit_boundaries_match_general_path():
    rng = np.random.default_rng(3)
    bits = encode_binary(rng.integers(0, 256, size=(10, 4)))
    eps = rng.standard_normal(bits.shape)
    labels = bits_to_indices(bits)
    s = make_schedule("VP", 1000)
    per_bit = estimate_boundary(bits[..., None], eps[..., None], labels, bit_table(), s)
    general = EmbeddingTable(np.array([[1.0], [-1.0]]))
    flat = estimate_boundary(bits.reshape(-1, 1), eps.reshape(-1, 1), labels.reshape(-1), general, s)
    for name in ("t0", "u_t0", "v_t0", "masked", "j_star"):
        assert np.array_equal(getattr(per_bit, name).ravel(), getattr(flat, name))


def test_self_dot_matches_direct_likelihood_for_embedding_rows():
    rng = np.random.default_rng(4)
    table = EmbeddingTable(rng.standard_normal((5, 3)))
    labels = rng.integers(0, 5, size=50)
    x0 = table.embed(labels)
    eps = rng.standard_normal((50, 3))
    a = boundary_fraction(x0, eps, labels, table, self_dot=True)
    b = boundary_fraction(x0, eps, labels, table, self_dot=False)
    np.testing.assert_allclose(a[0], b[0], rtol=1e-12)
    assert np.array_equal(a[1], b[1])


def test_as_rows_schema():
    s = make_schedule("OT", 100)
    est = estimate_boundary(np.array([[1.0], [1.0]]), np.array([[-1.0], [1.0]]), np.array([0, 0]), PM, s)
    rows = est.as_rows()
    assert rows[0] == (0, 50.0, 0.5, 0.5, 1, False)
    assert rows[1][4:] == (-1, True)


import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from backflow import operators as ops
from backflow.spectral import estimate_lambda, gaussian_probe
from backflow.transforms import StateVector, make_grid
from conftest import random_complex
import oracles

seeds = st.integers(min_value=0, max_value=2**32 - 1)
times = st.floats(min_value=-5.0, max_value=5.0)


def full_random(seed, m=96):
    return random_complex(np.random.default_rng(seed), m)


# -- free evolution ------------------------------------------------------------

@given(seeds, times)
def test_free_evolution(seed, t):
    g = make_grid(64, 9.0)
    phi = random_complex(np.random.default_rng(seed), 64)
    k = g.k_values
    assert np.array_equal(ops.apply_free_evolution(phi, k, 0.0), phi)
    out = ops.apply_free_evolution(phi, k, t)
    assert np.linalg.norm(out) == pytest.approx(np.linalg.norm(phi), rel=1e-13)
    np.testing.assert_allclose(ops.apply_free_evolution(out, k, -t), phi, atol=1e-12 * abs(phi).max())


# -- position projection and Hilbert transform -----------------------------------

@given(seeds)
def test_projection_idempotent_and_self_adjoint(seed):
    dk = 0.2
    f, g = full_random(seed), full_random(seed + 1)
    pf = ops.apply_position_projection(f, dk)
    np.testing.assert_allclose(ops.apply_position_projection(pf, dk), pf, atol=1e-12 * np.linalg.norm(f))
    lhs = np.vdot(g, pf)
    rhs = np.vdot(ops.apply_position_projection(g, dk), f)
    assert abs(lhs - rhs) <= 1e-12 * np.linalg.norm(f) * np.linalg.norm(g)


@given(seeds)
def test_hilbert_square_unitary_and_projection_identity(seed):
    dk = 0.2
    f = full_random(seed)
    hf = ops.apply_hilbert(f, dk)
    np.testing.assert_allclose(ops.apply_hilbert(hf, dk), -f, atol=1e-12 * np.linalg.norm(f))
    assert np.linalg.norm(hf) == pytest.approx(np.linalg.norm(f), rel=1e-12)
    np.testing.assert_allclose(0.5 * (f - 1j * hf), ops.apply_position_projection(f, dk), atol=1e-12 * np.linalg.norm(f))


def test_real_gaussian_has_half_its_mass_at_positive_x():
    m, dk, k0, w = 1024, 0.05, 3.0, 1.0
    k = (np.arange(m) - m // 2 + 0.5) * dk
    phi = np.exp(-0.5 * ((k - k0) / w) ** 2)
    frac = np.vdot(phi, ops.apply_position_projection(phi, dk)).real / np.vdot(phi, phi).real
    assert frac == pytest.approx(0.5, abs=1e-12)
    # independent check: quadrature of the closed-form position density
    ref = oracles.half_space_fraction(oracles.gaussian_position(k0, w), -40.0, 40.0)
    assert ref == pytest.approx(0.5, abs=1e-9)


# -- kernel entries ----------------------------------------------------------------

def test_kernel_entry_values():
    assert ops.kernel_entry(1.0, 2.0) == pytest.approx(-np.sin(3.0) / np.pi, rel=1e-14)
    assert ops.kernel_entry(1.0, 2.0) == pytest.approx(-0.04492, abs=1e-5)
    for k in (0.1, 1.0, 7.3):
        assert ops.kernel_entry(k, k) == pytest.approx(-2 * k / np.pi, rel=1e-15)
        assert ops.kernel_entry(k, k, T=3.0) == pytest.approx(-6 * k / np.pi, rel=1e-15)


@given(st.floats(0.01, 30), st.floats(0.01, 30))
def test_kernel_entry_symmetric_and_continuous(k, q):
    assert ops.kernel_entry(k, q) == ops.kernel_entry(q, k)
    # near the diagonal the expression approaches the analytic limit
    eps = 1e-7
    assert ops.kernel_entry(k, k + eps) == pytest.approx(ops.kernel_entry(k, k), abs=1e-5 * (1 + k))


# -- dense kernel ----------------------------------------------------------------------

def test_dense_matrix_is_symmetric_and_matches_oracle():
    g = make_grid(300, 12.0)
    d = ops.build_dense(g)
    assert np.array_equal(d.matrix, d.matrix.T)
    assert np.all(np.isfinite(d.matrix))
    ref = oracles.kernel_dense(g.k_values, g.dk)
    np.testing.assert_allclose(d.matrix, ref, rtol=0, atol=1e-13 * abs(ref).max())


def test_dense_matvec_against_adaptive_quadrature():
    g = make_grid(4096, 20.0)
    f = lambda q: np.exp(-0.5 * (q - 6.0) ** 2)
    out = ops.apply_dense(ops.build_dense(g), StateVector(g, f(g.k_values))).amplitudes
    for i in (500, 1000, 1228, 1500, 2000):
        ref = oracles.kernel_quadrature(f, g.k_values[i], 20.0)
        assert abs(out[i] - ref) < 1e-6 * abs(ref)


def test_dense_cap():
    with pytest.raises(MemoryError):
        ops.build_dense(make_grid(50, 1.0), cap=49)


def test_kernel_route_equals_dense():
    g = make_grid(700, 30.0)
    d = ops.build_dense(g)
    op = ops.BackflowOperator(g)
    rng = np.random.default_rng(5)
    for _ in range(5):
        v = random_complex(rng, g.n_half)
        ref = d.matrix @ v
        assert np.linalg.norm(op.matvec(v) - ref) < 1e-12 * np.linalg.norm(ref)
        assert np.linalg.norm(op.matvec_general(v) - ref) < 1e-12 * np.linalg.norm(ref)


def test_dense_and_matrix_free_top_eigenvalue(small_run):
    assert oracles.dense_top_eigenvalue(2000, 50.0) == pytest.approx(oracles.DENSE_TOP_2000_50, abs=1e-11)
    assert abs(small_run.lam - oracles.DENSE_TOP_2000_50) < 1e-9


# -- backflow operator ----------------------------------------------------------------

@pytest.fixture(scope="module")
def box_pair():
    g = make_grid(128, 12.0)
    return ops.BackflowOperator(g, route="sandwich"), ops.BackflowOperator(g, route="hilbert")


def test_box_routes_agree_on_100_random_vectors(box_pair):
    sand, hil = box_pair
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(100):
        v = random_complex(rng, sand.grid.n_half)
        a, b = sand.matvec_general(v), hil.matvec_general(v)
        worst = max(worst, np.linalg.norm(a - b) / np.linalg.norm(b))
    assert worst < 1e-10


def test_box_route_shortcut_matches_general(box_pair):
    sand, _ = box_pair
    v = random_complex(np.random.default_rng(2), sand.grid.n_half)
    a, b = sand.matvec(v), sand.matvec_general(v)
    assert np.linalg.norm(a - b) < 1e-10 * np.linalg.norm(b)


def test_box_route_close_to_kernel_route_with_padding():
    g = make_grid(400, 20.0)
    lam_box = estimate_lambda(g, 300, route="sandwich").lam
    lam_kernel = estimate_lambda(g, 300).lam
    assert abs(lam_box - lam_kernel) < 2e-3


def test_unpadded_periodic_box_shows_wrap_artifact():
    # without room to travel, flux through the far edge of the box mimics backflow
    g = make_grid(400, 20.0)
    op = ops.BackflowOperator(g, route="sandwich", padding=0)
    from backflow.spectral import power_iterate

    lam = power_iterate(ops.ShiftedOperator(op), np.ones(g.n_half), 300, grid=g).lam
    assert lam > 0.5


@pytest.mark.parametrize("route", ["kernel", "sandwich", "hilbert"])
def test_self_adjoint_real_and_bounded(route):
    g = make_grid(96, 10.0)
    op = ops.BackflowOperator(g, route=route)
    shifted = ops.ShiftedOperator(op)
    rng = np.random.default_rng(7)
    for _ in range(20):
        u, v = random_complex(rng, 96), random_complex(rng, 96)
        scale = np.linalg.norm(u) * np.linalg.norm(v)
        assert abs(np.vdot(u, op.matvec(v)) - np.vdot(op.matvec(u), v)) <= 1e-11 * scale
        assert abs(np.vdot(u, shifted.matvec(v)) - np.vdot(shifted.matvec(u), v)) <= 1e-11 * scale
        r = rng.standard_normal(96)
        out = op.matvec_general(r)
        assert np.linalg.norm(out.imag) <= 1e-10 * np.linalg.norm(out)
        rq = np.vdot(u, op.matvec(u)).real / np.vdot(u, u).real
        assert -1 - 1e-10 <= rq <= 1 + 1e-10


def test_dense_self_adjoint():
    d = ops.build_dense(make_grid(200, 10.0))
    rng = np.random.default_rng(8)
    u, v = random_complex(rng, 200), random_complex(rng, 200)
    assert abs(np.vdot(u, d.matvec(v)) - np.vdot(d.matvec(u), v)) <= 1e-11 * np.linalg.norm(u) * np.linalg.norm(v)


@given(seeds)
def test_rayleigh_quotients_within_operator_bounds(seed):
    g = make_grid(500, 25.0)
    op = ops.BackflowOperator(g)
    phi = StateVector(g, random_complex(np.random.default_rng(seed), 500))
    val = op.expectation(phi) / phi.norm ** 2
    assert -1 - 1e-10 <= val <= 1 + 1e-10
    shifted = ops.apply_shifted(phi)
    assert phi.inner(shifted).real >= -1e-10 * phi.norm ** 2


def test_shifted_zero_and_top_rayleigh():
    g = make_grid(500, 25.0)
    zero = StateVector(g, np.zeros(500))
    assert np.array_equal(ops.apply_shifted(zero).amplitudes, np.zeros(500))
    rng = np.random.default_rng(1)
    best = max(
        (lambda p: p.inner(ops.apply_shifted(p)).real / p.norm ** 2)(StateVector(g, random_complex(rng, 500)))
        for _ in range(20)
    )
    assert best <= 1.05
    assert estimate_lambda(g).lam + 1 <= 1.05


def test_narrow_gaussian_at_large_T_is_near_minus_one():
    phi = gaussian_probe(make_grid(4000, 20.0), 5.0, 1.0)
    assert ops.BackflowOperator(phi.grid, T=1.0).expectation(phi) == pytest.approx(-1.0, abs=0.05)


def test_operator_validation():
    g = make_grid(8, 1.0)
    with pytest.raises(ValueError):
        ops.BackflowOperator(g, T=0.0)
    with pytest.raises(ValueError):
        ops.BackflowOperator(g, route="projection")
    with pytest.raises(ValueError):
        ops.BackflowOperator(g).apply(StateVector(make_grid(8, 2.0), np.ones(8)))


# -- dilations ---------------------------------------------------------------------------

def test_dilation_identity_and_norm():
    g = make_grid(64, 8.0)
    phi = StateVector(g, random_complex(np.random.default_rng(4), 64))
    same = ops.apply_dilation(phi, 1.0)
    assert same.grid == g and np.array_equal(same.amplitudes, phi.amplitudes)
    assert ops.apply_dilation(phi, 2.0).norm == pytest.approx(phi.norm, rel=1e-12)
    with pytest.raises(ValueError):
        ops.apply_dilation(phi, 0.0)


def test_dilation_interpolation_is_flagged():
    g = make_grid(64, 8.0)
    phi = StateVector(g, np.exp(-(g.k_values - 4) ** 2))
    with pytest.warns(UserWarning):
        out = ops.apply_dilation(phi, 2.0, target=make_grid(64, 8.0))
    assert out.grid == g


@given(st.sampled_from([0.5, 2.0, 3.0, 1.7]), seeds)
def test_dilation_covariance(mu, seed):
    # <V phi, B_{mu^2 T} V phi> = <phi, B_T phi>
    g = make_grid(256, 15.0)
    phi = StateVector(g, random_complex(np.random.default_rng(seed), 256))
    lhs = ops.BackflowOperator(g, T=1.0).expectation(phi)
    v = ops.apply_dilation(phi, mu)
    rhs = ops.BackflowOperator(v.grid, T=mu ** 2).expectation(v)
    assert abs(lhs - rhs) < 1e-10 * phi.norm ** 2


def test_lambda_estimate_is_T_covariant():
    g = make_grid(400, 20.0)
    mu = 2.0
    lam1 = estimate_lambda(g, 200, T=1.0).lam
    dilated = make_grid(400, 20.0 / mu)
    lam4 = estimate_lambda(dilated, 200, T=mu ** 2).lam
    assert abs(lam1 - lam4) < 1e-8

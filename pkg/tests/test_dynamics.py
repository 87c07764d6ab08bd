import numpy as np
import pytest
from scipy import integrate

from backflow import dynamics as dyn
from backflow.spectral import gaussian_probe
from backflow.transforms import StateVector, make_grid
import oracles


@pytest.fixture(scope="module")
def packet():
    """Narrow forward packet: mean momentum 8, width 0.5, well inside the grid."""
    return gaussian_probe(make_grid(4000, 20.0), 8.0, 0.5)


def test_evolution_preserves_norm(maximizer, packet):
    for state in (maximizer, packet):
        for t in (-2.7, 0.0, 0.4, 3.0):
            x, psi = dyn.evolve_position(state, t)
            dx = 2 * np.pi / (len(x) * state.grid.dk)
            assert np.sum(abs(psi) ** 2) * dx == pytest.approx(state.norm ** 2, abs=1e-12)


def test_oversampled_evolution_matches_direct_sum(packet):
    x, psi = dyn.evolve_position(packet, 0.7, oversample=3)
    g = packet.grid
    idx = np.searchsorted(x, [-1.0, 0.0, 11.2])
    direct = np.exp(1j * np.outer(x[idx], g.k_values) - 1j * g.k_values ** 2 * 0.7) @ packet.amplitudes
    np.testing.assert_allclose(psi[idx], direct * g.dk / np.sqrt(2 * np.pi), atol=1e-12)


def test_maximizer_parity_and_pt(maximizer):
    par = dyn.parity_residuals(maximizer)
    assert par["real_even"] < 1e-6 and par["imag_odd"] < 1e-6
    for t in (0.3, 1.0, 2.5):
        assert dyn.pt_residual(maximizer, t) < 1e-8


def test_current_of_narrow_packet(packet):
    k0 = 8.0
    x, psi = dyn.evolve_position(packet, 0.0, oversample=4)
    peak = x[np.argmax(abs(psi) ** 2)]
    rho = dyn.density(packet, 0.0, peak)
    j = dyn.current(packet, 0.0, peak)
    assert j == pytest.approx(2 * k0 * rho, rel=0.02)
    # finite-difference derivative as an independent route to j
    h = 1e-5
    psi_p = np.exp(1j * (peak + h) * packet.grid.k_values) @ packet.amplitudes
    psi_m = np.exp(1j * (peak - h) * packet.grid.k_values) @ packet.amplitudes
    psi_0 = np.exp(1j * peak * packet.grid.k_values) @ packet.amplitudes
    c = packet.grid.dk / np.sqrt(2 * np.pi)
    j_fd = 2 * np.imag(np.conj(psi_0 * c) * (psi_p - psi_m) * c / (2 * h))
    assert j == pytest.approx(j_fd, rel=1e-6)


def test_continuity_at_origin(maximizer):
    t_grid = np.linspace(-3, 3, 601)
    jmax = np.abs(dyn.current(maximizer, t_grid)).max()
    # the current oscillates fast near t = +-1, so resolve it with a small step
    h = 1e-6
    for t in (-2.0, -1.0, -0.95, -0.3, 0.0, 0.6, 1.0, 1.4):
        p = dyn.half_space_probability(maximizer, np.array([t - h, t + h]))
        assert abs((p[1] - p[0]) / (2 * h) - dyn.current(maximizer, t)) < 1e-5 * jmax


def test_continuity_error_shrinks_with_step(maximizer):
    errs = []
    for h in (1e-3, 1e-4, 1e-5):
        p = dyn.half_space_probability(maximizer, np.array([-1.0 - h, -1.0 + h]))
        errs.append(abs((p[1] - p[0]) / (2 * h) - dyn.current(maximizer, -1.0)))
    # centred differences: error ~ h^2
    assert errs[1] < errs[0] / 50 and errs[2] < errs[1] / 50


def test_integrated_continuity(maximizer):
    t = np.linspace(-1.2, 0.3, 120001)
    antipode = np.pi / maximizer.grid.dk
    # on the period circle mass leaves (0, L/2) through both ends
    flux = dyn.current(maximizer, t) - dyn.current(maximizer, t, antipode)
    area = integrate.simpson(flux, x=t)
    p = dyn.half_space_probability(maximizer, np.array([-1.2, 0.3]))
    assert p[1] - p[0] == pytest.approx(area, abs=1e-12)


def test_half_space_probability_against_quadrature(small_run, maximizer):
    state = small_run.final_vector
    g = state.grid
    half = np.pi / g.dk
    # Gauss-Legendre panels on (0, L/2) applied to the direct momentum sum
    nodes, weights = np.polynomial.legendre.leggauss(40)
    edges = np.linspace(0.0, half, 501)
    for t in (-1.0, 0.25):
        ref = 0.0
        phase_t = np.exp(-1j * g.k_values ** 2 * t) * state.amplitudes
        for a, b in zip(edges[:-1], edges[1:]):
            x = 0.5 * (b - a) * nodes + 0.5 * (a + b)
            psi = np.exp(1j * np.outer(x, g.k_values)) @ phase_t * g.dk / np.sqrt(2 * np.pi)
            ref += 0.5 * (b - a) * weights @ (abs(psi) ** 2)
        assert dyn.half_space_probability(state, t) == pytest.approx(ref, abs=1e-10)
    # exact integration agrees with the trigonometric cumulative as well
    assert 1 - dyn.cumulative_mass(maximizer, 0.4, [0.0])[0] == pytest.approx(
        dyn.half_space_probability(maximizer, 0.4), abs=1e-13)


def test_half_space_probability_bounds_and_symmetry(maximizer):
    p = dyn.half_space_probability(maximizer, np.linspace(-3, 3, 61))
    assert np.all(p >= -1e-9) and np.all(p <= 1 + 1e-9)
    # small and rising at early times, near the other side late
    assert p[0] < 0.3 and p[1] > p[0]
    assert p[-1] > 0.7
    g = make_grid(300, 10.0)
    real_packet = StateVector(g, np.exp(-0.5 * (g.k_values - 4) ** 2)).normalized()
    assert dyn.half_space_probability(real_packet, 0.0) == pytest.approx(0.5, abs=1e-9)


def test_maximizer_current_and_area(maximizer, base_run):
    t = np.linspace(-0.9, 0.9, 1801)[1:-1]
    assert np.all(dyn.current(maximizer, t) < 0)
    tf = np.linspace(-1, 1, 10001)
    area = integrate.simpson(dyn.current(maximizer, tf), x=tf)
    assert abs(area + base_run.lam) < 0.1 * base_run.lam


def test_backflow_functional(maximizer, base_run):
    lam, (s, t) = dyn.backflow_functional(maximizer)
    assert abs(lam - base_run.lam) < 5e-3
    assert s == pytest.approx(-1.0, abs=0.05) and t == pytest.approx(1.0, abs=0.05)
    forward = gaussian_probe(make_grid(3000, 30.0), 12.0, 2.0)
    assert dyn.backflow_functional(forward)[0] < 1e-6


def test_field_invariants(maximizer):
    t = np.round(np.arange(-3, 3.0001, 0.25), 12)
    fld = dyn.current_field(maximizer, t)
    assert np.all(fld.rho >= 0)
    assert np.ptp(fld.mass) < 1e-9 and abs(fld.mass[0] - 1) < 1e-9
    # PT: rho(-t,-x) = rho(t,x), j(-t,-x) = j(t,x)
    assert np.abs(fld.rho[::-1, ::-1] - fld.rho).max() < 1e-6 * fld.rho.max()
    assert np.abs(fld.j[::-1, ::-1] - fld.j).max() < 1e-6 * np.abs(fld.j).max()


def test_continuity_on_field(packet):
    dt = 1e-4
    t = np.array([0.3 - dt, 0.3, 0.3 + dt])
    fld = dyn.current_field(packet, t, x_window=(-5.0, 25.0), oversample=4)
    drho = (fld.rho[2] - fld.rho[0]) / (2 * dt)
    # spectral x-derivative of j along the window (j is band-limited)
    dj = np.gradient(fld.j[1], fld.dx, edge_order=2)
    resid = np.sum(np.abs(drho + dj)) * fld.dx
    assert resid < 1e-3 * np.abs(drho).max() * (fld.x_values[-1] - fld.x_values[0])


def test_field_window_validation(packet):
    with pytest.raises(ValueError):
        dyn.current_field(packet, [0.0], x_window=(0.0, 1e-6))


def test_flow_lines_on_packet(packet):
    lines = dyn.flow_lines(packet, 0.0, 0.5, n_lines=20, x_window=(-5.0, 15.0), dt=5e-3)
    assert len(lines) == 20
    for ln in lines:
        assert np.all(np.diff(ln.t) > 0)
        assert 0 < ln.seed_quantile < 1
    pos = dyn.line_positions(lines, 0.5)
    assert np.all(np.diff(pos[~np.isnan(pos)]) > 0)
    # each line conserves the mass to its left
    for ln in lines:
        if ln.terminated is None:
            level = dyn.cumulative_mass(packet, 0.5, [ln.x[-1]])[0]
            assert level == pytest.approx(ln.seed_quantile, abs=2e-5)
    # the bulk moves with velocity ~ 2 k0
    mid = lines[10]
    assert (mid.x[-1] - mid.x[0]) / 0.5 == pytest.approx(16.0, rel=0.05)


def test_flow_lines_flag_leaving_window(packet):
    lines = dyn.flow_lines(packet, 0.0, 1.0, n_lines=5, x_window=(-5.0, 8.0), dt=1e-2)
    assert all(ln.terminated == "left_window" for ln in lines)
    assert all(ln.t[-1] < 1.0 for ln in lines)


def test_flow_lines_validation(packet):
    with pytest.raises(ValueError):
        dyn.flow_lines(packet, 1.0, 0.0)
    with pytest.raises(ValueError):
        dyn.flow_lines(packet, 0.0, 1.0, dt=0.0)


def test_seeds_skip_empty_regions(packet, caplog):
    # window far away from the packet: no mass, no seeds
    xs, levels = dyn.seed_positions(packet, 0.0, (200.0, 210.0), n_lines=3)
    rho = dyn._rho_at(packet, 0.0, xs)
    lines = dyn.flow_lines(packet, 0.0, 0.1, n_lines=3, x_window=(200.0, 210.0), dt=1e-2)
    assert np.all(rho < dyn.RHO_FLOOR) and lines == []
    assert "skipping" in caplog.text


def test_reference_normalization():
    quad = dyn.reference_integral("quad")
    mp = dyn.reference_integral("mpmath")
    assert abs(quad - mp) < 1e-8
    assert quad == pytest.approx(oracles.REFERENCE_INTEGRAL, abs=1e-12)
    assert dyn.reference_normalization() ** 2 == pytest.approx(2 / np.sqrt(np.pi), rel=1e-12)
    with pytest.raises(ValueError):
        dyn.reference_integral("simpson")


def test_reference_cumulative_against_quadrature():
    n2 = dyn.reference_normalization() ** 2
    for q in (0.5, 2.0, 7.5):
        ref, _ = integrate.quad(lambda k: (np.sin(k * k) / k) ** 2, 0, q, limit=500, epsabs=1e-13)
        assert dyn.reference_cumulative([q])[0] == pytest.approx(n2 * ref, abs=1e-10)
    assert dyn.reference_cumulative([0.0])[0] == 0.0
    assert dyn.reference_cumulative([1e4])[0] == pytest.approx(1.0, abs=1e-4)


def test_norm_comparison(maximizer):
    cmp_ = dyn.NormComparison.build(maximizer)
    assert np.all(np.diff(cmp_.state_cumulative) >= 0)
    assert np.all(np.diff(cmp_.reference_cumulative) >= 0)
    assert cmp_.state_cumulative[-1] == pytest.approx(1.0, abs=1e-6)
    assert cmp_.reference_cumulative[-1] + cmp_.reference_deficit == pytest.approx(1.0, abs=1e-12)
    assert 0 < cmp_.reference_deficit < 0.05

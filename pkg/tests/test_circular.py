import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import circle_grid, quad_integral, quad_moment, series_bessel_i
from valse.circular import (
    VmMixture,
    VmParam,
    bessel_ratio,
    inv_mean_resultant_length,
    mean_resultant_length,
    solve_concentration,
    unwrap_vm,
    vm_char,
    vm_pdf,
    vm_product,
    wrap_angle,
    wrapped_vm_pdf,
)

GRID = circle_grid()


def test_bessel_ratio_trivial_cases():
    assert bessel_ratio(0, 7.3) == 1.0
    assert bessel_ratio(1, 0.0) == 0.0


def test_bessel_ratio_matches_quadrature():
    kappa = 10.0
    log_f = kappa * np.cos(GRID)
    expected = quad_moment(log_f, 3).real
    assert bessel_ratio(3, kappa) == pytest.approx(expected, rel=1e-10)


def test_bessel_ratio_decreasing_in_order():
    for kappa in (0.3, 4.0, 80.0, 1e4):
        r = bessel_ratio(np.arange(40), kappa)
        assert np.all(np.diff(r) <= 0)
        assert np.all(r[1:] < r[:-1]) or r[-1] == 0.0


def test_bessel_ratio_huge_concentration_is_finite():
    r = bessel_ratio(np.array([1, 5, 50]), 1e6)
    assert np.all(np.isfinite(r))
    # A(k) ~ 1 - 1/(2k)
    assert r[0] == pytest.approx(1 - 0.5e-6, abs=1e-10)


@pytest.mark.parametrize("p,kappa", [(-1, 1.0), (1, -0.5), (2, np.inf)])
def test_bessel_ratio_rejects_bad_arguments(p, kappa):
    with pytest.raises(ValueError):
        bessel_ratio(p, kappa)


def test_mean_resultant_length_values():
    assert mean_resultant_length(0.0) == 0.0
    expected = series_bessel_i(1, 2.0) / series_bessel_i(0, 2.0)
    assert mean_resultant_length(2.0) == pytest.approx(expected, rel=1e-13)
    assert mean_resultant_length(2.0) == pytest.approx(0.6977, abs=1e-4)
    assert mean_resultant_length(1e5) >= 0.99999


def test_mean_resultant_length_strictly_increasing():
    k = np.linspace(0, 200, 2001)
    assert np.all(np.diff(mean_resultant_length(k)) > 0)


def test_inverse_mean_resultant_length():
    assert inv_mean_resultant_length(0.0) == 0.0
    a2 = series_bessel_i(1, 2.0) / series_bessel_i(0, 2.0)
    assert inv_mean_resultant_length(a2) == pytest.approx(2.0, abs=1e-8)

    # bisection oracle on A
    lo, hi = 0.0, 100.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mean_resultant_length(mid) < 0.95:
            lo = mid
        else:
            hi = mid
    assert inv_mean_resultant_length(0.95) == pytest.approx(lo, abs=1e-8)


@pytest.mark.parametrize("rho", [-0.1, 1.0, 1.5])
def test_inverse_mean_resultant_length_domain(rho):
    with pytest.raises(ValueError):
        inv_mean_resultant_length(rho)


def test_inverse_round_trip_on_wide_range():
    kappa = np.concatenate([[0.0], np.logspace(-4, 4, 400)])
    back = inv_mean_resultant_length(mean_resultant_length(kappa))
    np.testing.assert_allclose(back, kappa, rtol=1e-7, atol=1e-12)


def test_vm_pdf_values():
    assert vm_pdf(1.234, VmParam(0)) == pytest.approx(1 / (2 * np.pi))
    eta = VmParam.from_polar(3.0, 0.4)
    mode = np.exp(3.0) / (2 * np.pi * series_bessel_i(0, 3.0))
    assert vm_pdf(0.4, eta) == pytest.approx(mode, rel=1e-12)


@pytest.mark.parametrize("kappa", [0.5, 5.0, 50.0])
def test_vm_pdf_integrates_to_one(kappa):
    values = vm_pdf(GRID, VmParam.from_polar(kappa, -2.0))
    assert quad_integral(values) == pytest.approx(1.0, abs=1e-10)


def test_vm_product():
    a = VmParam.from_polar(2.5, 0.0)
    b = VmParam.from_polar(2.5, np.pi)
    assert abs(vm_product(a, b).eta) < 1e-12
    eta = VmParam(1.0 - 2.0j)
    assert vm_product(eta, 0).eta == eta.eta

    rng = np.random.default_rng(3)
    for _ in range(10):
        p = VmParam(complex(*rng.normal(size=2) * 3))
        q = VmParam(complex(*rng.normal(size=2) * 3))
        prod = vm_pdf(GRID, p) * vm_pdf(GRID, q)
        prod /= quad_integral(prod)
        assert np.max(np.abs(prod - vm_pdf(GRID, vm_product(p, q)))) < 1e-10


def test_vm_char():
    assert vm_char(VmParam(3 - 1j), 0) == 1 + 0j
    assert vm_char(VmParam(0), 1) == 0
    param = VmParam.from_polar(4.0, 0.7)
    expected = quad_moment(np.log(vm_pdf(GRID, param)), 2)
    assert abs(vm_char(param, 2) - expected) < 1e-10


@given(
    kappa=st.floats(0, 1e4, allow_nan=False),
    mu=st.floats(-np.pi, np.pi),
    p=st.integers(-30, 30),
)
def test_vm_char_bounded(kappa, mu, p):
    val = vm_char(VmParam.from_polar(kappa, mu), p)
    assert abs(val) <= 1.0 + 1e-15
    if p != 0 and kappa < 1e3:
        assert abs(val) < 1.0


def test_solve_concentration_published_values():
    assert solve_concentration(1, 5.5) == 5.5
    assert solve_concentration(3, 10.0) == pytest.approx(85.78, rel=5e-3)
    assert solve_concentration(3, 2.0) == pytest.approx(13.02, rel=5e-3)


@pytest.mark.parametrize("m", [2, 3, 7, 20, 60])
@pytest.mark.parametrize("kappa", [1e-6, 0.3, 2.0, 40.0, 3e3, 1e6])
def test_solve_concentration_satisfies_equation(m, kappa):
    kt = solve_concentration(m, kappa)
    assert bessel_ratio(m, kt) == pytest.approx(mean_resultant_length(kappa), rel=1e-8)


def test_solve_concentration_monotone():
    kappas = np.linspace(0.1, 100, 200)
    for m in (2, 3, 5, 10):
        assert np.all(np.diff(solve_concentration(m, kappas)) > 0)
    for kappa in (0.5, 5.0, 50.0):
        assert np.all(np.diff(solve_concentration(np.arange(1, 25), kappa)) > 0)


def test_solve_concentration_rejects_zero_order():
    with pytest.raises(ValueError):
        solve_concentration(0, 1.0)


def test_unwrap_vm_structure():
    eta = VmParam(2.0 - 1.0j)
    single = unwrap_vm(1, eta)
    assert len(single) == 1 and single.etas[0] == pytest.approx(eta.eta)

    mix = unwrap_vm(3, VmParam.from_polar(10.0, 0.0))
    np.testing.assert_allclose(mix.weights, 1 / 3)
    np.testing.assert_allclose(np.abs(mix.etas), 85.77306701, rtol=1e-8)
    means = np.sort(np.angle(mix.etas))
    np.testing.assert_allclose(means, [-2 * np.pi / 3, 0.0, 2 * np.pi / 3], atol=1e-12)
    assert all(-np.pi <= VmParam(e).mu < np.pi for e in mix.etas)

    with pytest.raises(ValueError):
        unwrap_vm(0, eta)


@pytest.mark.parametrize("m", [2, 3, 5, 10])
@pytest.mark.parametrize("kappa", [2.0, 5.0, 10.0, 50.0])
def test_unwrap_vm_moment_matching(m, kappa):
    param = VmParam.from_polar(kappa, 1.1)
    mix = unwrap_vm(m, param)
    log_wrapped = np.log(wrapped_vm_pdf(GRID, m, param))
    log_mix = np.log(mix.pdf(GRID))
    assert abs(quad_moment(log_mix, m) - quad_moment(log_wrapped, m)) < 1e-6
    for p in range(1, 3 * m):
        if p % m:
            assert abs(quad_moment(log_mix, p)) < 1e-10


def test_unwrap_vm_total_variation():
    results = {}
    for m in (2, 3, 5, 10):
        prev = np.inf
        for kappa in (2.0, 5.0, 10.0, 50.0):
            param = VmParam.from_polar(kappa, 0.3)
            grid = circle_grid(4096)
            tv = 0.5 * quad_integral(np.abs(wrapped_vm_pdf(grid, m, param) - unwrap_vm(m, param).pdf(grid)))
            results[m, kappa] = tv
            assert tv < 0.05
            assert tv < prev
            prev = tv


def test_mixture_normalizes_and_validates():
    mix = VmMixture(np.array([2.0, 6.0]), np.array([1.0, -1.0j]))
    assert mix.weights.sum() == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        VmMixture(np.array([]), np.array([], complex))
    with pytest.raises(ValueError):
        VmMixture(np.array([1.0, -1.0]), np.array([1.0, 2.0]))


def test_wrap_angle_canonical():
    x = np.array([np.pi, -np.pi, 3 * np.pi, -1e-20, 7.0])
    w = wrap_angle(x)
    assert np.all(w >= -np.pi) and np.all(w < np.pi)
    np.testing.assert_allclose(np.exp(1j * w), np.exp(1j * x), atol=1e-12)


@settings(max_examples=50)
@given(kappa=st.floats(0.0, 1e4))
def test_inverse_composition_identity(kappa):
    back = inv_mean_resultant_length(mean_resultant_length(kappa))
    assert back == pytest.approx(kappa, rel=1e-7, abs=1e-10)


@pytest.mark.parametrize("p", [0, 1, 4, 30, 250])
def test_asymptotic_branch_agrees_with_scaled_bessel(p):
    from scipy.special import ive

    from valse.circular import _log_ive_asymptotic

    x = np.array([1.5e4, 1e5, 3e6, 1e8, 5e8])
    np.testing.assert_allclose(_log_ive_asymptotic(p, x), np.log(ive(p, x)), rtol=0, atol=1e-13)
    ratio = ive(p, x) / ive(0, x)
    np.testing.assert_allclose(bessel_ratio(p, x), ratio, rtol=1e-13)


def test_bessel_ratio_beyond_scaled_bessel_range():
    # scaled Bessel routines give nan out here
    r = bessel_ratio(np.array([1, 60]), 1e11)
    np.testing.assert_allclose(r, np.exp(-np.array([1, 3600]) / 2e11), rtol=1e-14)

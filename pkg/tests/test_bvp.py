import dataclasses
import math

import numpy as np
import pytest

from aloha_mpr import bvp, symmetric
from aloha_mpr.channel import Policy
from aloha_mpr.errors import (
    DegenerateError,
    InstabilityError,
    InvalidParameterError,
    StandingAssumptionError,
)
from aloha_mpr.kernel import KernelCoeffs, contour_M, kernel_roots_in_y

ASYM_RATES = (0.08, 0.06)


@pytest.fixture(scope="module")
def asym_solution():
    from aloha_mpr.validate import ASYMMETRIC, ASYMMETRIC_POLICY
    return bvp.solve(ASYMMETRIC, ASYMMETRIC_POLICY, ASYM_RATES)


def test_flow_constants_solve_conservation(asym_channel, asym_policy):
    flow = bvp.flow_constants(asym_channel, asym_policy, ASYM_RATES)
    k = KernelCoeffs.from_params(asym_channel, asym_policy, *ASYM_RATES)
    assert flow.regime == bvp.UNBALANCED
    assert flow.rho == pytest.approx(0.08 + 0.06 / 0.95)
    for h00 in (0.2, 0.7):
        assert bvp.flow_residual(k, h00, *flow.resolve(h00)) < 1e-12
    assert flow.kappa[0] == pytest.approx(k.e1 * k.d2 / flow.determinant)


def test_regimes(capture_channel, ref_policy, balanced_symmetric):
    k = KernelCoeffs.from_params(capture_channel, ref_policy, 0.1, 0.1)
    assert bvp.regime_of(k) == bvp.UNBALANCED
    kb = KernelCoeffs.from_params(balanced_symmetric.channel(), balanced_symmetric.policy(), 0.05, 0.05)
    assert bvp.regime_of(kb) == bvp.BALANCED
    assert bvp.indicator(kb) == pytest.approx(1.0)
    k0 = KernelCoeffs.from_params(capture_channel, ref_policy, 0.0, 0.1)
    assert bvp.regime_of(k0) == bvp.DEGENERATE


def test_single_queue_limit(capture_channel, ref_policy):
    report = bvp.mean_delay(capture_channel, ref_policy, (0.2, 0.0))
    assert report.source == "bvp"
    assert report.extra["regime"] == bvp.DEGENERATE
    assert report.M == pytest.approx((0.25, 0.0))
    assert report.D[0] == pytest.approx(1.25)
    assert math.isnan(report.D[1])

    sol = bvp.solve(capture_channel, ref_policy, (0.0, 0.0))
    assert sol.h00 == 1.0
    assert bvp.mean_lengths(sol) == (0.0, 0.0)
    with pytest.raises(InstabilityError):
        bvp.solve(capture_channel, ref_policy, (0.0, 1.2))


def test_rejections(capture_channel, ref_policy, balanced_symmetric):
    with pytest.raises(InstabilityError):
        bvp.solve(capture_channel, ref_policy, (0.3, 0.3))
    with pytest.raises(StandingAssumptionError):
        bvp.solve(capture_channel, Policy.symmetric(0.0, 0.0), (0.1, 0.1))
    with pytest.raises(InvalidParameterError):
        bvp.solve(capture_channel, ref_policy, (-0.1, 0.1))
    with pytest.raises(InvalidParameterError):
        bvp.solve_dirichlet(capture_channel, ref_policy, (0.1, 0.1))
    with pytest.raises(DegenerateError):
        bvp.solve_riemann_hilbert(balanced_symmetric.channel(), balanced_symmetric.policy(), (0.05, 0.05))


def test_index_conditions(capture_channel, ref_policy):
    stable = bvp.index_conditions(capture_channel, ref_policy, (0.1, 0.1))
    assert stable.chi_zero
    assert stable.dA_dx < 0 and stable.dB_dy < 0
    unstable = bvp.index_conditions(capture_channel, ref_policy, (0.1, 0.95))
    assert not unstable.chi_zero
    assert unstable.dB_dy > 0


def test_numerical_index_is_zero_when_stable(capture_channel, ref_policy):
    assert bvp.winding_index(capture_channel, ref_policy, (0.1, 0.1)) == 0


def test_pole_analysis_signs(asym_channel, asym_policy):
    poles = bvp.pole_analysis(asym_channel, asym_policy, ASYM_RATES)
    assert poles.consistent
    assert poles.r in (0, 1) and poles.r_y in (0, 1)
    assert np.polyval(poles.Q, 1.0) > 0 and np.polyval(poles.Z, 1.0) > 0


def test_asymmetric_solution(asym_solution):
    sol = asym_solution
    assert sol.regime == bvp.UNBALANCED
    assert sol.chi == 0
    assert 0 < sol.h00 <= min(sol.h10, sol.h01) <= 1
    assert sol.diagnostics["flow_residual"] < 1e-8
    assert abs(sol.x_side.value(1.0) - sol.h10) < 1e-10
    assert bvp.kernel_residual(sol, n_points=20) < 1e-5


def test_asymmetric_delay_little(asym_channel, asym_policy, asym_solution):
    report = bvp.mean_delay(asym_channel, asym_policy, ASYM_RATES, sol=asym_solution)
    for m, d, lam in zip(report.M, report.D, ASYM_RATES):
        assert m > 0
        assert m == pytest.approx(lam * d)
    assert report.extra["chi"] == 0


@pytest.mark.parametrize("lam", [0.05, 0.1, 0.2])
def test_matches_symmetric_closed_form(ref_symmetric, lam):
    sp = ref_symmetric.with_lambda(lam)
    report = bvp.mean_delay(sp.channel(), sp.policy(), (lam, lam))
    expected = symmetric.delay_capture(sp)
    assert report.D[0] == pytest.approx(expected, rel=1e-3)
    assert report.D[1] == pytest.approx(expected, rel=1e-3)


def test_balanced_regime(balanced_symmetric):
    sp = balanced_symmetric.with_lambda(0.05)
    sol = bvp.solve(sp.channel(), sp.policy(), (0.05, 0.05))
    assert sol.regime == bvp.BALANCED
    assert sol.h00 == pytest.approx(1 - 2 * 0.05 / sp.e, abs=1e-8)
    report = bvp.mean_delay(sp.channel(), sp.policy(), (0.05, 0.05), sol=sol)
    assert report.D[0] == pytest.approx(symmetric.delay_capture(sp), rel=1e-3)


@pytest.mark.slow
def test_quadrature_doubling(asym_channel, asym_policy):
    coarse = bvp.mean_delay(asym_channel, asym_policy, ASYM_RATES, n_grid=256)
    fine = bvp.mean_delay(asym_channel, asym_policy, ASYM_RATES, n_grid=512)
    assert coarse.D[0] == pytest.approx(fine.D[0], rel=1e-5)
    assert coarse.D[1] == pytest.approx(fine.D[1], rel=1e-5)


def test_three_user_occupancy_shortcuts(channel3, policy3):
    assert bvp.solve_modified_F1(channel3, policy3, 0.0, 0.0) == (1.0, 1.0, 1.0)
    f00, f10, f01 = bvp.solve_modified_F1(channel3, policy3, 0.06, 0.0, dominant=1)
    assert f00 == pytest.approx(1 - 0.06 / 0.3)
    assert (f10, f01) == (1.0, f00)
    with pytest.raises(InstabilityError):
        bvp.solve_modified_F1(channel3, policy3, 0.0, 0.5)


def test_three_user_occupancy(channel3, policy3):
    f00, f10, f01 = bvp.solve_modified_F1(channel3, policy3, 0.05, 0.05, dominant=1)
    assert 0 < f00 < min(f10, f01) < 1
    # symmetric pair around a symmetric dominant user
    assert f10 == pytest.approx(f01, rel=1e-6)


def test_kernel_slope_matches_closed_form(ref_symmetric):
    sp = ref_symmetric.with_lambda(0.1)
    k = KernelCoeffs.from_params(sp.channel(), sp.policy(), 0.1, 0.1)
    h10, h01 = bvp.flow_constants(sp.channel(), sp.policy(), (0.1, 0.1)).resolve(0.6)
    m = 0.1 * symmetric.delay_capture(sp)
    g = (m * (k.s1 - 0.1) - 0.1) / k.d1
    slope, gap = bvp.kernel_slope(k, h10, h01, 0.6, g)
    assert gap < 1e-12
    assert slope == pytest.approx(g, rel=1e-6)


def test_kernel_slope_agrees_with_both_sides(asym_solution):
    sol = asym_solution
    slope, gap = bvp.kernel_slope(sol.kernel, sol.h10, sol.h01, sol.h00, sol.h2_01)
    assert gap < 1e-6
    assert slope == pytest.approx(sol.h1_10, rel=1e-3)


def test_rates_beyond_box_solve_one_side(capture_channel, ref_policy):
    # lambda2 > s2 = 0.288 but the pair is stable: only the x side pairs 1 with 1
    sol = bvp.solve(capture_channel, ref_policy, (0.02, 0.5))
    assert sol.diagnostics["one_sided"]
    assert sol.y_side is None and sol.x_side is not None
    assert sol.diagnostics["flow_residual"] < 1e-8
    assert sol.diagnostics["mirror_gap"] < 1e-6
    report = bvp.mean_delay(capture_channel, ref_policy, (0.02, 0.5), sol=sol)
    assert report.D[0] == pytest.approx(2.171, rel=0.05)
    assert report.D[1] == pytest.approx(2.242, rel=0.05)
    with pytest.raises(InvalidParameterError):
        bvp.kernel_residual(sol)
    with pytest.raises(InvalidParameterError):
        bvp.generating_function(sol, 0.5, 0.5)


def test_rates_beyond_box_mirror(capture_channel, ref_policy):
    a = bvp.mean_delay(capture_channel, ref_policy, (0.02, 0.5))
    b = bvp.mean_delay(capture_channel, ref_policy, (0.5, 0.02))
    assert a.D == pytest.approx(b.D[::-1], rel=1e-6)


@pytest.mark.slow
def test_rates_beyond_box_against_simulation(capture_channel, ref_policy):
    from aloha_mpr import simulator
    from aloha_mpr.simulator import SimConfig

    report = bvp.mean_delay(capture_channel, ref_policy, (0.02, 0.5))
    out = simulator.run(SimConfig(channel=capture_channel, policy=ref_policy, lams=(0.02, 0.5),
                                  slots=1_000_000, warmup=20_000, seed=11))
    assert report.D[0] == pytest.approx(out.mean_delay[0], rel=0.05)
    assert report.D[1] == pytest.approx(out.mean_delay[1], rel=0.05)


def test_generating_function_matches_simulated_queues(asym_channel, asym_policy, asym_solution):
    from aloha_mpr import simulator
    from aloha_mpr.simulator import SimConfig

    out = simulator.run(SimConfig(channel=asym_channel, policy=asym_policy, lams=ASYM_RATES,
                                  slots=200_000, warmup=0, seed=5, trace=True))
    empirical = np.mean(0.5 ** out.trace[5_000:].sum(axis=1))
    h = bvp.generating_function(asym_solution, 0.5, 0.5)
    assert abs(h.imag) < 1e-8
    assert h.real == pytest.approx(empirical, abs=0.01)


def _scan_pole(k, contour):
    """1 if A(x, Y0(x)) changes sign on real x in (1, beta0) with Y0 real and |Y0| <= 1."""
    xs = np.linspace(1 + 1e-6, contour.extreme[0] * (1 - 1e-6), 4000)
    y0, _ = kernel_roots_in_y(k, xs)
    keep = (np.abs(y0) <= 1) & (np.abs(y0.imag) < 1e-12)
    y = y0.real
    # x y A(x, y), free of the poles at x = 0 and y = 0
    sign = np.sign(k.s2 * (y - 1) * xs + k.d1 * (xs - 1) * y)
    change = keep[:-1] & keep[1:] & (sign[:-1] * sign[1:] < 0)
    return int(np.any(change))


@pytest.mark.parametrize("lams", [(0.05, 0.05), (0.1, 0.1), (0.08, 0.2), (0.2, 0.05), (0.02, 0.5)])
def test_pole_flag_matches_scan(capture_channel, ref_policy, lams):
    k = KernelCoeffs.from_params(capture_channel, ref_policy, *lams)
    contour = contour_M(k, 256)
    _, r, _ = bvp._locate_pole(k, contour)
    assert r == _scan_pole(k, contour)


def test_pole_flag_matches_scan_asymmetric(asym_channel, asym_policy):
    k = KernelCoeffs.from_params(asym_channel, asym_policy, *ASYM_RATES)
    for kk in (k, k.swapped()):
        contour = contour_M(kk, 256)
        assert bvp._locate_pole(kk, contour)[1] == _scan_pole(kk, contour)


def _inner_pole(side):
    return 1 + 0.5 * (side.cmap.contour.extreme[0] - 1)


def _finite_difference(side, x, h=1e-4):
    return (side.value(x + h) - side.value(x - h)) / (2 * h)


def test_pole_factor_derivative_unbalanced(asym_solution):
    side = asym_solution.x_side
    poled = dataclasses.replace(side, r=1, x_bar=_inner_pole(side))
    for x in (0.3, -0.4, 0.9):
        assert poled.derivative(x) == pytest.approx(_finite_difference(poled, x), rel=1e-5)
    # the factor equals 1 at x = 1
    assert poled.value(1.0) == pytest.approx(side.value(1.0), rel=1e-12)


def test_pole_factor_derivative_balanced(balanced_symmetric):
    sp = balanced_symmetric.with_lambda(0.05)
    side = bvp.solve(sp.channel(), sp.policy(), (0.05, 0.05)).x_side
    poled = dataclasses.replace(side, r=1, x_bar=_inner_pole(side), kappa=0.3)
    assert -1 < poled.a < 1
    for x in (0.3, -0.4, 0.9):
        assert poled.derivative(x) == pytest.approx(_finite_difference(poled, x), rel=1e-5)


def test_pole_inside_contour_shifts_winding(asym_channel, asym_policy):
    k = KernelCoeffs.from_params(asym_channel, asym_policy, *ASYM_RATES)
    contour = contour_M(k, 256)
    x, y = bvp._boundary_pairs(contour, contour.points)
    base = bvp._winding(bvp._coefficient_U(k, x, y, np.nan, 0))
    beta0 = contour.extreme[0]
    inside = bvp._winding(bvp._coefficient_U(k, x, y, 1 + 0.5 * (beta0 - 1), 1))
    outside = bvp._winding(bvp._coefficient_U(k, x, y, 1.5 * beta0, 1))
    assert base == 0
    assert inside == base - 1
    assert outside == base


def test_dirichlet_and_riemann_hilbert_agree_near_balance(balanced_symmetric):
    # alpha* nudged off the balanced value: indicator 1 - 2.4e-4
    sp = dataclasses.replace(balanced_symmetric, alpha_star=0.4141).with_lambda(0.05)
    ch, pol, lams = sp.channel(), sp.policy(), (0.05, 0.05)
    rh = bvp.mean_delay(ch, pol, lams, sol=bvp.solve_riemann_hilbert(ch, pol, lams))
    dirichlet = bvp.mean_delay(ch, pol, lams, sol=bvp.solve_dirichlet(ch, pol, lams))
    assert rh.extra["regime"] == bvp.UNBALANCED
    assert dirichlet.extra["regime"] == bvp.BALANCED
    assert rh.D[0] == pytest.approx(symmetric.delay_capture(sp), rel=2e-3)
    assert dirichlet.D[0] == pytest.approx(rh.D[0], rel=5e-3)

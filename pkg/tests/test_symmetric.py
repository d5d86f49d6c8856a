import numpy as np
import pytest

from aloha_mpr import symmetric
from aloha_mpr.errors import DegenerateError, InstabilityError, InvalidParameterError
from aloha_mpr.symmetric import SymmetricParams


@pytest.fixture
def mpr_symmetric():
    return SymmetricParams(alpha=0.6, alpha_star=1.0, p=0.9, p_tilde=1.0, b=0.2, c=0.3)


def test_derived_rates(ref_symmetric, mpr_symmetric):
    assert ref_symmetric.mu_both == pytest.approx(0.288)
    assert ref_symmetric.e == pytest.approx(1.0)
    assert ref_symmetric.d == pytest.approx(-0.712)
    assert mpr_symmetric.mu_both == pytest.approx(0.396)
    assert mpr_symmetric.gap == pytest.approx(-0.712 + 0.108)


def test_delay_capture_value(ref_symmetric):
    assert symmetric.delay_capture(ref_symmetric.with_lambda(0.1)) == pytest.approx(0.5048 / 0.376)


def test_delay_capture_light_traffic(ref_symmetric):
    assert symmetric.delay_capture(ref_symmetric.with_lambda(0.0)) == pytest.approx(1.0)
    slow = SymmetricParams(alpha=0.6, alpha_star=0.5, p=0.9, p_tilde=0.8, b=0.2, lam=1e-9)
    assert symmetric.delay_capture(slow) == pytest.approx(1 / 0.4, rel=1e-6)


def test_delay_capture_grows_with_load(ref_symmetric):
    lams = np.linspace(0.01, 0.28, 20)
    delays = [symmetric.delay_capture(ref_symmetric.with_lambda(lam)) for lam in lams]
    assert np.all(np.diff(delays) > 0)
    assert symmetric.delay_capture(ref_symmetric.with_lambda(0.288 - 1e-6)) > 1e3


def test_delay_capture_rejections(ref_symmetric, mpr_symmetric):
    with pytest.raises(InstabilityError):
        symmetric.delay_capture(ref_symmetric.with_lambda(0.288))
    with pytest.raises(InvalidParameterError):
        symmetric.delay_capture(mpr_symmetric.with_lambda(0.1))
    with pytest.raises(DegenerateError):
        symmetric.delay_capture(SymmetricParams(alpha=0.0, alpha_star=0.0, p=0.9, p_tilde=1.0, b=0.2))


def test_bounds_collapse_without_joint_decoding(ref_symmetric):
    low, up = symmetric.delay_bounds_mpr(ref_symmetric.with_lambda(0.1))
    assert low == up == pytest.approx(symmetric.delay_capture(ref_symmetric.with_lambda(0.1)))


@pytest.mark.parametrize("lam", [0.05, 0.1, 0.2, 0.35])
def test_mpr_bounds(mpr_symmetric, lam):
    sp = mpr_symmetric.with_lambda(lam)
    low, up = symmetric.delay_bounds_mpr(sp)
    assert 0 < low <= up
    width = -sp.joint * sp.gap / (2 * lam * sp.e * (sp.mu_both - lam))
    assert up - low == pytest.approx(width)
    assert low == pytest.approx(symmetric.mean_queue_length(sp, 0.0) / lam)
    assert up == pytest.approx(symmetric.mean_queue_length(sp, 1.0) / lam)


def test_mpr_bounds_unstable(mpr_symmetric):
    with pytest.raises(InstabilityError):
        symmetric.delay_bounds_mpr(mpr_symmetric.with_lambda(0.4))


def test_mean_queue_length_is_littles_law(ref_symmetric):
    sp = ref_symmetric.with_lambda(0.15)
    assert symmetric.mean_queue_length(sp, 0.0) == pytest.approx(0.15 * symmetric.delay_capture(sp))
    with pytest.raises(InvalidParameterError):
        symmetric.mean_queue_length(sp, 1.5)


def test_delay_report(ref_symmetric, mpr_symmetric):
    exact = symmetric.delay(ref_symmetric.with_lambda(0.1))
    assert exact.source == "closed-form"
    assert exact.D[0] == exact.D[1] == pytest.approx(0.5048 / 0.376)
    assert exact.M[0] == pytest.approx(0.1 * exact.D[0])
    assert symmetric.delay(ref_symmetric).D == pytest.approx((1.0, 1.0))

    bounded = symmetric.delay(mpr_symmetric.with_lambda(0.1))
    assert bounded.extra["kind"] == "bounds"
    assert bounded.bounds[0] == symmetric.delay_bounds_mpr(mpr_symmetric.with_lambda(0.1))
    known = symmetric.delay(mpr_symmetric.with_lambda(0.1), p_busy=0.5)
    assert bounded.D[0] < known.D[0] < bounded.D[1]


@pytest.mark.parametrize("b, alpha_star, expected, branch", [
    (0.2, 1.0, 0.9 / 1.4, "vertex"),
    (0.5, 1.0, 1.0, "alpha_star"),
    (0.0, 1.0, 0.5, "vertex"),
    (0.2, 0.5, 0.5, "alpha_star"),
])
def test_optimal_alpha(b, alpha_star, expected, branch):
    sp = SymmetricParams(alpha=0.3, alpha_star=alpha_star, p=0.9, p_tilde=1.0, b=b, lam=0.05)
    best = symmetric.optimal_alpha(sp)
    assert best.alpha_tilde == pytest.approx(expected)
    assert best.branch == branch
    assert best.feasible


def test_optimal_alpha_matches_grid_search(ref_symmetric):
    sp = ref_symmetric.with_lambda(0.2)
    grid = np.arange(0.0, 1.0 + 1e-12, 1e-4)
    delays = []
    for a in grid:
        try:
            delays.append(symmetric.delay_capture(sp.with_alpha(a)))
        except InstabilityError:
            delays.append(np.inf)
    best = symmetric.optimal_alpha(sp)
    assert abs(grid[int(np.argmin(delays))] - best.alpha_tilde) <= 1e-4


def test_optimal_alpha_rejections(mpr_symmetric):
    with pytest.raises(InvalidParameterError):
        symmetric.optimal_alpha(mpr_symmetric)
    with pytest.raises(InvalidParameterError):
        symmetric.optimal_alpha(SymmetricParams(alpha=0.3, alpha_star=1.0, p=0.3, p_tilde=1.0, b=0.4))


def test_optimal_alpha_infeasible(ref_symmetric):
    best = symmetric.optimal_alpha(ref_symmetric.with_lambda(0.5))
    assert not best.feasible


def test_stable_alpha_interval(ref_symmetric):
    sp = ref_symmetric.with_lambda(0.1)
    low, high = symmetric.stable_alpha_interval(sp)
    assert low == pytest.approx(0.1229, abs=1e-4)
    assert high == pytest.approx(1.1629, abs=1e-4)
    assert sp.with_alpha(low).mu_both == pytest.approx(0.1)
    assert np.isnan(symmetric.stable_alpha_interval(ref_symmetric.with_lambda(0.5))[0])


def test_params_validation():
    with pytest.raises(InvalidParameterError):
        SymmetricParams(alpha=1.2, alpha_star=1.0, p=0.9, p_tilde=1.0)
    with pytest.raises(InvalidParameterError):
        SymmetricParams(alpha=0.5, alpha_star=1.0, p=0.9, p_tilde=1.0, lam=-0.1)
    with pytest.raises(InvalidParameterError):
        SymmetricParams(alpha=0.5, alpha_star=1.0, p=0.9, p_tilde=1.0, b=0.4, c=0.3)
    with pytest.warns(UserWarning):
        SymmetricParams(alpha=0.8, alpha_star=0.5, p=0.9, p_tilde=1.0)


def test_channel_and_policy(mpr_symmetric):
    ch = mpr_symmetric.channel()
    assert ch.c == pytest.approx(0.3)
    assert ch.b == pytest.approx((0.2, 0.2))
    assert mpr_symmetric.policy().alpha == (0.6, 0.6)

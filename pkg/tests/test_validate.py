import numpy as np
import pytest

from aloha_mpr import validate
from aloha_mpr.channel import preset
from aloha_mpr.errors import DegenerateError, InvalidParameterError
from aloha_mpr.validate import FAIL, INCONCLUSIVE, PASS, Check, ValidationReport, ValidationSettings, compare


@pytest.mark.parametrize("measured, ci, expected_status", [
    (1.01, 0.1, PASS),
    (1.10, 0.05, INCONCLUSIVE),
    (1.50, 0.05, FAIL),
    (1.10, np.nan, FAIL),
])
def test_compare(measured, ci, expected_status):
    assert compare("x", measured, 1.0, ci, rel_tol=0.02).status == expected_status


def test_report_summary():
    rep = ValidationReport([Check("a", PASS), Check("b", INCONCLUSIVE)])
    assert rep.summary == {PASS: 1, FAIL: 0, INCONCLUSIVE: 1}
    assert rep.passed
    rep.checks.append(Check("c", FAIL))
    assert not rep.passed
    assert rep.as_dict()["passed"] is False


def test_settings_warmup():
    assert ValidationSettings(slots=50_000).warmup == 5_000
    assert ValidationSettings(slots=10_000_000).warmup == 100_000


def test_analytic_checks_pass():
    rep = validate.run_suite(ValidationSettings(only=("conformal_identity", "optimal_alpha"), threads=2))
    assert [c.status for c in rep.checks] == [PASS, PASS, PASS]


def test_closure_dominance_passes():
    rep = validate.run_suite(ValidationSettings(only=("closure_dominance",), threads=1))
    assert all(c.status == PASS for c in rep.checks)


def test_unknown_check():
    with pytest.raises(InvalidParameterError):
        validate.run_suite(ValidationSettings(only=("nope",)))


def test_raising_check_is_a_failure(monkeypatch):
    def broken(settings):
        raise DegenerateError("no solution")

    monkeypatch.setitem(validate.CHECKS, "broken", broken)
    rep = validate.run_suite(ValidationSettings(only=("broken",)))
    assert rep.checks[0].status == FAIL
    assert "DegenerateError" in rep.checks[0].detail


@pytest.mark.slow
def test_capture_delay_agrees_with_simulation():
    rep = validate.run_suite(ValidationSettings(slots=400_000, seed=5, only=("capture_delay",)))
    assert rep.passed


@pytest.mark.slow
def test_tampered_channel_is_caught():
    tampered = preset("capture", p=0.5, p_tilde=1.0, b=0.2)
    rep = validate.run_suite(ValidationSettings(slots=400_000, seed=5, sim_channel=tampered,
                                                only=("capture_delay",)))
    assert not rep.passed


def test_owned_rays_cover_each_subregion():
    from aloha_mpr.channel import Policy
    from aloha_mpr.stability import two_user_region

    region = two_user_region(preset("capture", p=0.9, p_tilde=1.0, b=0.2), Policy.symmetric(0.6, 1.0))
    for sub in region.subregions:
        rays = validate._owned_rays(region, sub.label, 6)
        assert len(rays) == 6
        for d, edge in rays:
            assert np.linalg.norm(d) == pytest.approx(1.0)
            assert region.classify((edge - 0.02) * d) == "stable"
            assert region.classify((edge + 0.02) * d) == "unstable"
            assert sub.label in region.member_of((edge - 0.02) * d)


@pytest.mark.slow
def test_drift_straddles_boundaries():
    rep = validate.run_suite(ValidationSettings(slots=400_000, seed=3, only=("drift",), drift_pairs=1,
                                                drift_offset=0.05))
    names = [c.name for c in rep.checks]
    assert len(names) == 2 * 2 + 3 * 2
    assert "drift[R2 0 outside]" in names and "drift3[R3 inside]" in names
    assert not any(c.status == FAIL for c in rep.checks)

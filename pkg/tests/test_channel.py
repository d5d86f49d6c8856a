import numpy as np
import pytest

from aloha_mpr.channel import (
    ChannelParams,
    PhyParams,
    Policy,
    derive_conditionals,
    joint_events,
    preset,
    preset3,
    success_prob,
)
from aloha_mpr.errors import InvalidParameterError


@pytest.fixture
def phy():
    return PhyParams(tx_power=(1.0, 1.0), distance=(1.0, 1.0), fading=(1.0, 1.0), threshold=(1.0, 1.0))


def test_zero_threshold_always_decodes():
    phy = PhyParams(tx_power=(1.0, 2.0), distance=(1.0, 1.5), fading=(1.0, 1.0), threshold=(0.0, 0.0), noise=0.3)
    assert success_prob(phy, 1, {1, 2}) == 1.0
    assert success_prob(phy, 2, {2}) == 1.0


def test_interference_factor(phy):
    assert success_prob(phy, 1, {1}) == pytest.approx(1.0)
    assert success_prob(phy, 1, {1, 2}) == pytest.approx(0.5)


def test_noise_term():
    phy = PhyParams(tx_power=(2.0, 1.0), distance=(1.0, 1.0), fading=(1.0, 1.0), threshold=(0.5, 0.5), noise=1.0)
    assert success_prob(phy, 1, {1}) == pytest.approx(np.exp(-0.5 * 1.0 / 2.0))


def test_success_prob_rejects_outsider(phy):
    with pytest.raises(InvalidParameterError):
        success_prob(phy, 1, {2})
    with pytest.raises(InvalidParameterError):
        success_prob(phy, 1, set())


def test_phy_validation():
    with pytest.raises(InvalidParameterError):
        PhyParams(tx_power=(1.0, 0.0), distance=(1.0, 1.0), fading=(1.0, 1.0), threshold=(1.0, 1.0))
    with pytest.raises(InvalidParameterError):
        PhyParams(tx_power=(1.0,), distance=(1.0,), fading=(1.0,), threshold=(1.0,))


def test_joint_events_match_marginals(phy):
    est, se = joint_events(phy, samples=200_000, seed=3, threads=2)
    for i in (1, 2):
        assert est[i - 1] + est[2] == pytest.approx(success_prob(phy, i, {1, 2}), abs=5 * se[i - 1] + 0.005)
    assert est.sum() <= 1.0


def test_joint_events_deterministic(phy):
    a, _ = joint_events(phy, samples=100_000, seed=11, threads=1)
    b, _ = joint_events(phy, samples=100_000, seed=11, threads=3)
    assert np.array_equal(a, b)


def test_derive_conditionals_table(phy):
    ch = derive_conditionals(phy, samples=100_000, seed=1)
    assert ch.p == (1.0, 1.0)
    assert ch.stderr["samples"] == 100_000
    assert ch.b[0] + ch.b[1] + ch.c <= 1.0 + 1e-12


def test_channel_rejects_oversubscribed_pair():
    with pytest.raises(InvalidParameterError):
        ChannelParams(p=(0.9, 0.9), p_tilde=(1.0, 1.0), b=(0.5, 0.4), c=0.2)


def test_channel_warns_on_ordering():
    with pytest.warns(UserWarning):
        ChannelParams(p=(0.9, 0.9), p_tilde=(0.5, 1.0), b=(0.2, 0.2))


def test_presets():
    collision = preset("collision", p=0.9, b=0.4, c=0.1)
    assert collision.b == (0.0, 0.0) and collision.c == 0.0
    capture = preset("capture", p=0.9, b=0.2, c=0.3)
    assert capture.is_capture and capture.marginal(1) == pytest.approx(0.2)
    mpr = preset("mpr", p=0.9, b=0.2, c=0.3)
    assert mpr.marginal(2) == pytest.approx(0.5)
    assert mpr.p_none == pytest.approx(0.3)
    with pytest.raises(InvalidParameterError):
        preset("mpr", b=0.4, c=0.3)
    with pytest.raises(InvalidParameterError):
        preset("noma")


def test_table_keys():
    ch = ChannelParams.from_table({"P1_1": 0.9, "P2_2": 0.8, "Pt1_1": 1.0, "Pt2_2": 1.0, "P1_12": 0.2, "P2_12": 0.1})
    assert ch.c == 0.0 and ch.b == (0.2, 0.1)
    with pytest.raises(InvalidParameterError):
        ChannelParams.from_table({"P1_1": 0.9})
    with pytest.raises(InvalidParameterError):
        ChannelParams.from_table({**ch.as_table(), "P3_3": 1.0})


def test_preset3():
    ch3 = preset3("capture", p=0.9, p_tilde=1.0, b=0.2, b3=0.1)
    assert ch3.P(1, 1) == 0.9
    assert ch3.P(2, 1, 2) == 0.2
    assert ch3.P(3, 1, 2, 3) == 0.1
    assert ch3.Pt(2, 2) == 1.0
    assert ch3.Pt(2, 2, 3) == 0.2
    assert ch3.Pa(3) == 1.0
    with pytest.raises(InvalidParameterError):
        preset3("capture", b=0.1, b3=0.2)


def test_policy():
    pol = Policy.symmetric(0.3, 0.7, n=3)
    assert pol.n_users == 3 and pol.alpha_star == (0.7, 0.7, 0.7)
    with pytest.raises(InvalidParameterError):
        Policy((0.1, 0.2), (0.5,))
    with pytest.raises(InvalidParameterError):
        Policy((1.2, 0.2), (1.0, 1.0))
    with pytest.warns(UserWarning):
        Policy((0.8, 0.2), (0.5, 1.0))


def test_success_prob_matches_fading_draws():
    phy = PhyParams(tx_power=(1.0, 0.7), distance=(1.0, 1.2), fading=(1.0, 0.8), threshold=(0.6, 0.4), noise=0.2)
    rng = np.random.default_rng(21)
    n = 400_000
    received = rng.exponential(scale=phy.fading, size=(n, 2)) * phy.gains()
    for i, other in ((1, 2), (2, 1)):
        sinr = received[:, i - 1] / (phy.noise + received[:, other - 1])
        hits = sinr >= phy.threshold[i - 1]
        se = hits.std() / np.sqrt(n)
        assert hits.mean() == pytest.approx(success_prob(phy, i, {1, 2}), abs=4 * se)
        alone = received[:, i - 1] / phy.noise >= phy.threshold[i - 1]
        assert alone.mean() == pytest.approx(success_prob(phy, i, {i}), abs=4 * alone.std() / np.sqrt(n))


def test_collision_preset_is_mpr_without_decoding():
    collision = preset("collision", p=0.9, p_tilde=1.0)
    silent = preset("mpr", p=0.9, p_tilde=1.0, b=0.0, c=0.0)
    assert collision == silent
    assert collision.as_table() == silent.as_table()


def test_unreachable_threshold_never_decodes():
    phy = PhyParams(tx_power=(1.0, 1.0), distance=(1.0, 1.0), fading=(1.0, 1.0), threshold=(1e12, 1e12), noise=1.0)
    ch = derive_conditionals(phy, samples=50_000, seed=2)
    assert ch.p == (0.0, 0.0) and ch.p_tilde == (0.0, 0.0)
    assert ch.b == (0.0, 0.0) and ch.c == 0.0
    assert ch.p_none == 1.0

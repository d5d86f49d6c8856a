import os
import sys

import pytest

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from aloha_mpr import config
from aloha_mpr.channel import ChannelParams, Policy, preset, preset3
from aloha_mpr.symmetric import SymmetricParams


@pytest.fixture
def capture_channel():
    return preset("capture", p=0.9, p_tilde=1.0, b=0.2)


@pytest.fixture
def mpr_channel():
    return preset("mpr", p=0.9, p_tilde=1.0, b=0.2, c=0.3)


@pytest.fixture
def ref_policy():
    return Policy.symmetric(0.6, 1.0)


@pytest.fixture
def asym_channel():
    return ChannelParams(p=(0.9, 0.8), p_tilde=(1.0, 0.95), b=(0.2, 0.15), c=0.0)


@pytest.fixture
def asym_policy():
    return Policy(alpha=(0.6, 0.5), alpha_star=(1.0, 1.0))


@pytest.fixture
def ref_symmetric():
    return SymmetricParams(alpha=0.6, alpha_star=1.0, p=0.9, p_tilde=1.0, b=0.2)


@pytest.fixture
def balanced_symmetric():
    # s / e = 0.207 / 0.414 for each user
    return SymmetricParams(alpha=0.3, alpha_star=0.414, p=0.9, p_tilde=1.0, b=0.2)


@pytest.fixture
def channel3():
    return preset3("capture", p=0.9, p_tilde=1.0, b=0.2, b3=0.1)


@pytest.fixture
def policy3():
    return Policy.symmetric(0.5, 0.5, n=3)


@pytest.fixture
def data_dir(tmp_path, monkeypatch):
    monkeypatch.setattr(config, "DATA_DIR", str(tmp_path))
    monkeypatch.setattr(config, "LOG_PATH", str(tmp_path / "aloha_mpr.log"))
    return tmp_path

import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from radar_sense.scene import C0, paper_config

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow], derandomize=True)
settings.load_profile("default")

# property tests that back the randomized invariant suite
PROPS = settings(max_examples=1000)


def small_config(M=2, N=64, N_P=32, L=4, Q=None, **kw):
    """Reduced-size config with ``L_max = L`` echo clusters."""
    dd = C0 / (2 * N * 15e3)
    return paper_config(M, N=N, N_P=N_P, Q=Q if Q is not None else L + 2, d_max=L * dd, **kw)


def random_channel(cfg, rng, density=0.5):
    """Random tensor with roughly ``density`` of the clusters occupied."""
    h = rng.standard_normal((cfg.L_max, cfg.M_R, cfg.M_T, 2)) @ np.array([1, 1j])
    h *= (rng.random(cfg.L_max) < density)[:, None, None]
    return h * 1e-4


@pytest.fixture
def cfg4():
    return paper_config(4)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def snap(theta, step=math.radians(0.25)):
    return round(theta / step) * step

import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from radar_sense.channel import (
    channel_tensor, channel_vector, effective_cluster_channels, gamma, path_gain,
    scattered_channel, steering, upsilon)
from radar_sense.errors import DomainError, ShapeError
from radar_sense.scene import Target, build_clusters, paper_config, paper_targets

from conftest import PROPS

pytestmark = pytest.mark.property
CFG = paper_config(4)


def _mp_gain(d, cfg):
    mpmath.mp.dps = 50
    mu, s = mpmath.mpf(cfg.mu), mpmath.mpf(cfg.sigma_rcs)
    return mu ** 2 * s / (64 * mpmath.pi ** 3 * mpmath.mpf(d) ** 4)


def test_gain_reference_point():
    ref = _mp_gain(22.765, CFG)
    assert path_gain(22.765, CFG) == pytest.approx(float(ref), rel=1e-14)


@PROPS
@given(st.floats(1e-3, 1e4))
def test_gain_matches_high_precision(d):
    assert path_gain(d, CFG) == pytest.approx(float(_mp_gain(d, CFG)), rel=1e-13)


def test_gain_laws():
    d = 37.0
    assert path_gain(2 * d, CFG) == pytest.approx(path_gain(d, CFG) / 16, rel=1e-15)
    wide = paper_config(4, mu=2 * CFG.mu, d_A=2 * CFG.d_A)
    assert path_gain(d, wide) == pytest.approx(4 * path_gain(d, CFG), rel=1e-15)
    with pytest.raises(DomainError):
        path_gain(0.0, CFG)


@PROPS
@given(st.floats(0.1, 1e3), st.floats(0.1, 1e3))
def test_gain_positive_and_decreasing(a, b):
    if a == b:
        return
    lo, hi = sorted((a, b))
    assert path_gain(lo, CFG) > path_gain(hi, CFG) > 0


def test_scattered_channel_examples():
    d = 50.0
    h11 = scattered_channel(d, 0.3, 1, 1, CFG)
    assert h11 == pytest.approx(math.sqrt(path_gain(d, CFG)) * np.exp(-4j * np.pi * d / CFG.mu), rel=1e-9)
    assert h11 == pytest.approx(scattered_channel(d, 1.2, 1, 1, CFG), rel=1e-12)
    h12 = scattered_channel(d, math.radians(30), 1, 2, CFG)
    assert h12 / h11 == pytest.approx(np.exp(-0.9j * np.pi), abs=1e-12)
    with pytest.raises(DomainError):
        scattered_channel(d, 0.3, 5, 1, CFG)


def test_gamma_and_upsilon_examples():
    d = 42.0
    assert abs(gamma(d, CFG)) == pytest.approx(math.sqrt(path_gain(d, CFG)), rel=1e-14)
    assert gamma(d, CFG) == pytest.approx(scattered_channel(d, 0.7, 1, 1, CFG), rel=1e-12)
    # half a wavelength more range is one full phase turn
    g2 = gamma(d + CFG.mu / 2, CFG)
    assert g2 / abs(g2) == pytest.approx(gamma(d, CFG) / abs(gamma(d, CFG)), abs=1e-9)
    assert upsilon(0.4, 1, 1, CFG) == 1
    assert upsilon(0.4, 1, 2, CFG) == upsilon(0.4, 2, 1, CFG)
    assert upsilon(math.pi / 2, 1, 2, CFG) == pytest.approx(np.exp(-1.8j * np.pi), abs=1e-12)


@PROPS
@given(st.floats(0.5, 97.0), st.floats(1e-4, math.pi / 2), st.integers(1, 4), st.integers(1, 4))
def test_decomposition_and_modulus(d, theta, mt, mr):
    h = scattered_channel(d, theta, mt, mr, CFG)
    assert h == pytest.approx(gamma(d, CFG) * upsilon(theta, mt, mr, CFG), rel=1e-12)
    assert abs(h) == pytest.approx(math.sqrt(path_gain(d, CFG)), rel=1e-12)
    assert abs(upsilon(theta, mt, mr, CFG)) == pytest.approx(1.0, abs=1e-15)


@PROPS
@given(st.lists(st.tuples(st.floats(0.01, 1.0), st.floats(0.01, 1.0)), max_size=6))
def test_sum_index_symmetry(pts):
    ts = [Target(i, f * CFG.d_max, g * CFG.theta_max) for i, (f, g) in enumerate(pts)]
    h = effective_cluster_channels(build_clusters(ts, CFG), CFG)
    for u in range(CFG.n_virtual):
        vals = [h[:, r, u - r] for r in range(CFG.M_R) if 0 <= u - r < CFG.M_T]
        for v in vals[1:]:
            np.testing.assert_allclose(v, vals[0], rtol=0, atol=1e-15 * (1 + np.abs(vals[0]).max()))


def test_effective_channels_term_by_term():
    cmap = build_clusters(paper_targets(), CFG)
    h = effective_cluster_channels(cmap, CFG)
    for l in range(1, CFG.L_max + 1):
        for mr in range(1, 5):
            for mt in range(1, 5):
                want = sum(scattered_channel(m.d, m.theta, mt, mr, CFG) for m in cmap.members(l))
                # phases of ~800 cycles: 1e-11 covers the rounding of 2d/mu
                assert h[l - 1, mr - 1, mt - 1] == pytest.approx(want, rel=1e-11, abs=1e-300)
    empty = [l for l in range(1, 11) if l not in (3, 9)]
    assert not np.any(h[[l - 1 for l in empty]])
    assert np.all(np.abs(h[2]) > 0)


def test_single_target_slice():
    t = Target(7, 40.0, 0.6)
    h = effective_cluster_channels(build_clusters([t], CFG), CFG)
    l = 5  # 40 m / 9.77 m -> 5th cluster
    assert h[l - 1, 2, 1] == scattered_channel(40.0, 0.6, 2, 3, CFG) or \
        h[l - 1, 2, 1] == pytest.approx(scattered_channel(40.0, 0.6, 2, 3, CFG), rel=1e-14)


def test_steering_and_reshape():
    th = np.array([0.1, 0.2, 0.3])
    A = steering(th, 7, CFG)
    assert A.shape == (7, 3)
    np.testing.assert_allclose(A[1], [upsilon(t, 1, 2, CFG) for t in th], rtol=1e-14)
    h = np.arange(160) + 0j
    assert np.array_equal(channel_vector(channel_tensor(h, CFG)), h)
    with pytest.raises(ShapeError):
        channel_tensor(np.zeros(10), CFG)

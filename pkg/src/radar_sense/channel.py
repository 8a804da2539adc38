"""Ground-truth scattered channels of a mono-static ULA MIMO radar.

Channel tensors are complex arrays of shape ``(L_max, M_R, M_T)``:
``h[l - 1, m_R - 1, m_T - 1]`` is the effective channel of cluster ``l``
from transmit antenna ``m_T`` to receive antenna ``m_R``. Flattening in C
order gives the stacked vector used by the linear pilot model (cluster
major, then receive antenna, then transmit antenna).
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError, ShapeError
from .scene import ClusterMap, RadarConfig

TWO_PI = 2.0 * np.pi


def _unit_phasor(cycles):
    # Reduce to [0, 1) cycles before exponentiating; d / mu is ~1e3 here.
    return np.exp(-1j * TWO_PI * np.mod(cycles, 1.0))


def path_gain(d, cfg: RadarConfig):
    """Two-way radar-equation attenuation ``mu^2 sigma / (64 pi^3 d^4)``."""
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise DomainError("path gain is defined for d > 0 only")
    g = cfg.mu ** 2 * cfg.sigma_rcs / (64.0 * np.pi ** 3 * d ** 4)
    return g if g.ndim else float(g)


def gamma(d, cfg: RadarConfig):
    """Range-dependent factor of the channel: amplitude and two-way phase."""
    g = np.sqrt(path_gain(d, cfg)) * _unit_phasor(2.0 * np.asarray(d, dtype=float) / cfg.mu)
    return g if np.ndim(g) else complex(g)


def upsilon(theta, m_T, m_R, cfg: RadarConfig):
    """Angle-dependent unit-modulus factor; depends on ``m_T + m_R`` only."""
    u = np.asarray(m_T) + np.asarray(m_R) - 2
    v = _unit_phasor(u * cfg.d_A * np.sin(theta) / cfg.mu)
    return v if np.ndim(v) else complex(v)


def scattered_channel(d, theta, m_T, m_R, cfg: RadarConfig):
    if not (1 <= m_T <= cfg.M_T and 1 <= m_R <= cfg.M_R):
        raise DomainError(f"antenna pair ({m_T}, {m_R}) outside the {cfg.M_T}x{cfg.M_R} array")
    cycles = (2.0 * d + (m_T + m_R - 2) * cfg.d_A * np.sin(theta)) / cfg.mu
    return complex(np.sqrt(path_gain(d, cfg)) * _unit_phasor(cycles))


def steering(theta, n: int, cfg: RadarConfig) -> np.ndarray:
    """Virtual-array response ``upsilon`` for antenna sums u = 0..n-1.

    ``theta`` may be an array; the result has shape ``(n,) + theta.shape``.
    """
    theta = np.asarray(theta, dtype=float)
    u = np.arange(n).reshape((n,) + (1,) * theta.ndim)
    return _unit_phasor(u * cfg.d_A * np.sin(theta) / cfg.mu)


def effective_cluster_channels(cmap: ClusterMap, cfg: RadarConfig) -> np.ndarray:
    """Sum the scattered channels of every target in each range cluster."""
    if cmap.L_max != cfg.L_max:
        raise ShapeError(f"cluster map has L_max={cmap.L_max}, config expects {cfg.L_max}")
    h = np.zeros((cfg.L_max, cfg.M_R, cfg.M_T), dtype=complex)
    m_sum = np.add.outer(np.arange(cfg.M_R), np.arange(cfg.M_T))  # (m_R - 1) + (m_T - 1)
    for l, members in enumerate(cmap.clusters):
        for m in members:
            # gamma * upsilon, evaluated on the whole (M_R, M_T) slice at once
            h[l] += gamma(m.d, cfg) * _unit_phasor(m_sum * cfg.d_A * np.sin(m.theta) / cfg.mu)
    return h


def channel_vector(h: np.ndarray) -> np.ndarray:
    return np.asarray(h).reshape(-1)


def channel_tensor(vec: np.ndarray, cfg: RadarConfig) -> np.ndarray:
    vec = np.asarray(vec)
    want = cfg.L_max * cfg.M_R * cfg.M_T
    if vec.size != want:
        raise ShapeError(f"channel vector has {vec.size} entries, expected {want}")
    return vec.reshape(cfg.L_max, cfg.M_R, cfg.M_T)

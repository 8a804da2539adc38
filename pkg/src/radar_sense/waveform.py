"""OFDM transmit/receive simulation and the pilot-domain linear model.

All DFTs are unitary (``norm="ortho"``), so white time-domain noise keeps
its per-sample variance in every frequency bin.

Receive timing: a cluster-``l`` echo is delayed by ``l`` samples. The radar
opens its FFT window one sample after the end of the cyclic prefix (no echo
can arrive with zero delay), so within the window cluster ``l`` appears as a
circular shift by ``l - 1``. That makes each transmit/receive pair a
circulant whose first column is ``[h_1, ..., h_Lmax, 0, ...]`` and whose
eigenvalues are ``sum_l h_l exp(-2j pi (n-1)(l-1)/N)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, CyclicPrefixError, ShapeError
from .scene import RadarConfig

_QPSK = np.exp(1j * np.pi * (0.25 + 0.5 * np.arange(4)))


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based Philox stream for one trial."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))


def build_pilots(cfg: RadarConfig, stride: int | None = None) -> np.ndarray:
    """Unit-modulus orthogonal pilots, shape ``(N_P, M_T)``.

    Column ``m`` (0-based) is the DFT column of index ``m * stride`` over the
    ``N_P`` pilot bins. The default stride ``N_P // M_T`` spreads the antennas
    evenly in the delay domain. With ``stride=1`` adjacent antennas sit only
    ``N / N_P`` samples apart, which overlaps the echo-delay span and makes
    the measurement matrix singular for ``M_T > 1``.
    """
    if cfg.N_P < cfg.M_T:
        raise ConfigError(f"need N_P >= M_T for orthogonal pilots (N_P={cfg.N_P}, M_T={cfg.M_T})")
    if stride is None:
        stride = cfg.N_P // cfg.M_T
    idx = (np.arange(cfg.M_T) * stride) % cfg.N_P
    if len(set(idx.tolist())) != cfg.M_T:
        raise ConfigError(f"pilot stride {stride} maps two antennas to the same DFT column")
    n = np.arange(cfg.N_P)
    return np.exp(-2j * np.pi * np.mod(np.outer(n, idx), cfg.N_P) / cfg.N_P)


def transmit_symbols(cfg: RadarConfig, pilots: np.ndarray, rng: np.random.Generator | None):
    """Frequency-domain symbols ``(M_T, N)``: pilots first, QPSK data after.

    Data draws come first from ``rng``; without an RNG the data bins are
    filled with the first QPSK point.
    """
    n_data = cfg.N - cfg.N_P
    if rng is None:
        data = np.full((cfg.M_T, n_data), _QPSK[0])
    else:
        data = _QPSK[rng.integers(0, 4, size=(cfg.M_T, n_data))]
    return np.concatenate([pilots.T, data], axis=1)


def ofdm_modulate(freq_samples, cfg: RadarConfig) -> np.ndarray:
    """Radiated samples ``sqrt(p) * [x[N-Q:], x]`` with ``x = W^H s``."""
    s = np.asarray(freq_samples)
    if s.shape[-1] != cfg.N:
        raise ShapeError(f"expected {cfg.N} frequency samples, got {s.shape[-1]}")
    x = np.sqrt(cfg.p) * np.fft.ifft(s, axis=-1, norm="ortho")
    return np.concatenate([x[..., cfg.N - cfg.Q:], x], axis=-1)


def simulate_receive(tx, h: np.ndarray, cfg: RadarConfig,
                     rng: np.random.Generator | None = None) -> np.ndarray:
    """Received window ``(M_R, N)`` after CP removal.

    ``tx`` holds the ``M_T`` radiated signals (CP included). Pass ``rng=None``
    for a noiseless run. Noise is drawn as ``(M_R, N, 2)`` standard normals
    (antenna-major, sample-minor, real part first) scaled to variance
    ``noise_var``.
    """
    tx = np.asarray(tx)
    if tx.shape != (cfg.M_T, cfg.Q + cfg.N):
        raise ShapeError(f"tx must have shape {(cfg.M_T, cfg.Q + cfg.N)}, got {tx.shape}")
    h = np.asarray(h)
    if h.shape != (cfg.L_max, cfg.M_R, cfg.M_T):
        raise ShapeError(f"channel must have shape {(cfg.L_max, cfg.M_R, cfg.M_T)}, got {h.shape}")
    if cfg.Q < cfg.L_max:
        raise CyclicPrefixError(f"Q={cfg.Q} < L_max={cfg.L_max}: echoes would leak across symbols")
    # window sample k (k = 0..N-1) sees tx sample k + 1 - l (post-CP indexing)
    start = cfg.Q + 1 - np.arange(1, cfg.L_max + 1)
    delayed = np.stack([tx[:, s:s + cfg.N] for s in start])  # (L, M_T, N)
    y = np.einsum("lrt,ltn->rn", h, delayed)
    if rng is not None:
        z = rng.standard_normal((cfg.M_R, cfg.N, 2)) @ np.array([1.0, 1j])
        y = y + np.sqrt(cfg.noise_var / 2.0) * z
    return y


def demodulate_pilots(rx, cfg: RadarConfig) -> np.ndarray:
    """Unitary DFT per antenna, keep the pilot bins, stack antenna-major."""
    rx = np.asarray(rx)
    if rx.shape != (cfg.M_R, cfg.N):
        raise ShapeError(f"rx must have shape {(cfg.M_R, cfg.N)}, got {rx.shape}")
    return np.fft.fft(rx, axis=-1, norm="ortho")[:, :cfg.N_P].reshape(-1)


def delay_phases(cfg: RadarConfig) -> np.ndarray:
    """``E[n, l] = exp(-2j pi n l / N)`` over pilot bins and cluster lags (0-based)."""
    nl = np.outer(np.arange(cfg.N_P), np.arange(cfg.L_max))
    return np.exp(-2j * np.pi * np.mod(nl, cfg.N) / cfg.N)


def build_measurement_matrix(pilots: np.ndarray, cfg: RadarConfig) -> np.ndarray:
    """Pilot-domain measurement matrix, ``(N_P M_R, L_max M_R M_T)``.

    Rows are (receive antenna, pilot bin); columns follow the channel
    flattening (cluster, receive antenna, transmit antenna). The matrix is
    block diagonal over receive antennas within each cluster block.
    """
    pilots = np.asarray(pilots)
    if pilots.shape != (cfg.N_P, cfg.M_T):
        raise ShapeError(f"pilots must have shape {(cfg.N_P, cfg.M_T)}, got {pilots.shape}")
    blocks = np.einsum("nt,nl->nlt", pilots, delay_phases(cfg))  # B_l[n, t]
    theta = np.einsum("rs,nlt->rnlst", np.eye(cfg.M_R), blocks)
    return theta.reshape(cfg.N_P * cfg.M_R, cfg.L_max * cfg.M_R * cfg.M_T)


@dataclass
class PilotObservation:
    """One simulated OFDM symbol and its pilot-domain linear model."""

    y_P: np.ndarray
    Theta_P: np.ndarray
    pilots: np.ndarray
    tx: np.ndarray
    rx: np.ndarray


def observe(h: np.ndarray, cfg: RadarConfig, rng: np.random.Generator | None,
            noiseless: bool = False, pilots: np.ndarray | None = None) -> PilotObservation:
    """Modulate, propagate through ``h`` and demodulate one symbol."""
    if pilots is None:
        pilots = build_pilots(cfg)
    tx = ofdm_modulate(transmit_symbols(cfg, pilots, rng), cfg)
    rx = simulate_receive(tx, h, cfg, None if noiseless else rng)
    return PilotObservation(demodulate_pilots(rx, cfg), build_measurement_matrix(pilots, cfg),
                            pilots, tx, rx)


# --- signal dumps ---------------------------------------------------------

def write_signal_dump(path, signals: np.ndarray, seed=None, kind: str = "rx") -> Path:
    """Write little-endian interleaved float64 (re, im), row-major
    ``[antenna][sample]``, plus a ``.json`` sidecar with shape and seed."""
    path = Path(path)
    sig = np.ascontiguousarray(np.asarray(signals, dtype=np.complex128))
    if sig.ndim != 2:
        raise ShapeError("signal dumps are 2-D: [antenna][sample]")
    inter = np.empty(sig.shape + (2,), dtype="<f8")
    inter[..., 0] = sig.real
    inter[..., 1] = sig.imag
    path.write_bytes(inter.tobytes())
    meta = {"kind": kind, "shape": list(sig.shape), "seed": seed,
            "dtype": "float64-le interleaved re,im", "order": "row-major [antenna][sample]"}
    Path(str(path) + ".json").write_text(json.dumps(meta, indent=2) + "\n")
    return path


def read_signal_dump(path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    meta = json.loads(Path(str(path) + ".json").read_text())
    raw = np.frombuffer(path.read_bytes(), dtype="<f8").reshape(tuple(meta["shape"]) + (2,))
    return raw[..., 0] + 1j * raw[..., 1], meta

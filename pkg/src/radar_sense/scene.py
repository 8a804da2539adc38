"""Scenario definition: radar configuration, targets and range clusters.

A target at range ``d`` delays its echo by ``ceil(2 N df d / c0)`` samples.
Targets sharing a delay form one range cluster; cluster ``l`` holds the
targets with ``(l - 1) dd < d <= l dd`` where ``dd = c0 / (2 N df)`` is the
range resolution.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ConfigError, DomainError

C0 = 3.0e8  # m/s; reproduces the 9.7656 m resolution of the reference setup

# Relative slack applied before ceil() so that ranges sitting on a cluster
# boundary (up to rounding) land in the lower cluster.
_CEIL_EPS = 1e-12


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0) * 1e-3


def _ceil_tol(x: float) -> int:
    return int(math.ceil(x * (1.0 - _CEIL_EPS)))


@dataclass(frozen=True)
class RadarConfig:
    """Physical and waveform parameters, all in SI units (angles in rad).

    Attributes
    ----------
    N : int
        Number of OFDM subcarriers.
    delta_f : float
        Subcarrier spacing (Hz).
    N_P : int
        Number of pilot subcarriers (the first ``N_P`` bins).
    Q : int
        Cyclic-prefix length in samples.
    M_T, M_R : int
        Transmit / receive antenna counts of the ULA.
    d_A : float
        Antenna spacing (m).
    mu : float
        Carrier wavelength (m), shared by all subcarriers.
    p : float
        Per-antenna, per-sample transmit power (W).
    noise_psd : float
        One-sided noise power spectral density (W/Hz).
    theta_max : float
        Maximum sensing angle (rad).
    d_max : float
        Maximum detection range (m).
    sigma_rcs : float
        Radar cross section shared by all targets (m^2).
    c0 : float
        Propagation speed (m/s).
    delta_theta : float
        Step of the quantized angle grid (rad).
    """

    N: int
    delta_f: float
    N_P: int
    Q: int
    M_T: int
    M_R: int
    d_A: float
    mu: float
    p: float
    noise_psd: float
    theta_max: float
    d_max: float
    sigma_rcs: float
    c0: float = C0
    delta_theta: float = math.radians(0.25)

    @property
    def sample_rate(self) -> float:
        return self.N * self.delta_f

    @property
    def L_max(self) -> int:
        return _ceil_tol(2.0 * self.d_max * self.N * self.delta_f / self.c0)

    @property
    def noise_var(self) -> float:
        """Per-sample noise variance: PSD times the sampled bandwidth."""
        return self.noise_psd * self.N * self.delta_f

    @property
    def n_virtual(self) -> int:
        return self.M_T + self.M_R - 1

    def with_antennas(self, M: int) -> "RadarConfig":
        return replace(self, M_T=M, M_R=M)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RadarConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)


def config_violations(cfg: RadarConfig) -> list[str]:
    """Return human-readable invariant breaches of ``cfg`` (empty if valid)."""
    out = []
    positive = ["N", "delta_f", "N_P", "Q", "M_T", "M_R", "d_A", "mu", "p",
                "noise_psd", "theta_max", "d_max", "sigma_rcs", "c0", "delta_theta"]
    for name in positive:
        if not getattr(cfg, name) > 0:
            out.append(f"{name} must be strictly positive (got {getattr(cfg, name)!r})")
    if out:
        return out
    if cfg.N_P > cfg.N:
        out.append(f"N_P={cfg.N_P} exceeds N={cfg.N}")
    if cfg.N_P < cfg.M_T:
        out.append(f"N_P={cfg.N_P} < M_T={cfg.M_T}: orthogonal pilots impossible")
    if cfg.theta_max > math.pi / 2 * (1 + 1e-12):
        out.append(f"theta_max={cfg.theta_max:.6g} rad exceeds pi/2 (angle ambiguity)")
    if cfg.d_A > cfg.mu / math.sin(min(cfg.theta_max, math.pi / 2)) * (1 + 1e-12):
        out.append(f"d_A={cfg.d_A:.6g} m exceeds mu/sin(theta_max) (grating ambiguity)")
    if cfg.Q < cfg.L_max:
        out.append(f"Q={cfg.Q} shorter than L_max={cfg.L_max}")
    if cfg.Q > cfg.N:
        out.append(f"Q={cfg.Q} exceeds N={cfg.N}: the prefix copies the last Q samples")
    return out


def ensure_valid(cfg: RadarConfig) -> RadarConfig:
    problems = config_violations(cfg)
    if problems:
        raise ConfigError("; ".join(problems))
    return cfg


def paper_config(M: int = 4, **overrides) -> RadarConfig:
    """The 2.6 GHz, 1024-subcarrier reference setup with ``M_T = M_R = M``."""
    N, delta_f, c0 = 1024, 15e3, C0
    mu = c0 / 2.6e9
    dd = c0 / (2 * N * delta_f)
    base = dict(
        N=N,
        delta_f=delta_f,
        N_P=300,
        Q=72,
        M_T=M,
        M_R=M,
        d_A=0.9 * mu,
        mu=mu,
        p=dbm_to_watt(33.0),
        noise_psd=dbm_to_watt(-169.0),
        theta_max=math.pi / 2,
        d_max=10 * dd,
        sigma_rcs=10 ** 0.7,
        c0=c0,
        delta_theta=math.radians(0.25),
    )
    base.update(overrides)
    return RadarConfig(**base)


@dataclass(frozen=True)
class Target:
    id: int
    d: float
    theta: float


def paper_targets() -> list[Target]:
    """Two pairs of closely spaced targets in clusters 3 and 9."""
    rows = [(1, 22.765, 78.810), (2, 28.170, 83.228), (3, 81.611, 31.903), (4, 86.623, 10.404)]
    return [Target(i, d, math.radians(a)) for i, d, a in rows]


@dataclass(frozen=True)
class ClusterMember:
    d: float
    theta: float
    target_id: int


@dataclass(frozen=True)
class ClusterMap:
    """Targets grouped by echo delay; ``clusters[l - 1]`` is cluster ``l``."""

    L_max: int
    clusters: tuple[tuple[ClusterMember, ...], ...] = field(default=())

    def members(self, l: int) -> tuple[ClusterMember, ...]:
        if not 1 <= l <= self.L_max:
            raise IndexError(f"cluster index {l} outside 1..{self.L_max}")
        return self.clusters[l - 1]

    @property
    def counts(self) -> list[int]:
        return [len(c) for c in self.clusters]

    @property
    def occupied(self) -> list[int]:
        return [l for l, c in enumerate(self.clusters, start=1) if c]

    def cluster_of(self, target_id: int) -> int:
        for l, c in enumerate(self.clusters, start=1):
            if any(m.target_id == target_id for m in c):
                return l
        raise KeyError(target_id)


def range_resolution(cfg: RadarConfig) -> float:
    ensure_valid(cfg)
    return cfg.c0 / (2.0 * cfg.N * cfg.delta_f)


def delay_samples(d: float, cfg: RadarConfig) -> int:
    """Round-trip echo delay of a target at range ``d``, in samples."""
    if not 0.0 < d <= cfg.d_max * (1 + _CEIL_EPS):
        raise DomainError(f"range {d!r} m outside (0, d_max={cfg.d_max:.6g}]")
    return max(1, _ceil_tol(2.0 * cfg.N * cfg.delta_f * d / cfg.c0))


def build_clusters(targets: Iterable[Target], cfg: RadarConfig) -> ClusterMap:
    buckets: list[list[ClusterMember]] = [[] for _ in range(cfg.L_max)]
    for t in targets:
        l = delay_samples(t.d, cfg)
        buckets[l - 1].append(ClusterMember(t.d, t.theta, t.id))
    ordered = tuple(tuple(sorted(b, key=lambda m: (m.theta, m.d))) for b in buckets)
    return ClusterMap(cfg.L_max, ordered)


@dataclass(frozen=True)
class Violation:
    kind: str  # "config" | "target" | "identifiability"
    message: str

    @property
    def is_warning(self) -> bool:
        return self.kind == "identifiability"


def validate_scenario(targets: Sequence[Target], cfg: RadarConfig) -> list[Violation]:
    """Report configuration breaches, out-of-region targets and clusters
    holding more targets than the array can identify. Never raises."""
    report = [Violation("config", msg) for msg in config_violations(cfg)]
    if report:
        return report
    inside = []
    for t in targets:
        if not 0.0 < t.d <= cfg.d_max * (1 + _CEIL_EPS):
            report.append(Violation("target", f"target {t.id}: range {t.d} m outside (0, {cfg.d_max:.6g}]"))
        elif not 0.0 < t.theta <= cfg.theta_max * (1 + 1e-12):
            report.append(Violation(
                "target", f"target {t.id}: angle {math.degrees(t.theta):.4f} deg outside "
                          f"(0, {math.degrees(cfg.theta_max):.4f}]"))
        else:
            inside.append(t)
    k_lim = (cfg.M_T + cfg.M_R - 2) // 2
    cmap = build_clusters(inside, cfg)
    for l, k in enumerate(cmap.counts, start=1):
        if k > k_lim:
            report.append(Violation(
                "identifiability", f"cluster {l} holds {k} targets > K_max={k_lim}"))
    return report


# --- scenario files -------------------------------------------------------

def scenario_to_dict(targets: Sequence[Target], cfg: RadarConfig) -> dict:
    return {
        "config": cfg.to_dict(),
        "targets": [{"id": t.id, "range_m": t.d, "angle_deg": math.degrees(t.theta)}
                    for t in targets],
    }


def scenario_from_dict(data: dict) -> tuple[list[Target], RadarConfig]:
    try:
        cfg = RadarConfig.from_dict(dict(data["config"]))
        targets = [Target(int(t["id"]), float(t["range_m"]), math.radians(float(t["angle_deg"])))
                   for t in data.get("targets", [])]
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed scenario document: {exc}") from exc
    return targets, cfg


def load_scenario(path) -> tuple[list[Target], RadarConfig]:
    with open(path) as fh:
        return scenario_from_dict(json.load(fh))


def save_scenario(path, targets: Sequence[Target], cfg: RadarConfig) -> Path:
    path = Path(path)
    path.write_text(json.dumps(scenario_to_dict(targets, cfg), indent=2) + "\n")
    return path

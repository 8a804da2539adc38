"""Per-cluster target counting and localization on a quantized angle grid.

Within one range cluster the ``M_R x M_T`` channel slice only depends on
the antenna sum ``m_T + m_R``, so it collapses to a virtual array of
``M_T + M_R - 1`` samples::

    h_M[u] = sum_i Gamma_i * exp(-2j pi u d_A sin(theta_i) / mu),  u = 0..U-1

For a fixed tuple of grid angles the gains ``Gamma`` follow from linear
least squares; the angles come from exhaustive search over strictly
increasing grid tuples, the target count from comparing the best residual
of each hypothesised count, and each range from ``|Gamma|`` alone.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import NamedTuple

import numpy as np

from .channel import steering
from .errors import DomainError, IllConditionedError, ShapeError
from .scene import RadarConfig

COND_LIMIT = 1e12
_VERIFY_TOP = 16


def k_max(cfg: RadarConfig) -> int:
    """Largest per-cluster target count with a unique solution."""
    return (cfg.M_T + cfg.M_R - 2) // 2


def default_max_order(cfg: RadarConfig) -> int:
    """Largest target count searched by default: ``k_max``, but never below 1.

    A single-antenna radar (``k_max = 0``) still gets a one-target fit; the
    result is flagged as not identifiable. Pass ``StageTwoOptions.max_order``
    to search further.
    """
    return max(1, k_max(cfg))


def angle_grid(cfg: RadarConfig) -> np.ndarray:
    """Grid ``delta_theta, 2 delta_theta, ..., theta_max`` (0 excluded)."""
    n = round(cfg.theta_max / cfg.delta_theta)
    if n < 1 or abs(n * cfg.delta_theta - cfg.theta_max) > 1e-9 * cfg.theta_max:
        raise DomainError(f"delta_theta={cfg.delta_theta!r} does not divide theta_max={cfg.theta_max!r}")
    return cfg.delta_theta * np.arange(1, n + 1)


def collapse_to_virtual_array(h_cluster, cfg: RadarConfig) -> np.ndarray:
    """Average the slice over each antenna-sum class (length ``M_T + M_R - 1``)."""
    h = np.asarray(h_cluster)
    if h.shape != (cfg.M_R, cfg.M_T):
        raise ShapeError(f"cluster slice must have shape {(cfg.M_R, cfg.M_T)}, got {h.shape}")
    U = cfg.n_virtual
    u = np.add.outer(np.arange(cfg.M_R), np.arange(cfg.M_T)).ravel()
    sums = np.bincount(u, weights=h.real.ravel(), minlength=U) \
        + 1j * np.bincount(u, weights=h.imag.ravel(), minlength=U)
    return sums / np.bincount(u, minlength=U)


class AngleFit(NamedTuple):
    gammas: np.ndarray
    residual: float
    ill_conditioned: bool


def solve_fixed_angles(h_M, angles, cfg: RadarConfig) -> AngleFit:
    """Closed-form least-squares gains for a fixed angle tuple.

    A Gram matrix with condition number above ``1e12`` rejects the tuple:
    the fit comes back with NaN gains, infinite residual and
    ``ill_conditioned=True``.
    """
    h_M = np.asarray(h_M, dtype=complex)
    angles = np.atleast_1d(np.asarray(angles, dtype=float))
    K = angles.size
    if not 1 <= K <= h_M.size:
        raise DomainError(f"need 1 <= K <= {h_M.size} angles, got {K}")
    A = steering(angles, h_M.size, cfg)  # (U, K)
    G = A.conj().T @ A
    if not np.isfinite(np.linalg.cond(G)) or np.linalg.cond(G) > COND_LIMIT:
        return AngleFit(np.full(K, np.nan + 0j), math.inf, True)
    # same minimizer as the normal equations, without squaring cond(A)
    g = np.linalg.lstsq(A, h_M, rcond=None)[0]
    r = A @ g - h_M
    return AngleFit(g, float(np.vdot(r, r).real), False)


@dataclass
class GridResult:
    indices: tuple
    angles: np.ndarray
    gammas: np.ndarray
    phi: float


class _TopK:
    """Keep the ``k`` smallest (claimed residual, tuple) pairs."""

    def __init__(self, k):
        self.k = k
        self.heap = []  # max-heap via negation

    def push_many(self, resid, tuples):
        if resid.size == 0:
            return
        take = min(self.k, resid.size)
        kth = np.partition(resid, take - 1)[take - 1]
        cand = np.flatnonzero(resid <= kth)  # tuples arrive in lexicographic order
        idx = cand[np.argsort(resid[cand], kind="stable")[:take]]
        for i in idx:
            r = float(resid[i])
            if not np.isfinite(r):
                continue
            item = (-r, tuple(-int(v) for v in tuples[i]))
            if len(self.heap) < self.k:
                heapq.heappush(self.heap, item)
            elif item > self.heap[0]:
                heapq.heapreplace(self.heap, item)

    def items(self):
        return [(-r, tuple(-v for v in t)) for r, t in self.heap]


def _pair_scan(Gs, cs, hh, idx, piv_lo, piv_hi, prefix, top):
    """Score every pair ``j < k`` drawn from ``idx`` on top of ``prefix``.

    ``Gs``/``cs``/``hh`` are the Gram matrix, correlations and energy after
    projecting out the prefix atoms (Schur complements).
    """
    n = idx.size
    if n < 2:
        return
    j, k = np.triu_indices(n, 1)
    d = Gs.diagonal().real
    dj = d[j]
    gjk = Gs[j, k]
    p2 = d[k] - np.abs(gjk) ** 2 / dj
    ck = cs[k] - np.conj(gjk) * cs[j] / dj
    with np.errstate(divide="ignore", invalid="ignore"):
        resid = hh - np.abs(cs[j]) ** 2 / dj - np.abs(ck) ** 2 / p2
    lo = np.minimum(np.minimum(piv_lo, dj), p2)
    hi = np.maximum(np.maximum(piv_hi, dj), p2)
    bad = (lo <= 0) | (hi > COND_LIMIT * lo)
    resid = np.where(bad, np.inf, resid)
    tuples = np.column_stack([np.broadcast_to(np.array(prefix, dtype=int), (j.size, len(prefix))),
                              idx[j], idx[k]]) if prefix else np.column_stack([idx[j], idx[k]])
    top.push_many(resid, tuples)


def _scan(Gs, cs, hh, idx, depth, prefix, piv_lo, piv_hi, top):
    if depth == 2:
        _pair_scan(Gs, cs, hh, idx, piv_lo, piv_hi, prefix, top)
        return
    for a in range(idx.size - depth + 1):
        piv = Gs[a, a].real
        if piv <= 0:
            continue
        lo, hi = min(piv_lo, piv), max(piv_hi, piv)
        if hi > COND_LIMIT * lo:
            continue
        rest = slice(a + 1, None)
        col = Gs[rest, a]
        G2 = Gs[rest, rest] - np.outer(col, col.conj()) / piv
        c2 = cs[rest] - col * cs[a] / piv
        h2 = hh - abs(cs[a]) ** 2 / piv
        _scan(G2, c2, h2, idx[rest], depth - 1, prefix + (int(idx[a]),), lo, hi, top)


def grid_search(h_M, K: int, cfg: RadarConfig, grid: np.ndarray | None = None) -> GridResult:
    """Best ``K``-tuple of strictly increasing grid angles for ``h_M``.

    All tuples are scored with Schur-complement updates; the most promising
    candidates are then re-solved exactly, and ties go to the
    lexicographically smallest tuple.
    """
    h_M = np.asarray(h_M, dtype=complex)
    if K < 1:
        raise DomainError("K must be >= 1")
    if grid is None:
        grid = angle_grid(cfg)
    n = grid.size
    if K > n:
        raise DomainError(f"K={K} exceeds the {n} grid angles")
    A = steering(grid, h_M.size, cfg)
    G = A.conj().T @ A
    c = A.conj().T @ h_M
    hh = float(np.vdot(h_M, h_M).real)
    top = _TopK(_VERIFY_TOP)
    idx = np.arange(n)
    if K == 1:
        d = G.diagonal().real
        with np.errstate(divide="ignore", invalid="ignore"):
            resid = np.where(d > 0, hh - np.abs(c) ** 2 / d, np.inf)
        top.push_many(resid, idx[:, None])
    else:
        _scan(G, c, hh, idx, K, (), math.inf, 0.0, top)

    best = None
    for _, tup in sorted(top.items()):
        fit = solve_fixed_angles(h_M, grid[list(tup)], cfg)
        if fit.ill_conditioned:
            continue
        key = (fit.residual, tup)
        if best is None or key < best[0]:
            best = (key, fit)
    if best is None:
        raise IllConditionedError(f"no well-conditioned {K}-tuple on the angle grid")
    (phi, tup), fit = best
    return GridResult(tup, grid[list(tup)], fit.gammas, phi)


def brute_force_grid_search(h_M, K: int, cfg: RadarConfig, grid: np.ndarray | None = None,
                            order=None) -> GridResult:
    """Reference enumeration with ``solve_fixed_angles`` on every tuple.

    ``order`` may permute the enumeration; ties still resolve to the
    lexicographically smallest tuple. Only practical on coarse grids.
    """
    if grid is None:
        grid = angle_grid(cfg)
    tuples = list(combinations(range(grid.size), K))
    if order is not None:
        tuples = [tuples[i] for i in order]
    best = None
    for t in tuples:
        fit = solve_fixed_angles(h_M, grid[list(t)], cfg)
        if fit.ill_conditioned:
            continue
        key = (fit.residual, t)
        if best is None or key < best[0]:
            best = (key, fit)
    if best is None:
        raise IllConditionedError(f"no well-conditioned {K}-tuple on the angle grid")
    (phi, t), fit = best
    return GridResult(t, grid[list(t)], fit.gammas, phi)


def range_from_gamma(gamma_star, cfg: RadarConfig):
    """Invert the path-gain law: ``(mu^2 sigma / (64 pi^3 |Gamma|^2))^(1/4)``."""
    mag2 = np.abs(np.asarray(gamma_star)) ** 2
    if np.any(mag2 == 0) or not np.all(np.isfinite(mag2)):
        raise DomainError("range is undefined for a zero or non-finite gain")
    d = (cfg.mu ** 2 * cfg.sigma_rcs / (64.0 * np.pi ** 3 * mag2)) ** 0.25
    return d if d.ndim else float(d)


@dataclass(frozen=True)
class StageTwoOptions:
    """Model-order controls.

    ``order_penalty`` adds ``beta * K`` to the residual before picking the
    target count. When it is ``None`` the penalty is
    ``penalty_scale * channel_noise_var``, floored at
    ``tie_rtol * ||h_M||^2`` so that exact fits with spare atoms resolve to
    the smaller count. Setting ``order_penalty=0`` and ``tie_rtol=0``
    gives the unpenalized argmin.
    """

    max_order: int | None = None
    order_penalty: float | None = None
    penalty_scale: float = 50.0
    tie_rtol: float = 1e-12
    zero_threshold: float = 0.0


@dataclass
class ClusterEstimate:
    cluster_index: int
    K_star: int
    angles: np.ndarray = field(default_factory=lambda: np.zeros(0))
    gammas: np.ndarray = field(default_factory=lambda: np.zeros(0, complex))
    ranges: np.ndarray = field(default_factory=lambda: np.zeros(0))
    residual: float = 0.0
    identifiable: bool = True
    phi: dict = field(default_factory=dict)
    penalty: float = 0.0

    def to_dict(self) -> dict:
        return {
            "cluster_index": self.cluster_index,
            "K_star": self.K_star,
            "angles_deg": [math.degrees(a) for a in self.angles],
            "gammas": [[float(g.real), float(g.imag)] for g in self.gammas],
            "ranges_m": [float(d) for d in self.ranges],
            "residual": float(self.residual),
            "identifiable": bool(self.identifiable),
            "phi": {str(k): float(v) for k, v in self.phi.items()},
            "penalty": float(self.penalty),
        }


def estimate_cluster(h_cluster, l: int, cfg: RadarConfig, opts: StageTwoOptions | None = None,
                     channel_noise_var: float = 0.0) -> ClusterEstimate:
    """Count and locate the targets of cluster ``l`` from its channel slice.

    ``channel_noise_var`` is the per-entry variance of the estimated slice
    and scales the default model-order penalty.
    """
    opts = opts or StageTwoOptions()
    h_cluster = np.asarray(h_cluster)
    km = k_max(cfg)
    if np.linalg.norm(h_cluster) <= opts.zero_threshold:
        return ClusterEstimate(l, 0, identifiable=km >= 1)
    h_M = collapse_to_virtual_array(h_cluster, cfg)
    hh = float(np.vdot(h_M, h_M).real)
    k_top = opts.max_order if opts.max_order is not None else default_max_order(cfg)
    if opts.order_penalty is not None:
        beta = opts.order_penalty
    else:
        beta = opts.penalty_scale * channel_noise_var
    beta = max(beta, opts.tie_rtol * hh)

    grid = angle_grid(cfg)
    fits = {}
    for K in range(1, k_top + 1):
        try:
            fits[K] = grid_search(h_M, K, cfg, grid)
        except IllConditionedError:
            break
    if not fits:
        raise IllConditionedError(f"cluster {l}: no feasible angle tuple for any target count")
    K_star = min(fits, key=lambda K: (fits[K].phi + beta * K, K))
    best = fits[K_star]
    return ClusterEstimate(
        cluster_index=l,
        K_star=K_star,
        angles=best.angles,
        gammas=best.gammas,
        ranges=np.atleast_1d(range_from_gamma(best.gammas, cfg)),
        residual=best.phi,
        identifiable=km >= 1,
        phi={K: f.phi for K, f in fits.items()},
        penalty=beta,
    )

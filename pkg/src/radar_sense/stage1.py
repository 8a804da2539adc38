"""Block-sparse channel recovery by group LASSO.

Solves::

    minimize_h  0.5 * ||y - sqrt(p) Theta h||^2 + rho * sum_l ||h_l||_2

where ``h_l`` is the ``M_R * M_T`` block of cluster ``l``. The solver is
cyclic block coordinate descent on the Gram form of the problem. With
orthogonal pilots every cluster block of the measurement matrix has
orthogonal, equal-norm columns, so each block update is an exact group
soft-threshold; otherwise a few proximal-gradient steps with step ``1/L``
are taken per block.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DomainError, RankDeficientError, ShapeError
from .scene import RadarConfig

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GroupLassoOptions:
    rho: float = 0.0
    max_iters: int = 20000
    tol: float = 1e-15
    kkt_tol: float = 1e-9  # early stop once the certificate is below kkt_tol * rho
    support_threshold: float = 1e-3  # relative to the largest group norm
    inner_iters: int = 20
    trace: bool = False
    polish: bool = True  # Newton refinement on the active set when BCD stalls
    polish_every: int = 200

    def __post_init__(self):
        if not self.rho >= 0:
            raise DomainError(f"rho must be >= 0 (got {self.rho})")
        if not self.tol > 0:
            raise DomainError("tol must be > 0")
        if self.max_iters < 1:
            raise DomainError("max_iters must be >= 1")


@dataclass
class StageOneResult:
    h_hat: np.ndarray            # (L_max, M_R, M_T)
    objective: float
    group_norms: np.ndarray      # (L_max,)
    support: frozenset
    iterations: int
    kkt_residual: float
    rho: float
    converged: bool
    trace: list = field(default_factory=list)


def group_soft_threshold(v, t: float) -> np.ndarray:
    """Proximal map of ``t * ||.||_2``: shrink ``v`` radially by ``t``."""
    if t < 0:
        raise DomainError("threshold must be >= 0")
    v = np.asarray(v)
    nrm = math.sqrt(float(np.vdot(v, v).real))
    if nrm <= t:
        return np.zeros_like(v)
    return (1.0 - t / nrm) * v


def _power_norm2(A: np.ndarray, iters: int = 50) -> float:
    """Squared spectral norm by power iteration on ``A^H A``."""
    rng = np.random.default_rng(0)
    x = rng.standard_normal(A.shape[1]) + 0j
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(iters):
        w = A.conj().T @ (A @ x)
        lam = np.linalg.norm(w)
        if lam == 0:
            return 0.0
        x = w / lam
    return float(lam)


class _Problem:
    """Group-LASSO data in normalized units.

    The effective matrix ``A = sqrt(p) Theta`` is scaled to unit average
    column norm and ``y`` to unit norm; ``scale_h`` maps normalized
    coefficients back to channel units and ``scale_obj`` the objective.
    """

    def __init__(self, y_P, Theta_P, cfg: RadarConfig):
        y = np.asarray(y_P, dtype=complex).reshape(-1)
        A = np.sqrt(cfg.p) * np.asarray(Theta_P, dtype=complex)
        gsize = cfg.M_R * cfg.M_T
        if A.shape != (y.size, cfg.L_max * gsize):
            raise ShapeError(f"Theta_P shape {A.shape} inconsistent with y ({y.size}) and config")
        self.cfg = cfg
        self.L, self.g = cfg.L_max, gsize
        self.s_a = float(np.sqrt(np.mean(np.sum(np.abs(A) ** 2, axis=0)))) or 1.0
        self.s_y = float(np.linalg.norm(y)) or 1.0
        self.A = A / self.s_a
        self.y = y / self.s_y
        self.G = self.A.conj().T @ self.A
        self.c = self.A.conj().T @ self.y
        self.yy = float(np.vdot(self.y, self.y).real)
        self.scale_h = self.s_y / self.s_a
        self.scale_obj = self.s_y ** 2
        self.blocks = [slice(l * gsize, (l + 1) * gsize) for l in range(self.L)]
        self.exact = []
        self.lip = []
        for b in self.blocks:
            Gb = self.G[b, b]
            d = np.real(np.diag(Gb))
            off = Gb - np.diag(np.diag(Gb))
            ortho = d.min() > 0 and np.abs(off).max(initial=0.0) <= 1e-10 * d.max() \
                and np.ptp(d) <= 1e-10 * d.max()
            self.exact.append(ortho)
            self.lip.append(float(d[0]) if ortho else _power_norm2(self.A[:, b]))

    def rho_hat(self, rho: float) -> float:
        return rho / (self.s_y * self.s_a)

    def objective(self, x, rho_hat):
        r = self.y - self.A @ x
        pen = sum(np.linalg.norm(x[b]) for b in self.blocks)
        return 0.5 * float(np.vdot(r, r).real) + rho_hat * pen

    def kkt(self, x, rho_hat):
        grad = self.G @ x - self.c
        worst = 0.0
        for b in self.blocks:
            xb, gb = x[b], grad[b]
            nx = np.linalg.norm(xb)
            if nx > 0:
                worst = max(worst, np.linalg.norm(gb + rho_hat * xb / nx))
            else:
                worst = max(worst, np.linalg.norm(gb) - rho_hat)
        return max(worst, 0.0)


def rho_max(y_P, Theta_P, cfg: RadarConfig) -> float:
    """Smallest ``rho`` for which the all-zero channel is optimal."""
    y = np.asarray(y_P).reshape(-1)
    grad = (np.sqrt(cfg.p) * np.asarray(Theta_P)).conj().T @ y
    gs = cfg.M_R * cfg.M_T
    return float(max(np.linalg.norm(grad[l * gs:(l + 1) * gs]) for l in range(cfg.L_max)))


def _norms(h: np.ndarray) -> np.ndarray:
    return np.linalg.norm(h.reshape(h.shape[0], -1), axis=1)


def detect_support(result: StageOneResult, cfg: RadarConfig | None = None,
                   threshold: float | None = None) -> frozenset:
    """Clusters whose estimated block norm exceeds ``threshold``.

    The default threshold is ``1e-3`` times the largest block norm.
    """
    norms = np.asarray(result.group_norms)
    top = float(norms.max(initial=0.0))
    if top == 0.0:
        return frozenset()
    if threshold is None:
        threshold = 1e-3 * top
    return frozenset(int(l) + 1 for l in np.flatnonzero(norms > threshold))


def _bcd(prob: _Problem, rho_hat: float, x: np.ndarray, opts: GroupLassoOptions):
    f = prob.objective(x, rho_hat)
    grad = prob.G @ x - prob.c  # maintained incrementally
    trace = []
    it = 0
    converged_by_tol = False
    for it in range(1, opts.max_iters + 1):
        for b, exact, lip in zip(prob.blocks, prob.exact, prob.lip):
            old = x[b].copy()
            if exact:
                # block Hessian is lip * I: closed-form minimizer
                z = old - grad[b] / lip
                new = group_soft_threshold(z, rho_hat / lip)
            else:
                new = old
                g_loc = grad[b]
                Gbb = prob.G[b, b]
                for _ in range(opts.inner_iters):
                    nxt = group_soft_threshold(new - g_loc / lip, rho_hat / lip)
                    step = nxt - new
                    if not np.any(step):
                        break
                    g_loc = g_loc + Gbb @ step
                    new = nxt
            delta = new - old
            if np.any(delta):
                x[b] = new
                grad += prob.G[:, b] @ delta
        f_new = prob.objective(x, rho_hat)
        if f_new > f + 1e-12 * f + 1e-15 * prob.yy:
            raise AssertionError(f"objective increased at sweep {it}: {f} -> {f_new}")
        if opts.trace:
            trace.append((it, f_new * prob.scale_obj,
                          float(max(np.linalg.norm(x[b]) for b in prob.blocks)) * prob.scale_h,
                          prob.kkt(x, rho_hat) * prob.s_y * prob.s_a))
        decrease = f - f_new
        f = f_new
        if decrease <= opts.tol * max(abs(f), 1e-300):
            converged_by_tol = True
            break
        if rho_hat > 0 and prob.kkt(x, rho_hat) <= opts.kkt_tol * rho_hat:
            converged_by_tol = True
            break
    return x, f, it, converged_by_tol, trace


def _polish(prob: _Problem, x: np.ndarray, rho_hat: float, target: float,
            max_newton: int = 40) -> np.ndarray:
    """Damped Newton on the groups that are currently nonzero.

    On a fixed active set the objective is smooth, so Newton converges
    where coordinate descent crawls (adjacent delay lags are strongly
    coherent). Groups that collapse toward zero leave the active set.
    """
    x = x.copy()
    g = prob.g
    for _ in range(3):
        act = [i for i, b in enumerate(prob.blocks) if np.any(x[b])]
        if not act:
            return x
        cols = np.concatenate([np.arange(i * g, (i + 1) * g) for i in act])
        n = cols.size
        Aa = prob.A[:, cols]
        Gaa = prob.G[np.ix_(cols, cols)]
        ca = prob.c[cols]
        H0 = np.block([[Gaa.real, -Gaa.imag], [Gaa.imag, Gaa.real]])
        ridx = [np.r_[j * g:(j + 1) * g, n + j * g:n + (j + 1) * g] for j in range(len(act))]

        def f_act(v):
            r = prob.y - Aa @ v
            return 0.5 * float(np.vdot(r, r).real) + rho_hat * sum(
                np.linalg.norm(v[j * g:(j + 1) * g]) for j in range(len(act)))

        xa = x[cols]
        dropped = False
        for _ in range(max_newton):
            ga = Gaa @ xa - ca
            grad = np.concatenate([ga.real, ga.imag])
            H = H0.copy()
            for j, ri in enumerate(ridx):
                v = xa[j * g:(j + 1) * g]
                nv = np.linalg.norm(v)
                u = np.concatenate([v.real, v.imag]) / nv
                grad[ri] += rho_hat * u
                H[np.ix_(ri, ri)] += rho_hat / nv * (np.eye(2 * g) - np.outer(u, u))
            if max(np.linalg.norm(grad[ri]) for ri in ridx) <= target:
                break
            try:
                d = np.linalg.solve(H, -grad)
            except np.linalg.LinAlgError:
                break
            dc = d[:n] + 1j * d[n:]
            f0, slope, t = f_act(xa), float(grad @ d), 1.0
            if slope >= 0:
                break
            while t > 1e-12 and f_act(xa + t * dc) > f0 + 1e-4 * t * slope:
                t *= 0.5
            if t <= 1e-12:
                break
            xa = xa + t * dc
            norms = np.array([np.linalg.norm(xa[j * g:(j + 1) * g]) for j in range(len(act))])
            small = norms <= 1e-9 * norms.max()
            if np.any(small):
                for j in np.flatnonzero(small):
                    xa[j * g:(j + 1) * g] = 0
                dropped = True
                break
        x[cols] = xa
        if not dropped:
            break
    return x


def _solve(prob: _Problem, opts: GroupLassoOptions, warm: np.ndarray | None) -> StageOneResult:
    rho_hat = prob.rho_hat(opts.rho)
    x = np.zeros(prob.L * prob.g, complex) if warm is None else warm.reshape(-1) / prob.scale_h
    x = x.astype(complex, copy=True)
    if rho_hat >= (1 - 1e-12) * max(np.linalg.norm(prob.c[b]) for b in prob.blocks):
        # zero satisfies the optimality conditions (to 1e-12 rho)
        x[:] = 0
        f, iters, stopped, trace = prob.objective(x, rho_hat), 0, True, []
    elif not opts.polish:
        x, f, iters, stopped, trace = _bcd(prob, rho_hat, x, opts)
    else:
        target = opts.kkt_tol * rho_hat
        iters, trace, stopped = 0, [], False
        while iters < opts.max_iters:
            chunk = replace(opts, max_iters=min(opts.polish_every, opts.max_iters - iters))
            x, f, it, stopped, tr = _bcd(prob, rho_hat, x, chunk)
            trace += [(r[0] + iters,) + tuple(r[1:]) for r in tr]
            iters += it
            k = prob.kkt(x, rho_hat)
            if k <= target:
                stopped = True
                break
            xp = _polish(prob, x, rho_hat, 0.1 * target)
            fp, kp = prob.objective(xp, rho_hat), prob.kkt(xp, rho_hat)
            if fp <= f + 1e-15 * prob.yy and kp < k:
                x, f, k = xp, min(fp, f), kp
                if opts.trace:
                    trace.append((iters, f * prob.scale_obj,
                                  float(max(np.linalg.norm(x[b]) for b in prob.blocks)) * prob.scale_h,
                                  k * prob.s_y * prob.s_a))
            if k <= target:
                stopped = True
                break
            if stopped:
                break  # relative decrease below tol and polishing cannot improve
    kkt = prob.kkt(x, rho_hat) * prob.s_y * prob.s_a
    h = (x * prob.scale_h).reshape(prob.L, prob.cfg.M_R, prob.cfg.M_T)
    norms = _norms(h)
    if not stopped:
        log.info("group lasso: rho=%.3g hit max_iters=%d, kkt=%.3g", opts.rho, iters, kkt)
    top = float(norms.max(initial=0.0))
    support = frozenset(int(l) + 1 for l in np.flatnonzero(norms > opts.support_threshold * top)) \
        if top > 0 else frozenset()
    return StageOneResult(h, f * prob.scale_obj, norms, support, iters, kkt, opts.rho, stopped, trace)


def group_lasso_solve(y_P, Theta_P, cfg: RadarConfig, opts: GroupLassoOptions,
                      warm_start: np.ndarray | None = None) -> StageOneResult:
    """Minimize the group-LASSO objective by block coordinate descent.

    ``warm_start`` is an initial channel tensor. Non-convergence within
    ``max_iters`` is reported through ``result.converged``.
    """
    return _solve(_Problem(y_P, Theta_P, cfg), opts, warm_start)


def refit_support(y_P, Theta_P, support, cfg: RadarConfig) -> np.ndarray:
    """Unpenalized least squares on the columns of the supported clusters."""
    h = np.zeros((cfg.L_max, cfg.M_R, cfg.M_T), complex)
    support = sorted(int(l) for l in support)
    if not support:
        return h
    gs = cfg.M_R * cfg.M_T
    cols = np.concatenate([np.arange((l - 1) * gs, l * gs) for l in support])
    A = np.sqrt(cfg.p) * np.asarray(Theta_P)[:, cols]
    y = np.asarray(y_P).reshape(-1)
    sol, _, rank, sv = np.linalg.lstsq(A, y, rcond=None)
    if rank < A.shape[1] or sv[-1] <= sv[0] * 1e-12:
        # name the clusters whose columns carry the deficient directions
        _, _, vh = np.linalg.svd(A, full_matrices=False)
        weak = np.abs(vh[sv <= sv[0] * 1e-12].conj().T) if np.any(sv <= sv[0] * 1e-12) else \
            np.abs(vh[-1:].conj().T)
        bad = sorted({support[i // gs] for i in np.flatnonzero(weak.max(axis=1) > 1e-6)})
        raise RankDeficientError(f"restricted system is rank deficient; clusters {bad}", bad)
    flat = h.reshape(-1)
    flat[cols] = sol
    return h


def refit_residual(y_P, Theta_P, support, cfg: RadarConfig) -> tuple[float, np.ndarray]:
    h = refit_support(y_P, Theta_P, support, cfg)
    r = np.asarray(y_P).reshape(-1) - np.sqrt(cfg.p) * np.asarray(Theta_P) @ h.reshape(-1)
    return float(np.linalg.norm(r)), h


def default_rho_grid(y_P, Theta_P, cfg: RadarConfig, n: int = 12) -> np.ndarray:
    top = rho_max(y_P, Theta_P, cfg)
    if top == 0.0:
        return np.zeros(1)  # y orthogonal to every group: h = 0 at any rho
    return np.geomspace(1e-3 * top, top, n)


@dataclass
class RhoPath:
    rhos: np.ndarray
    results: list
    supports: list
    refit_residuals: np.ndarray
    selected: int
    h_refit: np.ndarray
    noise_var: float  # residual-based estimate of the per-sample noise variance

    @property
    def rho(self) -> float:
        return float(self.rhos[self.selected])

    @property
    def result(self) -> StageOneResult:
        return self.results[self.selected]

    @property
    def support(self) -> frozenset:
        return self.supports[self.selected]


def rho_sweep(y_P, Theta_P, cfg: RadarConfig, rho_grid=None,
              opts: GroupLassoOptions | None = None, residual_factor: float = 1.5,
              warm_start: bool = True, workers: int = 1) -> RhoPath:
    """Solve along ``rho_grid`` (ascending) and pick a regularization level.

    The selected point is the largest ``rho`` whose refit residual (least
    squares restricted to the detected support) stays within
    ``residual_factor`` of the smallest refit residual on the path.
    ``warm_start=False`` solves the points independently, optionally on
    ``workers`` threads.
    """
    if rho_grid is None:
        rho_grid = default_rho_grid(y_P, Theta_P, cfg)
    rhos = np.asarray(rho_grid, dtype=float)
    if rhos.size == 0:
        raise DomainError("rho grid is empty")
    if np.any(np.diff(rhos) < 0):
        raise DomainError("rho grid must be ascending")
    opts = opts or GroupLassoOptions()
    prob = _Problem(y_P, Theta_P, cfg)
    if warm_start:
        results, prev = [], None
        for r in rhos:
            res = _solve(prob, replace(opts, rho=float(r)), prev)
            results.append(res)
            prev = res.h_hat
    else:
        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            results = list(pool.map(lambda r: _solve(prob, replace(opts, rho=float(r)), None), rhos))

    supports, resid, fits = [], [], []
    for res in results:
        sup = res.support
        try:
            rr, hf = refit_residual(y_P, Theta_P, sup, cfg)
        except RankDeficientError:
            rr, hf = np.inf, None
        supports.append(sup)
        resid.append(rr)
        fits.append(hf)
    resid = np.asarray(resid)
    best = resid.min()
    ok = np.flatnonzero(resid <= residual_factor * best)
    sel = int(ok.max())
    n_obs = np.asarray(y_P).size
    dof = len(supports[sel]) * cfg.M_R * cfg.M_T
    noise_var = float(resid[sel] ** 2 / max(n_obs - dof, 1))
    return RhoPath(rhos, results, supports, resid, sel, fits[sel], noise_var)


def write_trace(path, result: StageOneResult) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "objective", "max_group_norm", "kkt_residual"])
        for row in result.trace:
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
    return path

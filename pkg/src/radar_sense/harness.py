"""Experiment orchestration: seeded trials, Monte-Carlo summaries, exports."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import permutations
from pathlib import Path
from typing import Sequence

import numpy as np

from . import stage1, stage2
from .channel import effective_cluster_channels
from .scene import RadarConfig, Target, build_clusters, paper_config, paper_targets, range_resolution
from .stage2 import ClusterEstimate, StageTwoOptions
from .waveform import observe, make_rng

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
RANGE_HEADER = ["Target", "RealRange_m", "Est_m", "Err_m"]
ANGLE_HEADER = ["Target", "RealAngle_deg", "Est_deg", "Err_deg"]


@dataclass
class Match:
    target_id: int
    cluster: int
    estimate_index: int
    true_range: float
    true_angle_deg: float
    est_range: float
    est_angle_deg: float
    range_error: float
    angle_error: float


@dataclass
class TrialReport:
    seed: int
    scenario_id: str
    M_T: int
    M_R: int
    noiseless: bool
    true_support: list
    support: list = field(default_factory=list)
    group_norms: list = field(default_factory=list)
    kkt_residual: float = 0.0
    rho: float = 0.0
    noise_var_est: float = 0.0
    clusters: list = field(default_factory=list)  # ClusterEstimate
    matches: list = field(default_factory=list)   # Match
    timing_ms: dict = field(default_factory=dict)
    failed: bool = False
    error: str | None = None

    def match_for(self, target_id: int) -> Match | None:
        return next((m for m in self.matches if m.target_id == target_id), None)

    def cluster(self, l: int) -> ClusterEstimate | None:
        return next((c for c in self.clusters if c.cluster_index == l), None)

    def to_dict(self, include_timing: bool = True) -> dict:
        d = {
            "schema_version": SCHEMA_VERSION,
            "kind": "trial_report",
            "seed": self.seed,
            "scenario_id": self.scenario_id,
            "M_T": self.M_T,
            "M_R": self.M_R,
            "noiseless": self.noiseless,
            "true_support": list(self.true_support),
            "stage1": {
                "support": list(self.support),
                "group_norms": [float(v) for v in self.group_norms],
                "kkt_residual": float(self.kkt_residual),
                "rho": float(self.rho),
                "noise_var_est": float(self.noise_var_est),
            },
            "clusters": [c.to_dict() for c in self.clusters],
            "matches": [vars(m).copy() for m in self.matches],
            "failed": self.failed,
            "error": self.error,
        }
        if include_timing:
            d["timing_ms"] = dict(self.timing_ms)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrialReport":
        s1 = d["stage1"]
        clusters = [ClusterEstimate(
            cluster_index=c["cluster_index"], K_star=c["K_star"],
            angles=np.radians(c["angles_deg"]),
            gammas=np.array([complex(re, im) for re, im in c["gammas"]], dtype=complex),
            ranges=np.array(c["ranges_m"], dtype=float), residual=c["residual"],
            identifiable=c["identifiable"], phi={int(k): v for k, v in c["phi"].items()},
            penalty=c["penalty"]) for c in d["clusters"]]
        return cls(
            seed=d["seed"], scenario_id=d["scenario_id"], M_T=d["M_T"], M_R=d["M_R"],
            noiseless=d["noiseless"], true_support=list(d["true_support"]),
            support=list(s1["support"]), group_norms=list(s1["group_norms"]),
            kkt_residual=s1["kkt_residual"], rho=s1["rho"], noise_var_est=s1["noise_var_est"],
            clusters=clusters, matches=[Match(**m) for m in d["matches"]],
            timing_ms=dict(d.get("timing_ms", {})), failed=d["failed"], error=d["error"])

    def to_json(self, include_timing: bool = True) -> str:
        return json.dumps(self.to_dict(include_timing), sort_keys=True)


def _channel_noise_var(Theta_P, support, cfg: RadarConfig, noise_var: float) -> float:
    """Mean per-entry variance of the least-squares channel refit."""
    if not support:
        return 0.0
    gs = cfg.M_R * cfg.M_T
    cols = np.concatenate([np.arange((l - 1) * gs, l * gs) for l in sorted(support)])
    A = np.sqrt(cfg.p) * Theta_P[:, cols]
    inv_diag = np.real(np.diag(np.linalg.inv(A.conj().T @ A)))
    return float(noise_var * inv_diag.mean())


def match_cluster(estimates: Sequence[tuple[float, float]], truth: Sequence[tuple[float, float]],
                  dd: float) -> list[tuple[int, int]]:
    """Minimum-cost assignment between (range, angle_deg) pairs.

    Cost is angle error in degrees plus ``0.1 * range error / dd``. Returns
    ``(estimate_index, truth_index)`` pairs, ``min(len(estimates),
    len(truth))`` of them. Brute force; clusters hold a handful of targets.
    """
    ne, nt = len(estimates), len(truth)
    if ne == 0 or nt == 0:
        return []

    def cost(i, j):
        return abs(estimates[i][1] - truth[j][1]) + 0.1 * abs(estimates[i][0] - truth[j][0]) / dd

    best, best_pairs = math.inf, []
    if ne <= nt:
        for perm in permutations(range(nt), ne):
            c = sum(cost(i, j) for i, j in enumerate(perm))
            if c < best:
                best, best_pairs = c, list(enumerate(perm))
    else:
        for perm in permutations(range(ne), nt):
            c = sum(cost(i, j) for j, i in enumerate(perm))
            if c < best:
                best, best_pairs = c, [(i, j) for j, i in enumerate(perm)]
    return sorted(best_pairs)


def run_trial(targets: Sequence[Target], cfg: RadarConfig, seed: int, *, noiseless: bool = False,
              rho: float | None = None, stage2_opts: StageTwoOptions | None = None,
              lasso_opts: stage1.GroupLassoOptions | None = None,
              scenario_id: str = "scenario") -> TrialReport:
    """Scene -> channel -> waveform -> Stage I -> Stage II for one seed.

    With ``rho`` set, Stage I solves at that single value; otherwise the
    default regularization path is swept. Errors inside the pipeline are
    recorded in the report, which is then marked failed.
    """
    t_all = time.perf_counter()
    timing = {}
    report = TrialReport(seed=int(seed), scenario_id=scenario_id, M_T=cfg.M_T, M_R=cfg.M_R,
                         noiseless=noiseless, true_support=[])
    try:
        t = time.perf_counter()
        cmap = build_clusters(targets, cfg)
        report.true_support = cmap.occupied
        timing["scene"] = (time.perf_counter() - t) * 1e3

        t = time.perf_counter()
        h = effective_cluster_channels(cmap, cfg)
        timing["channel"] = (time.perf_counter() - t) * 1e3

        t = time.perf_counter()
        obs = observe(h, cfg, make_rng(seed), noiseless=noiseless)
        timing["waveform"] = (time.perf_counter() - t) * 1e3

        t = time.perf_counter()
        lasso_opts = lasso_opts or stage1.GroupLassoOptions()
        if rho is None:
            path = stage1.rho_sweep(obs.y_P, obs.Theta_P, cfg, opts=lasso_opts)
            res, support, h_est, noise_var = path.result, path.support, path.h_refit, path.noise_var
        else:
            from dataclasses import replace
            res = stage1.group_lasso_solve(obs.y_P, obs.Theta_P, cfg, replace(lasso_opts, rho=rho))
            support = res.support
            resid, h_est = stage1.refit_residual(obs.y_P, obs.Theta_P, support, cfg)
            dof = len(support) * cfg.M_R * cfg.M_T
            noise_var = resid ** 2 / max(obs.y_P.size - dof, 1)
        report.support = sorted(support)
        report.group_norms = [float(v) for v in res.group_norms]
        report.kkt_residual = float(res.kkt_residual)
        report.rho = float(res.rho)
        report.noise_var_est = float(noise_var)
        timing["stage1"] = (time.perf_counter() - t) * 1e3

        t = time.perf_counter()
        cnv = _channel_noise_var(obs.Theta_P, support, cfg, noise_var)
        for l in report.support:
            report.clusters.append(stage2.estimate_cluster(h_est[l - 1], l, cfg, stage2_opts,
                                                           channel_noise_var=cnv))
        timing["stage2"] = (time.perf_counter() - t) * 1e3

        dd = range_resolution(cfg)
        for est in report.clusters:
            if est.K_star == 0:
                continue
            truth = cmap.members(est.cluster_index)
            pairs = match_cluster([(d, math.degrees(a)) for d, a in zip(est.ranges, est.angles)],
                                  [(m.d, math.degrees(m.theta)) for m in truth], dd)
            for i, j in pairs:
                m = truth[j]
                er, ea = float(est.ranges[i]), math.degrees(est.angles[i])
                report.matches.append(Match(
                    target_id=m.target_id, cluster=est.cluster_index, estimate_index=i,
                    true_range=m.d, true_angle_deg=math.degrees(m.theta), est_range=er,
                    est_angle_deg=ea, range_error=abs(er - m.d),
                    angle_error=abs(ea - math.degrees(m.theta))))
        report.matches.sort(key=lambda m: m.target_id)
    except Exception as exc:  # noqa: BLE001 - recorded, trial marked failed
        log.info("trial seed=%s failed: %s", seed, exc)
        report.failed = True
        report.error = f"{type(exc).__name__}: {exc}"
    timing["total"] = (time.perf_counter() - t_all) * 1e3
    report.timing_ms = timing
    return report


def _stats(values):
    if not values:
        return {"median": None, "mean": None, "max": None}
    a = np.asarray(values, dtype=float)
    return {"median": float(np.median(a)), "mean": float(a.mean()), "max": float(a.max())}


@dataclass
class ExperimentSummary:
    scenario_id: str
    M_T: int
    M_R: int
    seeds: list
    n_trials: int
    n_failed: int
    support_recovery_rate: float
    targets: list          # per-target dicts
    identifiable_rate: dict  # cluster -> fraction of trials flagged identifiable
    trials: list = field(default_factory=list, repr=False)

    def target(self, target_id: int) -> dict:
        return next(t for t in self.targets if t["id"] == target_id)

    def range_table(self) -> list[list]:
        return [[t["id"], t["real_range_m"], t["est_range_m"], t["range_error"]["median"]]
                for t in self.targets]

    def angle_table(self) -> list[list]:
        return [[t["id"], t["real_angle_deg"], t["est_angle_deg"], t["angle_error"]["median"]]
                for t in self.targets]

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "experiment_summary",
            "scenario_id": self.scenario_id,
            "M_T": self.M_T,
            "M_R": self.M_R,
            "seeds": list(self.seeds),
            "n_trials": self.n_trials,
            "n_failed": self.n_failed,
            "support_recovery_rate": self.support_recovery_rate,
            "targets": self.targets,
            "identifiable_rate": {str(k): v for k, v in self.identifiable_rate.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSummary":
        return cls(d["scenario_id"], d["M_T"], d["M_R"], list(d["seeds"]), d["n_trials"],
                   d["n_failed"], d["support_recovery_rate"], d["targets"],
                   {int(k): v for k, v in d["identifiable_rate"].items()})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def summarize(reports: Sequence[TrialReport], targets: Sequence[Target], cfg: RadarConfig,
              scenario_id: str = "scenario") -> ExperimentSummary:
    ok = [r for r in reports if not r.failed]
    per_target = []
    for t in sorted(targets, key=lambda t: t.id):
        ms = [m for r in ok for m in r.matches if m.target_id == t.id]
        per_target.append({
            "id": t.id,
            "real_range_m": t.d,
            "real_angle_deg": math.degrees(t.theta),
            "n_matched": len(ms),
            "est_range_m": float(np.median([m.est_range for m in ms])) if ms else None,
            "est_angle_deg": float(np.median([m.est_angle_deg for m in ms])) if ms else None,
            "range_error": _stats([m.range_error for m in ms]),
            "angle_error": _stats([m.angle_error for m in ms]),
        })
    flags = {}
    for r in ok:
        for c in r.clusters:
            flags.setdefault(c.cluster_index, []).append(bool(c.identifiable))
    recovered = [r.support == r.true_support for r in ok]
    return ExperimentSummary(
        scenario_id=scenario_id, M_T=cfg.M_T, M_R=cfg.M_R, seeds=[r.seed for r in reports],
        n_trials=len(reports), n_failed=len(reports) - len(ok),
        support_recovery_rate=float(np.mean(recovered)) if recovered else 0.0,
        targets=per_target,
        identifiable_rate={k: float(np.mean(v)) for k, v in sorted(flags.items())},
        trials=list(reports))


def _trial_worker(args):
    targets, cfg, seed, kwargs = args
    return run_trial(targets, cfg, seed, **kwargs)


def run_monte_carlo(targets: Sequence[Target], cfg: RadarConfig, seeds: Sequence[int],
                    workers: int = 1, **trial_kwargs) -> ExperimentSummary:
    """Run one trial per seed and aggregate. Output order follows ``seeds``,
    so the summary does not depend on ``workers``."""
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ValueError("need at least one seed")
    jobs = [(list(targets), cfg, s, trial_kwargs) for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(_trial_worker, jobs))
    else:
        reports = [_trial_worker(j) for j in jobs]
    return summarize(reports, targets, cfg, trial_kwargs.get("scenario_id", "scenario"))


def reproduce_tables(cfg_base: RadarConfig | None = None, M_values=(1, 2, 4), seeds=range(20),
                     workers: int = 1, **trial_kwargs) -> dict[int, ExperimentSummary]:
    """Four-target reference experiment for each ``M_T = M_R = M``."""
    cfg_base = cfg_base or paper_config()
    targets = paper_targets()
    out = {}
    for M in M_values:
        cfg = cfg_base.with_antennas(M)
        out[M] = run_monte_carlo(targets, cfg, list(seeds), workers=workers,
                                 scenario_id=f"reference-M{M}", **trial_kwargs)
    return out


def format_tables(summaries: dict[int, ExperimentSummary]) -> str:
    """Text rendering in the reference layout: one row per M, one column per target."""
    if not summaries:
        return ""
    any_s = next(iter(summaries.values()))
    ids = [t["id"] for t in any_s.targets]
    fmt = lambda v, p: "-" if v is None else f"{v:.{p}f}"  # noqa: E731
    label = lambda text: f"{text:<20}| "  # noqa: E731
    lines = ["Range estimation (median over seeds)",
             "Target              | " + " | ".join(f"{i:>8d}" for i in ids),
             "Real range (m)      | " + " | ".join(f"{t['real_range_m']:8.3f}" for t in any_s.targets)]
    for M, s in summaries.items():
        lines.append(label(f"Estimate (m): M={M}") + " | ".join(f"{fmt(t['est_range_m'], 3):>8}" for t in s.targets))
        lines.append(label("  |error| (m)") + " | ".join(f"{fmt(t['range_error']['median'], 3):>8}" for t in s.targets))
    lines += ["", "Angle estimation (median over seeds)",
              "Target              | " + " | ".join(f"{i:>8d}" for i in ids),
              "Real angle (deg)    | " + " | ".join(f"{t['real_angle_deg']:8.3f}" for t in any_s.targets)]
    for M, s in summaries.items():
        lines.append(label(f"Estimate: M={M}") + " | ".join(f"{fmt(t['est_angle_deg'], 3):>8}" for t in s.targets))
        lines.append(label("  |error| (deg)") + " | ".join(f"{fmt(t['angle_error']['median'], 3):>8}" for t in s.targets))
    return "\n".join(lines)


# --- export ---------------------------------------------------------------

def _table_rows(obj, table: str):
    if isinstance(obj, ExperimentSummary):
        return obj.range_table() if table == "range" else obj.angle_table()
    rows = []
    for m in obj.matches:
        if table == "range":
            rows.append([m.target_id, m.true_range, m.est_range, m.range_error])
        else:
            rows.append([m.target_id, m.true_angle_deg, m.est_angle_deg, m.angle_error])
    return rows


def to_csv(obj, table: str = "range") -> str:
    if table not in ("range", "angle"):
        raise ValueError(f"unknown table {table!r}")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RANGE_HEADER if table == "range" else ANGLE_HEADER)
    for row in _table_rows(obj, table):
        w.writerow(["" if v is None else (repr(float(v)) if isinstance(v, float) else v) for v in row])
    return buf.getvalue()


def export(obj, path, format: str = "json", table: str = "range",
           include_timing: bool = True) -> Path:
    """Write a TrialReport or ExperimentSummary as JSON or a CSV table."""
    path = Path(path)
    if format == "json":
        if isinstance(obj, TrialReport):
            text = json.dumps(obj.to_dict(include_timing), indent=2, sort_keys=True)
        else:
            text = json.dumps(obj.to_dict(), indent=2, sort_keys=True)
        text += "\n"
    elif format == "csv":
        text = to_csv(obj, table)
    else:
        raise ValueError(f"unsupported format {format!r}; use json or csv")
    try:
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def load_export(path):
    """Re-import a JSON export as a TrialReport or ExperimentSummary."""
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc}") from exc
    if d.get("kind") == "trial_report":
        return TrialReport.from_dict(d)
    if d.get("kind") == "experiment_summary":
        return ExperimentSummary.from_dict(d)
    raise ValueError(f"{path}: not a radar_sense export")

"""Print the Stage I regularization path for one or more seeds.

Shows, per rho, the detected clusters, the refit residual and the KKT
residual, and marks the selected point.
"""

import argparse

from radar_sense.channel import effective_cluster_channels
from radar_sense.scene import build_clusters, paper_config, paper_targets
from radar_sense.stage1 import default_rho_grid, rho_sweep
from radar_sense.waveform import make_rng, observe


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--M", type=int, default=4)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--points", type=int, default=12)
    args = ap.parse_args()

    cfg = paper_config(args.M)
    h = effective_cluster_channels(build_clusters(paper_targets(), cfg), cfg)
    for seed in args.seeds:
        obs = observe(h, cfg, make_rng(seed))
        grid = default_rho_grid(obs.y_P, obs.Theta_P, cfg, args.points)
        path = rho_sweep(obs.y_P, obs.Theta_P, cfg, rho_grid=grid)
        print(f"seed {seed}")
        print(f"  {'rho':>11}  {'refit resid':>11}  {'kkt':>9}  support")
        for i, (r, res, sup, rr) in enumerate(zip(path.rhos, path.results, path.supports,
                                                   path.refit_residuals)):
            mark = " <-" if i == path.selected else ""
            print(f"  {r:11.4e}  {rr:11.4e}  {res.kkt_residual:9.2e}  {sorted(sup)}{mark}")


if __name__ == "__main__":
    main()

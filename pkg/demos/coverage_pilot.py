"""Small frequentist coverage study on the 10x10 grid.

Compares HPD intervals under the exact, approximate and inverse-gamma priors
with profile-likelihood intervals. The default 50 replicates run in a few
minutes; pass a larger count to tighten the Monte Carlo error.

    python3 demos/coverage_pilot.py [replicates] [theta]
"""

import sys

from gfref.simstudy import ExperimentConfig, coverage_experiment


def main(replicates="50", theta="0.2"):
    cfg = ExperimentConfig(n=100, theta=float(theta), priors=("exact", "approx", "ig"), mle=True, replicates=int(replicates))
    report = coverage_experiment(cfg)
    print(f"{'method':<8}{'coverage':>10}{'log-length':>12}{'MAE':>8}")
    for name, s in report.summary.items():
        print(f"{name:<8}{s['coverage_theta']:>10.3f}{s['loglength_theta']:>12.3f}{s['mae_theta']:>8.3f}")
    print(f"failures: {report.failures}, wall clock {report.wall_clock:.0f}s")


if __name__ == "__main__":
    main(*sys.argv[1:])

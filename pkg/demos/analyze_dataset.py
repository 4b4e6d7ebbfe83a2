"""Full analysis of one data set: semivariogram, smoothness scan, posterior fits.

Defaults to the shipped ``uniform600_nu15`` fixture; pass a CSV path
(columns x,y,z) to analyze other data. The 600-site fixture takes about
five minutes on one core.

    python3 demos/analyze_dataset.py [data.csv]
"""

import sys

import numpy as np

from gfref.bayes import integrated_lik_nu, likelihood_grid, sample_posterior
from gfref.designs import nearest_neighbor_distances
from gfref.io import fixture_path, load_dataset
from gfref.priors import ExactRefPrior, approx_ref_prior_for_design, default_theta_grid, tabulate
from gfref.simstudy import empirical_semivariogram


def main(path=None):
    ds = load_dataset(path or fixture_path("uniform600_nu15"))
    data = ds.data
    print(f"n = {ds.n}, p = {ds.p}")

    scan = integrated_lik_nu(np.arange(0.5, 2.51, 0.25), data)
    nu = scan.nu_hat
    print("log m(z | nu):", ", ".join(f"{v:.2f}: {m:.2f}" for v, m in zip(scan.nu_grid, scan.log_m)))
    print(f"selected nu = {nu}")

    sv = empirical_semivariogram(data, nu=nu)
    print(f"least-squares semivariogram fit: sigma2 = {sv.sigma2:.3f}, theta = {sv.theta:.3f}")

    _, d_min = nearest_neighbor_distances(data.design)
    grid_theta = default_theta_grid(d_min)
    lik = likelihood_grid(data, nu)
    print(f"\n{'prior':<8}{'beta1':>9}{'sigma2':>9}{'theta':>9}   theta 95% HPD   acceptance")
    for name, ev in (("exact", ExactRefPrior(data.design, nu)), ("approx", approx_ref_prior_for_design(data.design, nu))):
        s = sample_posterior(data, tabulate(ev, grid_theta), 10_000, seed=7, nu=nu, grid=lik).summary()
        lo, hi = s["theta_hpd"]
        print(
            f"{name:<8}{s['beta_mean'][0]:>9.3f}{s['sigma2_median']:>9.3f}{s['theta_mode']:>9.3f}"
            f"   ({lo:.3f}, {hi:.3f})   {s['acceptance_rate']:.2f}"
        )


if __name__ == "__main__":
    main(*sys.argv[1:])

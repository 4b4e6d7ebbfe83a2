"""Default Bayesian analysis of isotropic Matérn Gaussian random fields.

Submodules are loaded on first attribute access so that the command-line
entry point can set thread limits before numpy is imported.
"""

import importlib

__version__ = "0.1.0"

_EXPORTS = {
    "covmodel": ("MaternParams", "AliasConfig", "matern_corr", "matern_dcorr_dtheta", "specden", "aliased_specden", "dlog_aliased_specden", "matern_family"),
    "designs": ("SpatialDesign", "SpectralDesign", "regular_grid_design", "build_spectral_design", "build_aux_grid", "tune_defaults", "constant_trend", "quadratic_trend"),
    "spectral_basis": ("build_H1", "build_X1", "lambda_tilde", "spectral_corr_by_lag"),
    "priors": ("ExactRefPrior", "exact_ref_prior", "approx_ref_prior_const", "approx_ref_prior_general", "approx_ref_prior_for_design", "InverseGammaPrior", "TabulatedDensity", "tabulate"),
    "likelihoods": ("DataVector", "ExactLikelihood", "integrated_loglik_theta", "approx_restricted_loglik", "reml_fit", "profile_ci"),
    "bayes": ("likelihood_grid", "sample_posterior", "posterior_theta", "marginal_post_theta", "hpd_interval", "integrated_lik_nu"),
    "simstudy": ("simulate_grf", "coverage_experiment", "ExperimentConfig", "empirical_semivariogram"),
    "io": ("load_dataset", "fixture_path"),
}
_WHERE = {name: mod for mod, names in _EXPORTS.items() for name in names}
__all__ = sorted(_WHERE)


def __getattr__(name):
    if name in _WHERE:
        return getattr(importlib.import_module(f".{_WHERE[name]}", __name__), name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(list(globals()) + __all__)

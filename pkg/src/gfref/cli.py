"""Command-line interface: ``gfref <command> [options]``.

Every command writes CSV/JSON files into ``--out`` and prints a JSON summary
on stdout. Failures print a JSON object on stderr and exit with status 2
(invalid input) or 3 (numerical failure).

Options can also come from a ``key=value`` file passed with ``--config``;
flags given on the command line take precedence over the file.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3
THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")

# built-in defaults, lowest precedence
DEFAULTS = {
    "out": ".",
    "nu": 0.5,
    "seed": 0,
    "truncation": 5,
    "kind": "approx",
    "n_theta": 200,
    "prior": "approx",
    "draws": 10_000,
    "level": 0.95,
    "nu_grid": "0.5:2.5:0.25",
    "method": "exact",
    "design": "regular",
    "n": 100,
    "sigma2": 1.0,
    "theta": 0.2,
    "mean": "constant",
    "priors": "exact,approx",
    "replicates": 300,
    "bins": 15,
    "p": 1,
    "evals": 500,
}


class CliError(Exception):
    def __init__(self, message, code=EXIT_INVALID):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(f"{self.prog}: {message}")


def read_config(path) -> dict:
    """Parse ``key=value`` lines; ``#`` starts a comment, dashes in keys become underscores."""
    out = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as err:
        raise CliError(f"{path}: cannot read config ({err.strerror})") from None
    for i, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}:{i}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = val
    return out


def _add_common(p, data=True):
    p.add_argument("--config", help="key=value file; flags override it")
    p.add_argument("--out", help="output directory (default .)")
    p.add_argument("--threads", type=int, help="worker/BLAS thread limit (also GFREF_THREADS)")
    p.add_argument("--nu", type=float, help="Matérn smoothness (default 0.5)")
    p.add_argument("--seed", type=int, help="random seed (default 0)")
    if data:
        src = p.add_mutually_exclusive_group()
        src.add_argument("--data", help="CSV with columns x,y,z[,f2,...]")
        src.add_argument("--fixture", help="name of a shipped fixture, e.g. grid10")


def _add_grid(p):
    p.add_argument("--m1", type=int, help="auxiliary grid size along x (default: tuned)")
    p.add_argument("--m2", type=int, help="auxiliary grid size along y (default: m1)")
    p.add_argument("--delta", type=float, help="auxiliary grid spacing (default: tuned)")
    p.add_argument("--truncation", type=int, help="aliasing truncation T (default 5)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gfref", description="Default Bayesian analysis of Matérn Gaussian random fields.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("prior", help="tabulate the exact and/or approximate reference prior of theta")
    _add_common(p)
    _add_grid(p)
    p.add_argument("--kind", choices=["exact", "approx", "both"])
    p.add_argument("--n-theta", type=int, help="number of tabulation points (default 200)")

    p = sub.add_parser("fit", help="posterior sampling of (beta, sigma2, theta)")
    _add_common(p)
    _add_grid(p)
    p.add_argument("--prior", choices=["exact", "approx", "ig"])
    p.add_argument("--draws", type=int, help="posterior draws (default 10000)")
    p.add_argument("--level", type=float, help="HPD level (default 0.95)")
    p.add_argument("--exact-marginal", action="store_const", const=True, help="evaluate the likelihood exactly at each draw")

    p = sub.add_parser("select-nu", help="integrated likelihood of the smoothness nu")
    _add_common(p)
    _add_grid(p)
    p.add_argument("--nu-grid", help="start:stop:step or a comma list (default 0.5:2.5:0.25)")

    p = sub.add_parser("reml", help="REML estimates of (sigma2, theta)")
    _add_common(p)
    p.add_argument("--method", choices=["exact", "approximate"])

    p = sub.add_parser("simulate", help="simulate one Gaussian random field realization")
    _add_common(p, data=False)
    p.add_argument("--design", help="'regular', 'uniform', a fixture name or a CSV whose coordinates are reused")
    p.add_argument("--n", type=int, help="number of sites for regular/uniform designs (default 100)")
    p.add_argument("--sigma2", type=float)
    p.add_argument("--theta", type=float)
    p.add_argument("--mean", choices=["constant", "quadratic"])

    p = sub.add_parser("coverage", help="frequentist coverage study")
    _add_common(p, data=False)
    _add_grid(p)
    p.add_argument("--design", help="'regular', a fixture name or a CSV of locations")
    p.add_argument("--n", type=int)
    p.add_argument("--sigma2", type=float)
    p.add_argument("--theta", type=float)
    p.add_argument("--mean", choices=["constant", "quadratic"])
    p.add_argument("--priors", help="comma list from exact,approx,ig")
    p.add_argument("--mle", action="store_const", const=True, help="also compute profile-likelihood intervals")
    p.add_argument("--replicates", type=int)
    p.add_argument("--draws", type=int, help="posterior draws per replicate (default 2000)")
    p.add_argument("--level", type=float)

    p = sub.add_parser("semivariogram", help="empirical semivariogram and least-squares Matérn fit")
    _add_common(p)
    p.add_argument("--bins", type=int, help="number of distance bins (default 15)")

    p = sub.add_parser("bench", help="time exact vs approximate prior evaluations")
    _add_common(p, data=False)
    p.add_argument("--n", type=int, help="sites of the regular grid, a square (default 400)")
    p.add_argument("--p", type=int, choices=[1, 6], help="mean terms (default 1)")
    p.add_argument("--evals", type=int, help="evaluations per method (default 500)")
    return parser


def _subparser_actions(parser, command):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return {a.dest: a for a in action.choices[command]._actions}
    return {}


def resolve(args: argparse.Namespace, parser: argparse.ArgumentParser) -> dict:
    """Merge flags > config file > built-in defaults into one dict.

    Values read from the config file go through the same type conversion
    and choice checks as the corresponding flag.
    """
    file_vals = read_config(args.config) if args.config else {}
    actions = _subparser_actions(parser, args.command)
    dests = {k for k in vars(args) if k not in ("config", "command")}
    unknown = set(file_vals) - dests
    if unknown:
        raise CliError(f"{args.config}: unknown key(s) {', '.join(sorted(unknown))}")
    cfg = {}
    for k in sorted(dests):
        v = getattr(args, k)
        if v is None and k in file_vals:
            act = actions.get(k)
            v = file_vals[k]
            if act is not None and act.const is True:
                v = _as(bool, v, k)
            elif act is not None and act.type is not None:
                v = _as(act.type, v, k)
            if act is not None and act.choices is not None and v not in act.choices:
                raise CliError(f"{args.config}: invalid {k} {v!r} (choose from {', '.join(map(str, act.choices))})")
        if v is None:
            v = _command_default(args.command, k)
        cfg[k] = v
    return cfg


def _command_default(command, key):
    if command == "coverage" and key == "draws":
        return 2000
    if command == "bench" and key == "n":
        return 400
    if key in ("exact_marginal", "mle"):
        return False
    return DEFAULTS.get(key)


def _as(kind, value, name):
    if value is None:
        return None
    try:
        if kind is bool:
            if isinstance(value, bool):
                return value
            return str(value).strip().lower() in ("1", "true", "yes", "on")
        return kind(value)
    except (TypeError, ValueError):
        raise CliError(f"invalid value for {name}: {value!r}") from None


def _apply_threads(cfg):
    threads = cfg.get("threads") or os.environ.get("GFREF_THREADS")
    threads = _as(int, threads, "threads")
    if threads is not None:
        if threads < 1:
            raise CliError("threads must be >= 1")
        for var in THREAD_VARS:
            os.environ[var] = str(threads)
    cfg["threads"] = threads or 1


# ---------------------------------------------------------------------------
# commands


def _dataset(cfg):
    from .io import fixture_path, load_dataset

    if cfg.get("data"):
        return load_dataset(cfg["data"])
    if cfg.get("fixture"):
        try:
            return load_dataset(fixture_path(cfg["fixture"]))
        except KeyError as err:
            raise CliError(str(err.args[0])) from None
    raise CliError("one of --data or --fixture is required")


def _grid_args(cfg):
    return (_as(int, cfg.get("m1"), "m1"), _as(int, cfg.get("m2"), "m2"), _as(float, cfg.get("delta"), "delta"))


def _prior_for(kind, design, nu, cfg):
    from .designs import nearest_neighbor_distances
    from .priors import ExactRefPrior, InverseGammaPrior, approx_ref_prior_for_design, default_theta_grid, tabulate

    if kind == "ig":
        return InverseGammaPrior(), {}
    _, d_min = nearest_neighbor_distances(design)
    grid = default_theta_grid(d_min, _as(int, cfg.get("n_theta"), "n_theta") or 200)
    if kind == "exact":
        return tabulate(ExactRefPrior(design, nu), grid), {}
    m1, m2, delta = _grid_args(cfg)
    ev = approx_ref_prior_for_design(design, nu, m1, m2, delta, _as(int, cfg["truncation"], "truncation"))
    spec = getattr(ev, "spectral", None) or ev.basis.spectral
    return tabulate(ev, grid), {"m1": spec.m1, "m2": spec.m2, "delta": spec.delta}


def _write(path, text):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    return path


def _dump(obj):
    import numpy as np

    def conv(o):
        if isinstance(o, np.generic):
            return o.item()
        if isinstance(o, np.ndarray):
            return o.tolist()
        raise TypeError(f"not serializable: {type(o).__name__}")

    return json.dumps(obj, indent=2, default=conv, allow_nan=True)


def cmd_prior(cfg):
    from .priors import tail_diagnostic

    ds = _dataset(cfg)
    nu = _as(float, cfg["nu"], "nu")
    kinds = ["exact", "approx"] if cfg["kind"] == "both" else [cfg["kind"]]
    tabs, info = {}, {}
    for k in kinds:
        tab, tuning = _prior_for(k, ds.design, nu, cfg)
        tabs[k] = tab
        lo, hi = tab.tail_slopes()
        info[k] = {
            "normalization": tab.normalization,
            "tail_slopes": [lo, hi],
            "tail": tail_diagnostic(tab),
            "digest": tab.digest(),
            "conditioning_cut": tab.meta.get("conditioning_cut"),
            "grid": tuning,
        }
    csv_path = os.path.join(cfg["out"], "prior.csv")
    if len(kinds) == 1:
        _write(csv_path, tabs[kinds[0]].to_csv())
    else:
        theta = tabs["approx"].theta
        lines = ["theta,exact_density,approx_density"]
        for t, e, a in zip(theta, tabs["exact"].pdf(theta), tabs["approx"].pdf(theta)):
            lines.append(f"{t:.10g},{e:.10g},{a:.10g}")
        _write(csv_path, "\n".join(lines) + "\n")
    return {"command": "prior", "files": [csv_path], "n": ds.n, "p": ds.p, "priors": info, "config": cfg}


def cmd_fit(cfg):
    from .bayes import likelihood_grid, sample_posterior

    ds = _dataset(cfg)
    nu = _as(float, cfg["nu"], "nu")
    level = _as(float, cfg["level"], "level")
    prior, tuning = _prior_for(cfg["prior"], ds.design, nu, cfg)
    grid = likelihood_grid(ds.data, nu)
    draws = sample_posterior(
        ds.data,
        prior,
        _as(int, cfg["draws"], "draws"),
        seed=_as(int, cfg["seed"], "seed"),
        nu=nu,
        grid=grid,
        exact_marginal=_as(bool, cfg["exact_marginal"], "exact_marginal"),
    )
    summary = draws.summary(level)
    out = cfg["out"]
    files = [_write(os.path.join(out, "draws.csv"), draws.to_csv()), os.path.join(out, "fit.json"), os.path.join(out, "report.txt")]
    result = {"command": "fit", "files": files, "n": ds.n, "p": ds.p, "summary": summary, "grid": tuning, "config": cfg}
    _write(files[1], _dump(result))
    _write(files[2], fit_report(summary))
    return result


def fit_report(summary) -> str:
    """Plain-text table with posterior summaries of each parameter."""
    lines = [f"prior: {summary['prior']}  draws: {summary['n_draws']}  acceptance: {summary['acceptance_rate']:.3f}"]
    lines.append(f"{'parameter':<10}{'estimate':>12}{'hpd_lower':>12}{'hpd_upper':>12}")
    lines.append(f"{'theta':<10}{summary['theta_mode']:>12.4f}{summary['theta_hpd'][0]:>12.4f}{summary['theta_hpd'][1]:>12.4f}")
    lines.append(f"{'sigma2':<10}{summary['sigma2_median']:>12.4f}{summary['sigma2_hpd'][0]:>12.4f}{summary['sigma2_hpd'][1]:>12.4f}")
    for j, (m, s) in enumerate(zip(summary["beta_mean"], summary["beta_sd"]), start=1):
        lines.append(f"{'beta_' + str(j):<10}{m:>12.4f}{m - 1.96 * s:>12.4f}{m + 1.96 * s:>12.4f}")
    lines.append("theta: posterior mode; sigma2: median; beta: mean +- 1.96 sd")
    return "\n".join(lines) + "\n"


def parse_nu_grid(spec) -> list:
    import numpy as np

    spec = str(spec).strip()
    try:
        if ":" in spec:
            a, b, s = (float(x) for x in spec.split(":"))
            if s <= 0 or b < a:
                raise ValueError
            vals = np.arange(a, b + 0.5 * s, s)
        else:
            vals = np.array([float(x) for x in spec.split(",") if x.strip()])
    except ValueError:
        raise CliError(f"invalid nu grid {spec!r}") from None
    if vals.size == 0 or np.any(vals <= 0):
        raise CliError("nu grid values must be positive")
    return [round(float(v), 10) for v in vals]


def cmd_select_nu(cfg):
    from .bayes import integrated_lik_nu

    ds = _dataset(cfg)
    m1, m2, delta = _grid_args(cfg)
    scan = integrated_lik_nu(parse_nu_grid(cfg["nu_grid"]), ds.data, m1, m2, delta, _as(int, cfg["truncation"], "truncation"))
    path = _write(os.path.join(cfg["out"], "select_nu.csv"), scan.to_csv())
    return {"command": "select-nu", "files": [path], "nu_hat": scan.nu_hat, "tuning": scan.tuning, "config": cfg}


def cmd_reml(cfg):
    from .likelihoods import reml_fit

    ds = _dataset(cfg)
    fit = reml_fit(ds.data, cfg["method"], _as(float, cfg["nu"], "nu"), truncation=_as(int, cfg.get("truncation") or 5, "truncation"))
    result = {"command": "reml", "fit": fit.to_dict(), "n": ds.n, "p": ds.p, "config": cfg}
    path = os.path.join(cfg["out"], "reml.json")
    result["files"] = [path]
    _write(path, _dump(result))
    return result


def _design_from(spec, n, mean, rng_seed):
    import numpy as np

    from .designs import SpatialDesign, constant_trend, quadratic_trend, regular_grid_design
    from .io import FIXTURES, fixture_path, load_dataset

    trend = constant_trend if mean == "constant" else quadratic_trend
    if spec == "regular":
        k = int(round(np.sqrt(n)))
        if k * k != n:
            raise CliError("regular design needs a square --n")
        return regular_grid_design(k, 1.0, trend)
    if spec == "uniform":
        return SpatialDesign.from_trend(np.random.default_rng(rng_seed).uniform(size=(n, 2)), trend)
    path = fixture_path(spec) if spec in FIXTURES else spec
    return SpatialDesign.from_trend(load_dataset(path).design.locations, trend)


def cmd_simulate(cfg):
    from .covmodel import MaternParams
    from .io import write_dataset
    from .simstudy import QUADRATIC_BETA, simulate_grf

    seed = _as(int, cfg["seed"], "seed")
    design = _design_from(cfg["design"], _as(int, cfg["n"], "n"), cfg["mean"], seed)
    params = MaternParams(_as(float, cfg["sigma2"], "sigma2"), _as(float, cfg["theta"], "theta"), _as(float, cfg["nu"], "nu"))
    beta = [1.0] if cfg["mean"] == "constant" else list(QUADRATIC_BETA)
    data = simulate_grf(design, params, seed=seed, beta=beta)
    path = os.path.join(cfg["out"], "simulated.csv")
    write_dataset(path, data)
    return {"command": "simulate", "files": [path], "n": data.n, "p": data.p, "beta": beta, "config": cfg}


def cmd_coverage(cfg):
    from .io import FIXTURES, fixture_path, load_dataset
    from .simstudy import ExperimentConfig, coverage_experiment

    design = cfg["design"]
    if design != "regular":
        design = load_dataset(fixture_path(design) if design in FIXTURES else design).design.locations
    m1, _, delta = _grid_args(cfg)
    config = ExperimentConfig(
        design=design,
        n=_as(int, cfg["n"], "n"),
        mean=cfg["mean"],
        sigma2=_as(float, cfg["sigma2"], "sigma2"),
        theta=_as(float, cfg["theta"], "theta"),
        nu=_as(float, cfg["nu"], "nu"),
        priors=tuple(s.strip() for s in str(cfg["priors"]).split(",") if s.strip()),
        mle=_as(bool, cfg["mle"], "mle"),
        replicates=_as(int, cfg["replicates"], "replicates"),
        n_draws=_as(int, cfg["draws"], "draws"),
        level=_as(float, cfg["level"], "level"),
        seed=_as(int, cfg["seed"], "seed"),
        m1=m1,
        delta=delta,
        workers=cfg["threads"],
    )
    report = coverage_experiment(config)
    out = cfg["out"]
    files = [_write(os.path.join(out, "coverage.csv"), report.to_csv()), _write(os.path.join(out, "coverage.json"), report.to_json())]
    return {
        "command": "coverage",
        "files": files,
        "summary": report.summary,
        "failures": report.failures,
        "wall_clock": report.wall_clock,
        "config": cfg,
    }


def cmd_semivariogram(cfg):
    from .simstudy import empirical_semivariogram

    ds = _dataset(cfg)
    fit = empirical_semivariogram(ds.data, _as(int, cfg["bins"], "bins"), _as(float, cfg["nu"], "nu"))
    path = _write(os.path.join(cfg["out"], "semivariogram.csv"), fit.to_csv())
    return {"command": "semivariogram", "files": [path], "sigma2": fit.sigma2, "theta": fit.theta, "config": cfg}


def run_bench(n, nu, p, evals):
    """Seconds for ``evals`` exact and approximate prior evaluations on a regular grid.

    The approximate prior uses the lattice itself as auxiliary grid (M = n).
    """
    import numpy as np

    from .designs import constant_trend, quadratic_trend, regular_grid_design
    from .priors import ExactRefPrior, approx_ref_prior_for_design

    k = int(round(np.sqrt(n)))
    if k * k != n:
        raise CliError("bench needs a square n")
    design = regular_grid_design(k, 1.0, constant_trend if p == 1 else quadratic_trend)
    thetas = np.geomspace(0.05, 2.0, evals)
    exact = ExactRefPrior(design, nu)
    t0 = time.perf_counter()
    for t in thetas:
        exact(t)
    t_exact = time.perf_counter() - t0
    t0 = time.perf_counter()
    approx = approx_ref_prior_for_design(design, nu, k, k, 1.0 / (k - 1))
    for t in thetas:
        approx(t)
    t_approx = time.perf_counter() - t0
    return t_exact, t_approx


def cmd_bench(cfg):
    n, p, evals = _as(int, cfg["n"], "n"), _as(int, cfg["p"], "p"), _as(int, cfg["evals"], "evals")
    t_exact, t_approx = run_bench(n, _as(float, cfg["nu"], "nu"), p, evals)
    path = _write(
        os.path.join(cfg["out"], "bench.csv"),
        f"method,n,p,evals,seconds\nexact,{n},{p},{evals},{t_exact:.6f}\napprox,{n},{p},{evals},{t_approx:.6f}\n",
    )
    return {"command": "bench", "files": [path], "exact_seconds": t_exact, "approx_seconds": t_approx, "ratio": t_exact / t_approx, "config": cfg}


COMMANDS = {
    "prior": cmd_prior,
    "fit": cmd_fit,
    "select-nu": cmd_select_nu,
    "reml": cmd_reml,
    "simulate": cmd_simulate,
    "coverage": cmd_coverage,
    "semivariogram": cmd_semivariogram,
    "bench": cmd_bench,
}


def _error(err, code):
    sys.stderr.write(json.dumps({"error": type(err).__name__, "message": str(err), "exit_code": code}) + "\n")
    return code


def main(argv=None) -> int:
    try:
        parser = build_parser()
        args = parser.parse_args(argv)
        cfg = resolve(args, parser)
        _apply_threads(cfg)
        os.makedirs(cfg["out"], exist_ok=True)
    except CliError as err:
        return _error(err, err.code)

    from ._linalg import ConditioningError
    from .bayes import ImproperPosteriorError
    from .io import DatasetError

    import numpy as np

    try:
        result = COMMANDS[args.command](cfg)
    except CliError as err:
        return _error(err, err.code)
    except (ConditioningError, ImproperPosteriorError, np.linalg.LinAlgError, FloatingPointError) as err:
        return _error(err, EXIT_NUMERICAL)
    except (DatasetError, ValueError, KeyError, OSError) as err:
        return _error(err, EXIT_INVALID)
    sys.stdout.write(_dump(result) + "\n")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

"""Run one configured experiment and write its CSV table and summary."""
from __future__ import annotations

import csv
import datetime as _dt
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import analytic, geometry, spectral
from .discretize import (build_channel_mesh, build_dumbbell_forms, build_oscillating_forms,
                         write_mesh)
from .eigensolve import EigenRequest

log = logging.getLogger(__name__)

EXIT_OK, EXIT_ERROR, EXIT_FAILED = 0, 1, 2


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class Outcome:
    columns: list
    rows: list
    checks: list = field(default_factory=list)
    errors: list = field(default_factory=list)


def fmt(value):
    """17 significant digits, locale independent; blanks for missing values."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        return format(v, ".17g")
    return str(value)


def request(cfg, k=None):
    return EigenRequest(k=k or cfg.k, tol=cfg.tol, max_iter=cfg.max_iter, seed=cfg.seed,
                        preconditioner=cfg.preconditioner)


def _parallel_map(fn, items, jobs):
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _strictly_increasing(values):
    return all(b > a for a, b in zip(values, values[1:]))


def _decreasing(values):
    return all(b <= a for a, b in zip(values, values[1:]))


# -- tau-sweep -----------------------------------------------------------------


def _tau_row(args):
    cfg, eps = args
    profile = cfg.profile.at(eps)
    tau = spectral.compute_tau(profile, cfg.nx, cfg.ny, request(cfg, 1), kappa=cfg.kappa)
    domain = geometry.PerturbedDomain("channel-mixed", channel=profile,
                                      base_height=cfg.base_height)
    return tau, geometry.measure_excess(domain), geometry.domain_distance(domain)


def tau_sweep(cfg, jobs=1):
    columns = ["epsilon", "tau", "tau_extrap", "lower_bound", "crude_floor", "m_eps",
               "measure_excess", "distance", "tau_coarse", "margin", "upper_bound"]
    eps_grid = sorted(cfg.epsilon_grid, reverse=True)
    results = _parallel_map(_tau_row, [(cfg, e) for e in eps_grid], jobs)
    rows = []
    for eps, (t, excess, dist) in zip(eps_grid, results):
        rows.append([eps, t.tau, t.extrapolated, t.lower_bound, t.crude_floor, t.m_eps,
                     excess, dist, t.mesh_levels[0], t.margin, t.upper_bound_if_applicable])
    taus = [r[0] for r in results]
    checks = [Check("solver_converged", all(t.converged for t in taus))]
    hyp = geometry.check_hypotheses(cfg.profile.at(eps_grid[0]))
    if cfg.profile.family == "gamma-power" and hyp.satisfied:
        ext = [t.extrapolated for t in taus]
        checks.append(Check("tau_increasing_as_eps_decreases", _strictly_increasing(ext),
                            " < ".join(f"{v:.6g}" for v in ext)))
        ok = all(t.extrapolated >= t.lower_bound - t.margin for t in taus)
        worst = min(t.extrapolated - (t.lower_bound - t.margin) for t in taus)
        checks.append(Check("bound_sandwich_lower", ok, f"min slack {worst:.6g}"))
        crude = [(t.m_eps, t.crude_floor) for t in taus if t.crude_floor is not None]
        half = (cfg.profile.dimension - 1) / 2.0
        checks.append(Check("m_eps_above_crude_floor",
                            all(m * half >= c for m, c in crude), f"{len(crude)} points"))
        if len(taus) >= 2:
            slope, intercept = np.polyfit([1 / e for e in eps_grid], ext, 1)
            checks.append(Check("fit_slope_positive", slope > 0,
                                f"slope {slope:.6g}, intercept {intercept:.6g}"))
    uppers = [t for t in taus if t.upper_bound_if_applicable is not None]
    if uppers:
        ok = all(t.extrapolated <= t.upper_bound_if_applicable * 1.01 for t in uppers)
        checks.append(Check("bound_sandwich_upper", ok,
                            f"max tau {max(t.extrapolated for t in uppers):.6g} vs "
                            f"{uppers[0].upper_bound_if_applicable:.6g} * 1.01"))
    return Outcome(columns, rows, checks)


# -- bounds-check ----------------------------------------------------------------


def bounds_check(cfg, jobs=1):
    columns = ["epsilon", "alpha0", "alpha1", "alpha2", "gamma_dot_at_L", "hypotheses",
               "m_eps", "eps_times_m_eps", "alpha2_over_alpha0", "lower_bound", "crude_floor"]
    rows, bounds = [], []
    for eps in sorted(cfg.epsilon_grid, reverse=True):
        profile = cfg.profile.at(eps)
        rep = geometry.check_hypotheses(profile)
        b = geometry.tau_lower_bound(profile, cfg.kappa)
        bounds.append((rep, b))
        rows.append([eps, rep.alpha0, rep.alpha1, rep.alpha2, rep.gamma_dot_at_L, rep.satisfied,
                     b.m_eps, eps * b.m_eps, rep.alpha2 / rep.alpha0, b.bound, b.crude_floor])
    checks = [Check("hypotheses_satisfied", all(r.satisfied for r, _ in bounds))]
    half = (cfg.profile.dimension - 1) / 2.0
    checks.append(Check("m_eps_above_crude_floor",
                        all(b.bound >= b.crude_floor for _, b in bounds if b.crude_floor is not None)
                        and half > 0))
    checks.append(Check("lower_bound_increasing_as_eps_decreases",
                        _strictly_increasing([b.bound for _, b in bounds])))
    return Outcome(columns, rows, checks)


# -- robin-limit -------------------------------------------------------------------


def robin_limit(cfg, jobs=1):
    columns = ["eta", "lambda", "ratio", "upper_bound", "residual"]
    etas = sorted(cfg.eta_grid, reverse=True)
    res = [analytic.robin_interval_lambda(eta) for eta in etas]
    rows = [[r.eta, r.lam, r.ratio, analytic.robin_upper_bound(r.eta), r.residual] for r in res]
    ratios = [r.ratio for r in res]
    checks = [
        Check("ratio_in_(0.9,1]", all(0.9 < q <= 1.0 for q in ratios),
              ", ".join(f"{q:.8f}" for q in ratios)),
        Check("ratio_increasing_toward_1", _strictly_increasing(ratios)),
        Check("lambda_below_eta", all(r.lam <= r.eta for r in res)),
        Check("secular_residual_below_1e-10", all(r.residual < 1e-10 for r in res)),
    ]
    return Outcome(columns, rows, checks)


# -- mesh-convergence ----------------------------------------------------------------


def mesh_convergence(cfg, jobs=1):
    columns = ["level", "nx", "ny", "tau", "reference", "error", "ratio"]
    eps = cfg.epsilon_grid[0]
    profile = cfg.profile.at(eps)
    levels = []
    for i in range(cfg.levels):
        nx, ny = cfg.nx * 2**i, cfg.ny * 2**i
        res = spectral.channel_eigenvalues(profile, nx, ny, request(cfg, 1))
        levels.append((nx, ny, float(res.values[0])))
    constant = len(profile.coefficients) == 1
    if constant:
        reference = analytic.const_channel_tau(profile.L)
    else:
        reference = spectral.richardson(levels[-2][2], levels[-1][2])
    rows, errors, ratios = [], [], []
    for i, (nx, ny, tau) in enumerate(levels):
        err = abs(tau - reference)
        ratio = errors[-1] / err if errors and err > 0 else None
        errors.append(err)
        if ratio is not None:
            ratios.append(ratio)
        rows.append([i, nx, ny, tau, reference, err, ratio])
    checks = []
    if constant:
        checks.append(Check("error_ratio_in_[3.5,4.5]", all(3.5 <= r <= 4.5 for r in ratios),
                            ", ".join(f"{r:.4f}" for r in ratios)))
    else:
        checks.append(Check("errors_decreasing", _decreasing(errors)))
    return Outcome(columns, rows, checks)


# -- dumbbell-sweep ------------------------------------------------------------------


def _dumbbell_row(args):
    cfg, eps, limit = args
    mesh = spectral.DumbbellMesh(cfg.h_base, cfg.channel_nx, cfg.channel_ny)
    return spectral.sweep_row(cfg.profile.at, eps, cfg.k, mesh, request(cfg), (cfg.nx, cfg.ny),
                              cfg.kappa, cfg.base_height, limit)


def nearest_match_errors(values, limit_values):
    """Relative distance from each limit eigenvalue to the closest computed one."""
    vals = np.asarray(values)
    out = []
    for lam0 in limit_values:
        gap = float(np.min(np.abs(vals - lam0)))
        out.append(gap / lam0 if lam0 > 1e-8 else gap)
    return out


def dumbbell_sweep(cfg, jobs=1):
    k = cfg.k
    columns = (["epsilon"] + [f"lambda_{n}" for n in range(1, k + 1)]
               + [f"lambda0_{n}" for n in range(1, k + 1)]
               + [f"relerr_{n}" for n in range(1, k + 1)]
               + [f"nearest_relerr_{n}" for n in range(1, k + 1)]
               + [f"dist_{n}" for n in range(1, k + 1)]
               + ["measure_excess", "distance", "tau", "tau_extrap", "error"])
    mesh = spectral.DumbbellMesh(cfg.h_base, cfg.channel_nx, cfg.channel_ny)
    limit = spectral.dumbbell_spectrum(geometry.dumbbell(None, cfg.base_height), k, mesh,
                                       request(cfg))
    eps_grid = sorted(cfg.epsilon_grid, reverse=True)
    rows_ = _parallel_map(_dumbbell_row, [(cfg, e, limit) for e in eps_grid], jobs)
    rows, errors = [], []
    nan = [float("nan")] * k
    for r in rows_:
        if r.error:
            errors.append(f"eps={r.epsilon:g}: {r.error}")
        vals = r.values or nan
        lim = r.limit_values or nan
        rel = r.relative_errors or nan
        near = nearest_match_errors(r.values, r.limit_values) if r.values else nan
        dist = r.distances or nan
        tau = r.tau.tau if r.tau else None
        tau_x = r.tau.extrapolated if r.tau else None
        rows.append([r.epsilon, *vals, *lim, *rel, *near, *dist, r.measure_excess,
                     r.domain_distance, tau, tau_x, r.error or ""])
    good = [r for r in rows_ if r.error is None]
    checks = [Check("neumann_ground_state", all(abs(r.values[0]) <= 1e-8 for r in good),
                    ", ".join(f"{r.values[0]:.2e}" for r in good))]
    profile0 = cfg.profile.at(eps_grid[0])
    hyp = geometry.check_hypotheses(profile0)
    top = min(4, k)
    if cfg.profile.family == "gamma-power" and hyp.satisfied:
        for n in range(2, top + 1):
            seq = [r.relative_errors[n - 1] for r in good]
            checks.append(Check(f"relerr_{n}_decreasing", _decreasing(seq),
                                ", ".join(f"{v:.4g}" for v in seq)))
            if good:
                checks.append(Check(f"relerr_{n}_below_5pct_at_smallest_eps", seq[-1] < 0.05,
                                    f"{seq[-1]:.4g}"))
            dseq = [r.distances[n - 1] for r in good]
            checks.append(Check(f"dist_{n}_decreasing", _decreasing(dseq),
                                ", ".join(f"{v:.4g}" for v in dseq)))
        checks.append(Check("measure_excess_decreasing",
                            _decreasing([r.measure_excess for r in good])))
        checks.append(Check("domain_distance_constant",
                            all(math.isclose(r.domain_distance, profile0.L) for r in good)))
        slope, _ = spectral.fit_tau_vs_inverse_eps(rows_)
        checks.append(Check("tau_fit_slope_positive", slope > 0, f"slope {slope:.6g}"))
    elif good:
        last = good[-1]
        lim = np.asarray(last.limit_values)
        spurious = [v for v in last.values[1:]
                    if np.all(np.abs(v - lim) / max(v, 1e-300) > 0.2)]
        checks.append(Check("spurious_eigenvalue_present", bool(spurious),
                            ", ".join(f"{v:.6g}" for v in spurious)))
        taus = [r.tau.extrapolated for r in good]
        checks.append(Check("tau_bounded", max(taus) <= 10 * min(taus),
                            ", ".join(f"{t:.6g}" for t in taus)))
    return Outcome(columns, rows, checks, errors)


# -- dirichlet-example --------------------------------------------------------------


def _dirichlet_row(args):
    cfg, eps = args
    vals = spectral.dirichlet_example_spectrum(cfg.amplitude, eps, cfg.k, cfg.osc_nx, cfg.osc_ny,
                                               request(cfg))
    dom = geometry.oscillating(cfg.amplitude, eps)
    return vals, geometry.measure_excess(dom), geometry.domain_distance(dom)


def dirichlet_example(cfg, jobs=1):
    k = cfg.k
    columns = (["epsilon"] + [f"lambda_{n}" for n in range(1, k + 1)]
               + ["lambda1_relerr", "measure_excess", "distance"])
    eps_grid = sorted(cfg.epsilon_grid, reverse=True)
    results = _parallel_map(_dirichlet_row, [(cfg, e) for e in eps_grid], jobs)
    limit = analytic.rect_dirichlet_eigs(1.0, 1.0, k)
    rows, errs = [], []
    for eps, (vals, excess, dist) in zip(eps_grid, results):
        err = abs(vals[0] - limit[0]) / limit[0]
        errs.append(err)
        rows.append([eps, *vals, err, excess, dist])
    mono = all(np.all(vals <= limit * (1 + 1e-12)) for vals, _, _ in results)
    a = cfg.amplitude
    excess = [ex for _, ex, _ in results]
    checks = [
        Check("dirichlet_monotonicity", mono),
        Check("lambda1_error_decreasing", _decreasing(errs), ", ".join(f"{e:.4g}" for e in errs)),
        Check("lambda1_within_2pct_at_smallest_eps", errs[-1] <= 0.02, f"{errs[-1]:.4g}"),
        Check("measure_excess_at_smallest_eps_near_amplitude",
              abs(excess[-1] - a) <= 0.1 * a, f"{excess[-1]:.5g}"),
        Check("measure_excess_not_vanishing", all(ex >= a * (1 - 1e-9) for ex in excess),
              ", ".join(f"{ex:.5g}" for ex in excess)),
    ]
    return Outcome(columns, rows, checks)


# -- bracketing-check ----------------------------------------------------------------


def _bracket_row(args):
    cfg, eps = args
    return spectral.bracketing_check(cfg.profile.at(eps), cfg.nx, cfg.ny, request(cfg, 1))


def bracketing(cfg, jobs=1):
    columns = ["epsilon", "kind", "L_star", "tau_two_dirichlet", "tau_piece_0", "tau_piece_1",
               "margin", "holds"]
    eps_grid = sorted(cfg.epsilon_grid, reverse=True)
    results = _parallel_map(_bracket_row, [(cfg, e) for e in eps_grid], jobs)
    rows = []
    for eps, b in zip(eps_grid, results):
        pieces = [t.extrapolated for t in b.piece_taus] + [None]
        rows.append([eps, b.split.kind, b.split.L_star, b.tau_two_dirichlet.extrapolated,
                     pieces[0], pieces[1], b.margin, b.holds])
    checks = [Check("bracketing_inequality", all(b.holds for b in results))]
    return Outcome(columns, rows, checks)


# -- scaling-check -------------------------------------------------------------------


def scaling(cfg, jobs=1):
    columns = ["epsilon", "rho", "tau", "tau_scaled", "tau_scaled_times_rho2", "relative_gap"]
    rows, checks = [], []
    req = request(cfg, 1)
    for eps in sorted(cfg.epsilon_grid, reverse=True):
        profile = cfg.profile.at(eps)
        base = float(spectral.channel_eigenvalues(profile, cfg.nx, cfg.ny, req).values[0])
        for rho in cfg.rho_grid:
            scaled = geometry.scale_channel(profile, rho)
            t = float(spectral.channel_eigenvalues(scaled, cfg.nx, cfg.ny, req).values[0])
            gap = abs(t * rho**2 - base) / base
            rows.append([eps, rho, base, t, t * rho**2, gap])
            checks.append(Check(f"scaling_eps={eps:g}_rho={rho:g}", gap <= 2 * cfg.tol,
                                f"gap {gap:.3g} vs {2 * cfg.tol:g}"))
    return Outcome(columns, rows, checks)


EXPERIMENT_FUNCS = {
    "tau-sweep": tau_sweep,
    "bounds-check": bounds_check,
    "robin-limit": robin_limit,
    "mesh-convergence": mesh_convergence,
    "dumbbell-sweep": dumbbell_sweep,
    "dirichlet-example": dirichlet_example,
    "bracketing-check": bracketing,
    "scaling-check": scaling,
}


def dump_meshes(cfg, out_dir):
    """Write the principal mesh of the experiment as plain text."""
    eps = sorted(cfg.epsilon_grid, reverse=True)[0]
    paths = []
    if cfg.experiment == "dirichlet-example":
        forms = build_oscillating_forms(cfg.amplitude, eps, cfg.osc_nx, cfg.osc_ny)
        meshes = {"oscillating": forms.mesh}
    elif cfg.experiment == "dumbbell-sweep":
        forms = build_dumbbell_forms(geometry.dumbbell(cfg.profile.at(eps), cfg.base_height),
                                     cfg.h_base, cfg.channel_nx, cfg.channel_ny)
        meshes = {"base": forms.parts.base_mesh, "channel": forms.parts.channel_mesh}
    elif cfg.experiment == "robin-limit":
        meshes = {}
    else:
        meshes = {"channel": build_channel_mesh(cfg.profile.at(eps), cfg.nx, cfg.ny)}
    for name, mesh in meshes.items():
        path = os.path.join(out_dir, f"{cfg.experiment}_{name}_mesh.txt")
        write_mesh(mesh, path)
        paths.append(path)
    return paths


def write_outcome(cfg, outcome, out_dir, stamp=None):
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, f"{cfg.experiment}.csv")
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(outcome.columns)
        for row in outcome.rows:
            writer.writerow([fmt(v) for v in row])
    summary_path = os.path.join(out_dir, f"{cfg.experiment}_summary.txt")
    stamp = stamp or _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    n_pass = sum(c.passed for c in outcome.checks)
    lines = [f"# experiment: {cfg.experiment}", f"# generated: {stamp}"]
    for c in outcome.checks:
        status = "PASS" if c.passed else "FAIL"
        lines.append(f"{status} {c.name}" + (f": {c.detail}" if c.detail else ""))
    for err in outcome.errors:
        lines.append(f"ERROR {err}")
    verdict = "PASS" if n_pass == len(outcome.checks) and not outcome.errors else "FAIL"
    lines.append(f"result: {verdict} ({n_pass}/{len(outcome.checks)} assertions)")
    with open(summary_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return csv_path, summary_path


def run(cfg, out_dir=None, jobs=1, dump_mesh=False):
    """Execute ``cfg``; return ``(exit_code, outcome)``.

    Exit code 0 when every assertion passes, 2 when one fails, 1 when the
    experiment could not be executed (including failed sweep rows).
    """
    out_dir = out_dir or cfg.output_path
    outcome = EXPERIMENT_FUNCS[cfg.experiment](cfg, jobs=jobs)
    write_outcome(cfg, outcome, out_dir)
    if dump_mesh:
        dump_meshes(cfg, out_dir)
    if outcome.errors:
        return EXIT_ERROR, outcome
    if all(c.passed for c in outcome.checks):
        return EXIT_OK, outcome
    return EXIT_FAILED, outcome

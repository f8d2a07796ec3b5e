"""Channel eigenvalues, dumbbell spectra and the convergence diagnostics."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import geometry
from .discretize import (assemble_mapped_channel_forms, build_channel_mesh,
                         build_dumbbell_forms, build_oscillating_forms)
from .eigensolve import EigenRequest, lobpcg
from .errors import DegeneracyError, HypothesisError, ParameterError

log = logging.getLogger(__name__)

DEGENERACY_GAP = 0.05
ZERO_MODE = 1e-8


@dataclass(frozen=True)
class TauResult:
    """Mixed channel eigenvalue at two mesh levels.

    ``tau`` is the fine-level value, ``extrapolated`` the order-2 Richardson
    estimate and ``margin`` twice the gap between levels.
    """

    epsilon: float
    tau: float
    mesh_levels: tuple
    extrapolated: float
    lower_bound: Optional[float] = None
    crude_floor: Optional[float] = None
    m_eps: Optional[float] = None
    upper_bound_if_applicable: Optional[float] = None
    converged: bool = True

    @property
    def margin(self):
        return 2.0 * abs(self.mesh_levels[0] - self.mesh_levels[1])


def richardson(coarse, fine, order=2):
    """Extrapolate two levels whose mesh size halves, error ~ h**order."""
    f = 2.0**order
    return fine + (fine - coarse) / (f - 1.0)


def channel_eigenvalues(profile, nx, ny, req, dirichlet=("gamma0",)):
    mesh = build_channel_mesh(profile, nx, ny)
    forms = assemble_mapped_channel_forms(mesh, profile, dirichlet=dirichlet)
    return lobpcg(forms, req)


def _tau(profile, nx, ny, req, dirichlet, kappa):
    levels = []
    converged = True
    for scale in (1, 2):
        res = channel_eigenvalues(profile, scale * nx, scale * ny, req, dirichlet)
        levels.append(float(res.values[0]))
        converged &= res.converged
    lower = crude = m = upper = None
    if kappa is not None and kappa < 1.0:
        bound = geometry.tau_lower_bound(profile, kappa)
        m, lower, crude = bound.m_eps, bound.bound, bound.crude_floor
    if geometry.is_nondecreasing_from_attachment(profile):
        upper = geometry.tau_upper_bound_nondecreasing(profile.L)
    return TauResult(
        epsilon=profile.epsilon,
        tau=levels[1],
        mesh_levels=tuple(levels),
        extrapolated=richardson(*levels),
        lower_bound=lower,
        crude_floor=crude,
        m_eps=m,
        upper_bound_if_applicable=upper,
        converged=converged,
    )


def compute_tau(profile, nx, ny, req=None, kappa=0.6):
    """First eigenvalue on the channel, Dirichlet on the attachment face only.

    Solved at ``(nx, ny)`` and ``(2 nx, 2 ny)``. Bounds are attached for
    reference but not enforced; any profile is accepted.
    """
    req = req or EigenRequest(k=1)
    return _tau(profile, nx, ny, req, ("gamma0",), kappa)


def compute_tau_two_dirichlet(profile, nx, ny, req=None, kappa=0.6):
    """As :func:`compute_tau` with Dirichlet on both channel ends."""
    req = req or EigenRequest(k=1)
    result = _tau(profile, nx, ny, req, ("gamma0", "gammaL"), None)
    return replace(result, upper_bound_if_applicable=None)


@dataclass(frozen=True)
class BracketSplit:
    """Where to cut a convex channel for Neumann bracketing.

    ``kind`` is ``"decreasing"``, ``"increasing"`` (``pieces`` holds the
    mirrored profile) or ``"interior"`` (cut at ``L_star``; the second
    piece is mirrored so its Dirichlet end sits at ``x = 0``).
    """

    kind: str
    L_star: Optional[float]
    pieces: tuple


def bracketing_split(profile, n=geometry.GRID_POINTS):
    L = profile.length
    s = np.linspace(0.0, L, n)
    if np.min(profile.gamma_ddot(s)) <= 0:
        raise HypothesisError("bracketing needs a strictly convex gamma")
    d = profile.gamma_dot(s)
    # a critical point at an end of the piece must not count as a sign change
    d = np.where(np.abs(d) <= 1e-12 * np.abs(d).max(), 0.0, d)
    sign = np.sign(d)
    nz = sign[sign != 0]
    changes = int(np.count_nonzero(np.diff(nz)))
    if changes > 1:
        raise HypothesisError(f"gamma' changes sign {changes} times on [0, L]")
    if changes == 0:
        if nz[0] < 0:
            return BracketSplit("decreasing", None, (profile,))
        return BracketSplit("increasing", None, (geometry.mirror_profile(profile),))
    lo, hi = 0.0, L
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if profile.gamma_dot(mid) < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-13:
            break
    L_star = 0.5 * (lo + hi)
    center = profile.expansion_point
    left = replace(profile, length=L_star, center=center)
    right_raw = replace(profile, center=center)
    right = geometry.mirror_profile(right_raw)
    right = replace(right, length=L - L_star)
    return BracketSplit("interior", L_star, (left, right))


@dataclass(frozen=True)
class BracketingCheck:
    split: BracketSplit
    tau_two_dirichlet: TauResult
    piece_taus: tuple

    @property
    def piece_min(self):
        return min(t.extrapolated for t in self.piece_taus)

    @property
    def margin(self):
        return self.tau_two_dirichlet.margin + max(t.margin for t in self.piece_taus)

    @property
    def holds(self):
        return self.tau_two_dirichlet.extrapolated >= self.piece_min - self.margin


def bracketing_check(profile, nx, ny, req=None):
    """Compare the two-Dirichlet eigenvalue with the bracketing pieces."""
    split = bracketing_split(profile)
    full = compute_tau_two_dirichlet(profile, nx, ny, req)
    pieces = tuple(compute_tau(p, nx, ny, req, kappa=None) for p in split.pieces)
    return BracketingCheck(split, full, pieces)


# -- dumbbell spectra ----------------------------------------------------------


@dataclass(frozen=True)
class DumbbellMesh:
    h_base: float = 1.0 / 64
    nx: int = 64
    ny: int = 16


@dataclass
class DumbbellSpectrum:
    values: np.ndarray
    vectors: np.ndarray  # nodal values, base nodes first
    forms: object
    converged: bool = True


def dumbbell_spectrum(domain, k, mesh=DumbbellMesh(), req=None):
    """First ``k`` Neumann eigenpairs on base rectangle plus channel."""
    req = req or EigenRequest(k=k)
    if req.k != k:
        req = replace(req, k=k)
    forms = build_dumbbell_forms(domain, mesh.h_base, mesh.nx, mesh.ny)
    res = lobpcg(forms, req)
    return DumbbellSpectrum(res.values, forms.expand(res.vectors), forms, res.converged)


def _h1_sq(K, M, x):
    return float(x @ (K @ x) + x @ (M @ x))


def eigenfunction_distance(spec_eps, spec_0, n):
    """H1 distance between the ``n``-th eigenfunctions (1-based) across domains.

    The base rectangle part is compared to the limit eigenfunction with the
    sign that minimizes the norm; the channel part is measured by itself.
    """
    vals0 = spec_0.values
    i = n - 1
    lam = vals0[i]
    neighbours = [vals0[j] for j in (i - 1, i + 1) if 0 <= j < len(vals0)]
    for other in neighbours:
        scale = max(abs(lam), abs(other))
        if scale > 0 and abs(lam - other) / scale < DEGENERACY_GAP:
            raise DegeneracyError(
                f"limit eigenvalue {n} ({lam:.6g}) is within {DEGENERACY_GAP:.0%} of a "
                "neighbour; choose a base rectangle with a simple spectrum")
    parts_e = spec_eps.forms.parts
    parts_0 = spec_0.forms.parts
    if not np.array_equal(parts_e.base_mesh.nodes, parts_0.base_mesh.nodes):
        raise ParameterError("base meshes differ; build both spectra with the same h_base")
    nb = parts_0.n_base
    u_eps = spec_eps.vectors[:nb, i]
    u_0 = spec_0.vectors[:nb, i]
    Kb, Mb = parts_0.base_K, parts_0.base_M
    base = min(_h1_sq(Kb, Mb, u_eps - s * u_0) for s in (1.0, -1.0))
    chan = 0.0
    if parts_e.channel_K is not None:
        u_c = spec_eps.vectors[nb:, i]
        chan = _h1_sq(parts_e.channel_K, parts_e.channel_M, u_c)
    return math.sqrt(base) + math.sqrt(chan)


def dirichlet_example_spectrum(a, eps, k, nx=256, ny=128, req=None):
    """First ``k`` Dirichlet eigenvalues of the oscillating-top domain."""
    req = req or EigenRequest(k=k)
    if req.k != k:
        req = replace(req, k=k)
    forms = build_oscillating_forms(a, eps, nx, ny)
    return lobpcg(forms, req).values


# -- sweeps -------------------------------------------------------------------


@dataclass
class SweepRow:
    epsilon: float
    values: list = field(default_factory=list)
    limit_values: list = field(default_factory=list)
    distances: list = field(default_factory=list)
    measure_excess: float = float("nan")
    domain_distance: float = float("nan")
    tau: Optional[TauResult] = None
    error: Optional[str] = None

    @property
    def relative_errors(self):
        """``|lam_n - lam0_n| / lam0_n``; absolute for the zero mode."""
        out = []
        for lam, lam0 in zip(self.values, self.limit_values):
            out.append(abs(lam - lam0) / lam0 if lam0 > ZERO_MODE else abs(lam - lam0))
        return out


@dataclass
class SpectralReport:
    rows: list
    slope: float = float("nan")
    intercept: float = float("nan")


def fit_tau_vs_inverse_eps(rows):
    """Least-squares line through ``(1/eps, tau_extrapolated)``."""
    pts = [(1.0 / r.epsilon, r.tau.extrapolated) for r in rows
           if r.tau is not None and r.error is None]
    if len(pts) < 2:
        return float("nan"), float("nan")
    x, y = np.array(pts).T
    slope, intercept = np.polyfit(x, y, 1)
    return float(slope), float(intercept)


def sweep_row(profile_at, eps, k, mesh, req, tau_mesh, kappa, base_height,
              limit=None):
    """One row of the convergence table; errors are recorded, not raised."""
    row = SweepRow(epsilon=eps)
    try:
        profile = profile_at(eps)
        domain = geometry.dumbbell(profile, base_height)
        limit = limit or dumbbell_spectrum(geometry.dumbbell(None, base_height), k, mesh, req)
        spec = dumbbell_spectrum(domain, k, mesh, req)
        row.values = [float(v) for v in spec.values]
        row.limit_values = [float(v) for v in limit.values]
        dists = []
        for n in range(1, k + 1):
            try:
                dists.append(eigenfunction_distance(spec, limit, n))
            except DegeneracyError:
                dists.append(float("nan"))
        row.distances = dists
        row.measure_excess = geometry.measure_excess(domain)
        row.domain_distance = geometry.domain_distance(domain)
        row.tau = compute_tau(profile, tau_mesh[0], tau_mesh[1], replace(req, k=1),
                              kappa=kappa)
    except Exception as exc:  # noqa: BLE001 - rows keep partial results
        log.exception("sweep row eps=%g failed", eps)
        row.error = f"{type(exc).__name__}: {exc}"
    return row


def convergence_sweep(profile_at, epsilons, k=6, mesh=DumbbellMesh(), req=None,
                      tau_mesh=(64, 64), kappa=0.6,
                      base_height=geometry.DEFAULT_BASE_HEIGHT):
    """Dumbbell spectra, eigenfunction distances and tau over an eps grid.

    ``profile_at(eps)`` builds the channel for each ``eps``. Rows come back
    ordered by ``eps`` descending.
    """
    req = req or EigenRequest(k=k)
    req = replace(req, k=k)
    if not epsilons:
        return SpectralReport(rows=[])
    limit = dumbbell_spectrum(geometry.dumbbell(None, base_height), k, mesh, req)
    rows = [sweep_row(profile_at, eps, k, mesh, req, tau_mesh, kappa, base_height, limit)
            for eps in epsilons]
    rows.sort(key=lambda r: -r.epsilon)
    slope, intercept = fit_tau_vs_inverse_eps(rows)
    return SpectralReport(rows, slope, intercept)

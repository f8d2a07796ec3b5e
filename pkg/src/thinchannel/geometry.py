"""Channel profiles, perturbed domains and closed-form geometric quantities.

A channel of length ``L`` is attached to the right edge ``x = 0`` of the base
rectangle ``(-1, 0) x (-h/2, h/2)``::

    R = {(x, y) : 0 < x < L, |y| < g(x)}

The half-width ``g`` is built from a polynomial ``gamma`` either directly
(``g = gamma``) or through the thinning power ``g = gamma ** (1 / eps)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from numpy.polynomial import Polynomial

from .errors import EvaluationError, ParameterError

FAMILIES = ("gamma-power", "direct")
VARIANTS = ("dumbbell-neumann", "channel-mixed", "dirichlet-oscillating")

GRID_POINTS = 10_001
DEFAULT_BASE_HEIGHT = 0.83


@dataclass(frozen=True)
class ChannelProfile:
    """Half-width profile of a thin channel.

    ``gamma(s) = sum_k c_k (center - s)**k`` on ``s in [0, length]``;
    ``center`` defaults to ``length``, i.e. a polynomial in ``(L - s)``.

    Parameters
    ----------
    coefficients : sequence of float
        Polynomial coefficients ``c_0, c_1, ...``.
    epsilon : float
        Thinning parameter, > 0.
    length : float
        Channel length ``L`` before scaling, > 0.
    dimension : int
        Space dimension ``N`` >= 2.
    family : {"gamma-power", "direct"}
        ``g = gamma**(1/eps)`` or ``g = gamma``.
    center : float, optional
        Expansion point of the polynomial.
    rho : float
        Homothety factor; the physical channel is ``rho * R``.
    """

    coefficients: tuple
    epsilon: float = 1.0
    length: float = 1.0
    dimension: int = 2
    family: str = "gamma-power"
    center: Optional[float] = None
    rho: float = 1.0
    _poly: Polynomial = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        coeffs = tuple(float(c) for c in self.coefficients)
        if not coeffs:
            raise ParameterError("coefficients must not be empty")
        if not self.epsilon > 0:
            raise ParameterError(f"epsilon must be > 0, got {self.epsilon}")
        if not self.length > 0:
            raise ParameterError(f"length must be > 0, got {self.length}")
        if int(self.dimension) != self.dimension or self.dimension < 2:
            raise ParameterError(f"dimension must be an integer >= 2, got {self.dimension}")
        if self.family not in FAMILIES:
            raise ParameterError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if not self.rho > 0:
            raise ParameterError(f"rho must be > 0, got {self.rho}")
        object.__setattr__(self, "coefficients", coeffs)
        object.__setattr__(self, "_poly", Polynomial(coeffs))

    # -- base coordinates s in [0, length] ---------------------------------

    @property
    def expansion_point(self):
        return self.length if self.center is None else float(self.center)

    def gamma(self, s):
        return self._poly(self.expansion_point - np.asarray(s, dtype=float))

    def gamma_dot(self, s):
        return -self._poly.deriv(1)(self.expansion_point - np.asarray(s, dtype=float))

    def gamma_ddot(self, s):
        return self._poly.deriv(2)(self.expansion_point - np.asarray(s, dtype=float))

    def log_derivatives_base(self, s):
        """Return ``(g'/g, g''/g)`` in base coordinates.

        Written in terms of ``gamma`` so that nothing underflows when
        ``g = gamma**(1/eps)`` is tiny.
        """
        gam = self.gamma(s)
        r = self.gamma_dot(s) / gam
        q = self.gamma_ddot(s) / gam
        if self.family == "direct":
            return r, q
        inv = 1.0 / self.epsilon
        return inv * r, inv * (inv - 1.0) * r**2 + inv * q

    # -- physical channel coordinate x in [0, rho * length] ----------------

    @property
    def L(self):
        """Physical channel length ``rho * length``."""
        return self.rho * self.length

    def g(self, x):
        s = np.asarray(x, dtype=float) / self.rho
        gam = self.gamma(s)
        if self.family == "direct":
            return self.rho * gam
        return self.rho * np.power(gam, 1.0 / self.epsilon)

    def g_dot(self, x):
        ratio, _ = self.log_derivatives(x)
        return ratio * self.g(x)

    def g_ddot(self, x):
        _, ratio2 = self.log_derivatives(x)
        return ratio2 * self.g(x)

    def log_derivatives(self, x):
        """Return ``(g'/g, g''/g)`` at physical positions ``x``."""
        r, q = self.log_derivatives_base(np.asarray(x, dtype=float) / self.rho)
        return r / self.rho, q / self.rho**2


def reference_profile(epsilon, length=1.0, dimension=2):
    """``gamma(s) = 0.3 + 0.2 (L - s)**2`` with ``g = gamma**(1/eps)``."""
    return ChannelProfile((0.3, 0.0, 0.2), epsilon=epsilon, length=length,
                          dimension=dimension)


def constant_profile(width, length=1.0, dimension=2, epsilon=1.0):
    """Straight channel of half-width ``width``, independent of ``epsilon``."""
    return ChannelProfile((width,), epsilon=epsilon, length=length,
                          dimension=dimension, family="direct")


def mirror_profile(profile):
    """Reflect the channel about its midpoint, ``s -> L - s``."""
    coeffs = tuple(c * (-1) ** k for k, c in enumerate(profile.coefficients))
    return replace(profile, coefficients=coeffs,
                   center=profile.length - profile.expansion_point)


def scale_channel(profile, rho):
    """Descriptor of the dilated channel ``rho * R`` (length and width scaled)."""
    if not rho > 0:
        raise ParameterError(f"rho must be > 0, got {rho}")
    return replace(profile, rho=profile.rho * rho)


# -- hypotheses on gamma ----------------------------------------------------


@dataclass(frozen=True)
class HypothesisReport:
    alpha0: float
    alpha1: float
    alpha2: float
    gamma_dot_at_L: float
    bounds_ok: bool
    endpoint_ok: bool
    convex_ok: bool

    @property
    def satisfied(self):
        return self.bounds_ok and self.endpoint_ok and self.convex_ok


def _golden_min(f, a, b, tol=1e-12, maxiter=200):
    """Golden-section search for a local minimum of ``f`` on ``[a, b]``."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(maxiter):
        if abs(b - a) <= tol * (1.0 + abs(a) + abs(b)):
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    return x, f(x)


def _grid_min(f, lo, hi, n=GRID_POINTS):
    """Minimum of ``f`` over a grid, refined by golden section around the argmin."""
    s = np.linspace(lo, hi, n)
    vals = np.asarray(f(s), dtype=float)
    bad = ~np.isfinite(vals)
    if bad.any():
        raise EvaluationError(f"non-finite value at s={s[np.argmax(bad)]!r}")
    i = int(np.argmin(vals))
    best = float(vals[i])
    a, b = s[max(i - 1, 0)], s[min(i + 1, n - 1)]
    _, refined = _golden_min(lambda t: float(f(t)), a, b)
    return min(best, refined)


def check_hypotheses(profile, n=GRID_POINTS):
    """Tight constants ``alpha0 <= gamma <= alpha1``, ``gamma'' >= alpha2``.

    Evaluated over ``s in [0, L]`` in base coordinates on ``n`` grid points
    with golden-section refinement of each extremum.
    """
    L = profile.length
    for fn, name in ((profile.gamma, "gamma"), (profile.gamma_dot, "gamma'"),
                     (profile.gamma_ddot, "gamma''")):
        s = np.linspace(0.0, L, n)
        v = fn(s)
        bad = ~np.isfinite(v)
        if bad.any():
            raise EvaluationError(f"{name} is not finite at s={s[np.argmax(bad)]!r}")
    alpha0 = _grid_min(profile.gamma, 0.0, L, n)
    alpha1 = -_grid_min(lambda s: -profile.gamma(s), 0.0, L, n)
    alpha2 = _grid_min(profile.gamma_ddot, 0.0, L, n)
    gdot_L = float(profile.gamma_dot(L))
    return HypothesisReport(
        alpha0=alpha0,
        alpha1=alpha1,
        alpha2=alpha2,
        gamma_dot_at_L=gdot_L,
        bounds_ok=bool(0.0 < alpha0 <= alpha1 < 1.0),
        endpoint_ok=gdot_L <= 0.0,
        convex_ok=alpha2 > 0.0,
    )


def kappa_from_delta(dimension, delta):
    """``kappa = (N-1)/2 - (N-1-delta) + 1``."""
    n1 = dimension - 1
    return n1 / 2.0 - (n1 - delta) + 1.0


def m_eps(profile, kappa):
    """Infimum over the channel axis of ``g''/g - kappa (g'/g)**2``."""
    if not kappa < 1.0:
        raise ParameterError(f"kappa must be < 1, got {kappa}")

    def integrand(x):
        r, q = profile.log_derivatives(x)
        return q - kappa * r**2

    return _grid_min(integrand, 0.0, profile.L)


@dataclass(frozen=True)
class TauLowerBound:
    m_eps: float
    bound: float
    crude_floor: Optional[float]


def tau_lower_bound(profile, kappa):
    """Lower bound ``(N-1)/2 * m_eps`` for the mixed channel eigenvalue.

    Also returns the cruder floor ``(N-1)/2 * alpha2 / (alpha1 * eps)``,
    which holds once ``1/eps (1/eps - 1) - kappa / eps**2 >= 0``; it is
    ``None`` when that fails or the profile is not of the power family.
    """
    m = m_eps(profile, kappa)
    half = (profile.dimension - 1) / 2.0
    crude = None
    eps = profile.epsilon
    if profile.family == "gamma-power" and eps <= 1.0 - kappa:
        rep = check_hypotheses(profile)
        if rep.alpha2 > 0 and rep.alpha1 > 0:
            crude = half * rep.alpha2 / (rep.alpha1 * eps) / profile.rho**2
    return TauLowerBound(m_eps=m, bound=half * m, crude_floor=crude)


def tau_upper_bound_nondecreasing(L):
    """``pi**2 / (2L)**2``; valid when ``g(s) >= g(0)`` for every ``s``."""
    if not L > 0:
        raise ParameterError(f"L must be > 0, got {L}")
    return math.pi**2 / (2.0 * L) ** 2


def is_nondecreasing_from_attachment(profile, n=GRID_POINTS):
    """True when ``g(x) >= g(0)`` on the whole channel."""
    x = np.linspace(0.0, profile.L, n)
    g = profile.g(x)
    return bool(np.all(g >= g[0] * (1.0 - 1e-14)))


# -- domains -----------------------------------------------------------------


@dataclass(frozen=True)
class PerturbedDomain:
    """Base rectangle plus exterior perturbation.

    For ``dumbbell-neumann`` and ``channel-mixed`` the base is
    ``(-1, 0) x (-h/2, h/2)`` and the channel attaches on ``x = 0``.
    For ``dirichlet-oscillating`` the base is ``(0, 1) x (-1, 0)`` and the
    top boundary is ``y = a (1 + sin(x / eps))``.
    """

    variant: str
    channel: Optional[ChannelProfile] = None
    base_height: float = DEFAULT_BASE_HEIGHT
    amplitude: float = 0.0
    epsilon: Optional[float] = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ParameterError(f"unknown variant {self.variant!r}")
        if self.variant == "dirichlet-oscillating":
            if self.amplitude < 0:
                raise ParameterError("amplitude must be >= 0")
            if self.epsilon is None or not self.epsilon > 0:
                raise ParameterError("oscillating domain needs epsilon > 0")
            return
        if not self.base_height > 0:
            raise ParameterError("base_height must be > 0")
        if self.variant == "channel-mixed" and self.channel is None:
            raise ParameterError("channel-mixed domain needs a channel")
        if self.channel is not None and not self.attachment_half_width < self.base_height / 2:
            raise ParameterError(
                f"channel half-width at attachment {self.attachment_half_width:g} "
                f"must be below base half-height {self.base_height / 2:g}")

    @property
    def attachment_half_width(self):
        return 0.0 if self.channel is None else float(self.channel.g(0.0))

    def top(self, x):
        """Top boundary of the oscillating domain."""
        x = np.asarray(x, dtype=float)
        return self.amplitude * (1.0 + np.sin(x / self.epsilon))


def dumbbell(profile, base_height=DEFAULT_BASE_HEIGHT):
    return PerturbedDomain("dumbbell-neumann", channel=profile, base_height=base_height)


def oscillating(amplitude, epsilon):
    return PerturbedDomain("dirichlet-oscillating", amplitude=amplitude, epsilon=epsilon)


def adaptive_simpson(f: Callable[[float], float], a, b, rtol=1e-10, panels=64,
                     max_depth=50):
    """Adaptive Simpson quadrature of a scalar function on ``[a, b]``.

    The interval is pre-split into ``panels`` pieces so that oscillatory
    integrands are not accepted on a lucky first estimate.
    """

    def simpson(fa, fm, fb, h):
        return h / 6.0 * (fa + 4.0 * fm + fb)

    edges = np.linspace(a, b, panels + 1)
    coarse = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        mid = 0.5 * (lo + hi)
        flo, fmid, fhi = f(lo), f(mid), f(hi)
        coarse.append((lo, hi, flo, fmid, fhi, simpson(flo, fmid, fhi, hi - lo)))
    scale = abs(sum(c[-1] for c in coarse)) or 1.0
    atol = rtol * scale

    total = 0.0
    stack = [(lo, hi, flo, fm, fhi, whole, atol / panels, 0)
             for lo, hi, flo, fm, fhi, whole in coarse]
    while stack:
        lo, hi, flo, fm, fhi, whole, tol, depth = stack.pop()
        mid = 0.5 * (lo + hi)
        lm, rm = 0.5 * (lo + mid), 0.5 * (mid + hi)
        flm, frm = f(lm), f(rm)
        left = simpson(flo, flm, fm, mid - lo)
        right = simpson(fm, frm, fhi, hi - mid)
        diff = left + right - whole
        if depth >= max_depth or abs(diff) <= 15.0 * tol:
            total += left + right + diff / 15.0
        else:
            stack.append((lo, mid, flo, flm, fm, left, tol / 2.0, depth + 1))
            stack.append((mid, hi, fm, frm, fhi, right, tol / 2.0, depth + 1))
    return total


def measure_excess(domain):
    """Area of ``Omega_eps minus Omega_0`` (two-dimensional domains only)."""
    if domain.variant == "dirichlet-oscillating":
        return adaptive_simpson(lambda x: float(domain.top(x)), 0.0, 1.0)
    ch = domain.channel
    if ch is None:
        return 0.0
    if ch.dimension != 2:
        raise ParameterError("measure_excess is implemented for N = 2 only")
    return 2.0 * adaptive_simpson(lambda x: float(ch.g(x)), 0.0, ch.L)


def domain_distance(domain, n=200_001):
    """``sup_{x in Omega_eps} dist(x, Omega_0)``."""
    if domain.variant == "dirichlet-oscillating":
        x = np.linspace(0.0, 1.0, n)
        return float(np.max(domain.top(x)))
    if domain.channel is None:
        return 0.0
    return float(domain.channel.L)

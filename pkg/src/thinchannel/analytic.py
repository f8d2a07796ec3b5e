"""Closed-form spectra used as oracles."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import bisect

from .errors import ParameterError

ROBIN_BRACKET_TOP = (math.pi / 2.0) ** 2 - 1e-9


def _rect_eigs(a, b, k, start):
    if not (a > 0 and b > 0):
        raise ParameterError("rectangle sides must be positive")
    if k < 1:
        raise ParameterError("k must be >= 1")
    idx = np.arange(start, start + k)
    m, n = np.meshgrid(idx, idx, indexing="ij")
    vals = np.pi**2 * ((m / a) ** 2 + (n / b) ** 2)
    return np.sort(vals.ravel())[:k]


def rect_neumann_eigs(a, b, k):
    """First ``k`` Neumann eigenvalues of an ``a x b`` rectangle, with multiplicity."""
    return _rect_eigs(a, b, k, 0)


def rect_dirichlet_eigs(a, b, k):
    """First ``k`` Dirichlet eigenvalues of an ``a x b`` rectangle."""
    return _rect_eigs(a, b, k, 1)


def const_channel_tau(L):
    """Quarter-wave eigenvalue of a straight channel, Dirichlet at one end."""
    if not L > 0:
        raise ParameterError("L must be > 0")
    return (math.pi / (2.0 * L)) ** 2


def const_channel_tau_two_dirichlet(L):
    """Half-wave eigenvalue of a straight channel, Dirichlet at both ends."""
    if not L > 0:
        raise ParameterError("L must be > 0")
    return (math.pi / L) ** 2


@dataclass(frozen=True)
class RobinEigenvalue:
    eta: float
    lam: float
    dimension: int = 2

    @property
    def ratio(self):
        return self.lam / self.eta if self.eta > 0 else float(self.dimension - 1)

    @property
    def residual(self):
        r = math.sqrt(self.lam)
        return abs(r * math.tan(r) - self.eta)


def robin_interval_lambda(eta):
    """First eigenvalue of ``-psi'' = lam psi`` on ``(-1, 1)`` with ``psi' + eta psi = 0``.

    The even ground state ``cos(sqrt(lam) y)`` gives the secular equation
    ``sqrt(lam) tan(sqrt(lam)) = eta``, solved by bisection.
    """
    if eta < 0:
        raise ParameterError(f"eta must be >= 0, got {eta}")
    if eta == 0:
        return RobinEigenvalue(0.0, 0.0)

    def secular(lam):
        r = math.sqrt(lam)
        return r * math.tan(r) - eta

    lam = bisect(secular, 0.0, ROBIN_BRACKET_TOP, xtol=1e-15, rtol=4 * np.finfo(float).eps,
                 maxiter=400)
    return RobinEigenvalue(float(eta), float(lam))


def robin_limit_ratio(N):
    """``|S_1| / |B_1| = N - 1`` for the unit ball of dimension ``N - 1``."""
    if N < 2:
        raise ParameterError("N must be >= 2")
    return N - 1


def robin_upper_bound(eta, N=2):
    """Constant test function bound ``lam(eta) <= eta (N - 1)``."""
    return eta * robin_limit_ratio(N)

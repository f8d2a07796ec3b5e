import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from thinchannel import analytic
from thinchannel.errors import ParameterError

PI2 = math.pi**2


def mp_robin(eta):
    """High-precision root of x tan x = eta, squared."""
    with mpmath.workdps(40):
        x = mpmath.findroot(lambda t: t * mpmath.sin(t) - eta * mpmath.cos(t),
                            (mpmath.mpf(0), mpmath.pi / 2), solver="illinois")
        return float(x**2)


def test_neumann_unit_square():
    np.testing.assert_allclose(analytic.rect_neumann_eigs(1, 1, 4), [0, PI2, PI2, 2 * PI2])


def test_neumann_base_rectangle():
    np.testing.assert_allclose(analytic.rect_neumann_eigs(1, 0.83, 3),
                               [0, PI2, PI2 / 0.83**2], rtol=1e-14)
    assert analytic.rect_neumann_eigs(1, 0.83, 3)[2] == pytest.approx(14.3266, abs=1e-4)


def test_neumann_long_rectangle():
    np.testing.assert_allclose(analytic.rect_neumann_eigs(2, 1, 2), [0, PI2 / 4])


@pytest.mark.parametrize("a, b, k, expected", [
    (1, 1, 1, [2 * PI2]),
    (1, 1, 3, [2 * PI2, 5 * PI2, 5 * PI2]),
    (1, 2, 1, [PI2 * 1.25]),
])
def test_dirichlet_rectangles(a, b, k, expected):
    np.testing.assert_allclose(analytic.rect_dirichlet_eigs(a, b, k), expected)


def test_rect_enumeration_against_brute_force():
    a, b, k = 1.0, 0.83, 12
    brute = sorted(PI2 * (m * m / a**2 + n * n / b**2) for m in range(20) for n in range(20))
    np.testing.assert_allclose(analytic.rect_neumann_eigs(a, b, k), brute[:k])


@settings(max_examples=50, deadline=None)
@given(a=st.floats(0.2, 5), b=st.floats(0.2, 5), k=st.integers(1, 15))
def test_rect_symmetric_in_sides(a, b, k):
    np.testing.assert_allclose(analytic.rect_neumann_eigs(a, b, k),
                               analytic.rect_neumann_eigs(b, a, k), rtol=1e-13)


def test_rect_rejects_bad_sides():
    with pytest.raises(ParameterError):
        analytic.rect_neumann_eigs(0, 1, 3)


@pytest.mark.parametrize("L, expected", [(1, 2.4674011), (2, 0.61685028), (0.5, 9.8696044)])
def test_const_channel_tau(L, expected):
    assert analytic.const_channel_tau(L) == pytest.approx(expected, rel=1e-7)


def test_const_channel_two_dirichlet():
    assert analytic.const_channel_tau_two_dirichlet(1.0) == pytest.approx(PI2)


def test_robin_zero():
    r = analytic.robin_interval_lambda(0.0)
    assert r.lam == 0.0


def test_robin_eta_one():
    r = analytic.robin_interval_lambda(1.0)
    assert r.lam == pytest.approx(0.74017, abs=1e-5)
    assert r.lam == pytest.approx(mp_robin(1.0), abs=1e-12)


@pytest.mark.parametrize("eta", [1e-3, 1e-2, 0.1, 1.0, 10.0, 100.0])
def test_robin_against_mpmath(eta):
    r = analytic.robin_interval_lambda(eta)
    assert r.lam == pytest.approx(mp_robin(eta), abs=1e-12)
    assert r.residual < 1e-10


def test_robin_small_eta_ratio():
    assert 0.999 < analytic.robin_interval_lambda(1e-3).ratio < 1.0


def test_robin_rejects_negative():
    with pytest.raises(ParameterError):
        analytic.robin_interval_lambda(-0.1)


@settings(max_examples=60, deadline=None)
@given(e1=st.floats(1e-6, 50), e2=st.floats(1e-6, 50))
def test_robin_monotone_and_bounded(e1, e2):
    lo, hi = sorted((e1, e2))
    r_lo, r_hi = analytic.robin_interval_lambda(lo), analytic.robin_interval_lambda(hi)
    assert r_lo.lam <= r_hi.lam
    assert r_lo.ratio >= r_hi.ratio - 1e-12
    assert r_hi.lam <= analytic.robin_upper_bound(hi)
    assert r_hi.lam < (math.pi / 2) ** 2


@pytest.mark.parametrize("N, expected", [(2, 1), (3, 2), (5, 4)])
def test_robin_limit_ratio(N, expected):
    assert analytic.robin_limit_ratio(N) == expected

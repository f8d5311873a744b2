import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kentmix.norm_series import (
    DEFAULT_CONFIG,
    SeriesConfig,
    SeriesConvergenceError,
    asymptotic_log_c,
    log_bessel_i,
    log_norm_const,
    norm_terms,
    series_S1,
    series_S2,
)

TIGHT = SeriesConfig(rel_tol=1e-12)

# ln of c, c_k, c_kk, c_b, c_kb, c_bb by adaptive quadrature over the sphere
# (mpmath, 20 digits), frozen
QUADRATURE = {
    (10.0, 2.5): (9.6307787610035616, 9.5071227739716771, 9.4012934578998672,
                  7.1029040409744004, 6.7597597928412119, 6.5044339446321123),
    (1.0, 0.25): (2.7000684997155973, 1.5344447348329461, 1.711954089330665,
                  -0.10035688138144264, -2.0639346517483144, 1.2974578521573457),
}


@pytest.mark.parametrize("key", sorted(QUADRATURE))
def test_terms_match_quadrature(key):
    got = norm_terms(*key, TIGHT)
    np.testing.assert_allclose(got, QUADRATURE[key], rtol=0, atol=1e-12)


@pytest.mark.parametrize("kappa", [0.01, 0.1, 1.0, 10.0, 100.0, 700.0])
def test_vmf_limit(kappa):
    exact = math.log(4 * math.pi) + kappa + math.log1p(-math.exp(-2 * kappa)) - math.log(2 * kappa)
    assert log_norm_const(kappa, 0.0) == pytest.approx(exact, rel=1e-12, abs=1e-12)


def test_beta_zero_derivatives():
    t = norm_terms(5.0, 0.0)
    assert t.log_c_b == -math.inf and t.log_c_kb == -math.inf
    # c_bb has a finite limit as beta -> 0
    assert np.isfinite(t.log_c_bb)
    assert t.log_c_bb == pytest.approx(norm_terms(5.0, 1e-7, TIGHT).log_c_bb, abs=1e-6)


@pytest.mark.parametrize("order", [0.5, 2.5, 10.5, 60.5])
@pytest.mark.parametrize("kappa", [0.05, 3.0, 250.0])
def test_log_bessel_matches_mpmath(order, kappa):
    ref = float(mpmath.log(mpmath.besseli(order, kappa)))
    assert log_bessel_i(order, kappa) == pytest.approx(ref, rel=1e-12, abs=1e-12)


def test_log_bessel_underflow_branch():
    # ive underflows here; the power series takes over
    ref = float(mpmath.log(mpmath.besseli(400.5, 0.5)))
    assert log_bessel_i(400.5, 0.5) == pytest.approx(ref, rel=1e-12)


def test_log_bessel_vector_and_domain():
    out = log_bessel_i(np.array([0.5, 1.5]), 2.0)
    assert out.shape == (2,)
    with pytest.raises(ValueError):
        log_bessel_i(0.5, 0.0)
    with pytest.raises(ValueError):
        log_bessel_i(-1.0, 1.0)


def test_domain_errors():
    with pytest.raises(ValueError):
        norm_terms(0.0, 0.0)
    with pytest.raises(ValueError):
        norm_terms(1.0, 0.5)
    with pytest.raises(ValueError):
        norm_terms(1.0, -0.1)
    with pytest.raises(ValueError):
        norm_terms(1.0, 0.1, SeriesConfig(rel_tol=0.0))


def test_max_terms_exhausted():
    with pytest.raises(SeriesConvergenceError):
        log_norm_const(500.0, 249.0, SeriesConfig(rel_tol=1e-12, max_terms=2))


def test_log_c_agrees_with_full_terms():
    for k, b in [(0.3, 0.1), (40.0, 19.0), (900.0, 100.0)]:
        assert log_norm_const(k, b) == pytest.approx(norm_terms(k, b).log_c, rel=1e-12)


def test_individual_series():
    t = norm_terms(8.0, 3.0, TIGHT)
    assert series_S1(0, 8.0, 3.0, TIGHT) == pytest.approx(t.log_c, rel=1e-12)
    assert series_S1(1, 8.0, 3.0, TIGHT) == pytest.approx(t.log_c_k, rel=1e-12)
    assert series_S2(0, 8.0, 3.0, TIGHT) == pytest.approx(t.log_c_b, rel=1e-12)
    assert series_S2(1, 8.0, 3.0, TIGHT) == pytest.approx(t.log_c_kb, rel=1e-12)
    with pytest.raises(ValueError):
        series_S2(0, 8.0, 0.0)


def test_default_tolerance_close_to_tight():
    for k, b in [(1.0, 0.4), (50.0, 20.0)]:
        assert log_norm_const(k, b, DEFAULT_CONFIG) == pytest.approx(log_norm_const(k, b, TIGHT), abs=1e-5)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.05, 500.0), st.floats(0.0, 0.99))
def test_moment_identities(kappa, ecc):
    beta = 0.5 * ecc * kappa
    t = norm_terms(kappa, beta, TIGHT)
    r1 = math.exp(t.log_c_k - t.log_c)
    l1 = math.exp(t.log_c_kk - t.log_c)
    assert 0.0 < r1 < 1.0
    assert r1 * r1 <= l1 + 1e-12  # Jensen
    assert l1 <= 1.0 + 1e-12
    if beta > 0:
        cb = math.exp(t.log_c_b - t.log_c)
        # E[(g2.x)^2 - (g3.x)^2] is bounded by E[1 - (g1.x)^2]
        assert 0.0 < cb <= 1.0 - l1 + 1e-12


@settings(max_examples=40, deadline=None)
@given(st.floats(0.1, 300.0), st.floats(0.0, 0.95))
def test_log_c_increasing(kappa, ecc):
    beta = 0.5 * ecc * kappa
    base = log_norm_const(kappa, beta, TIGHT)
    assert log_norm_const(kappa * 1.01, beta, TIGHT) > base
    assert log_norm_const(kappa, beta + 0.004 * kappa, TIGHT) >= base


def test_asymptotic_approaches_series():
    rel = [abs(math.expm1(log_norm_const(k, 0.05 * k, TIGHT) - asymptotic_log_c(k, 0.05 * k)))
           for k in (100.0, 1000.0, 5000.0)]
    assert rel[0] > rel[1] > rel[2]

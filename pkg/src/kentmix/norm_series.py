"""
Log-scale evaluation of the Kent normalization constant and its partials.

With ``e = 2 beta / kappa`` and ``p_j = 2j + 1/2`` the constant is::

    c(kappa, beta) = 2 pi sqrt(2/kappa) sum_j G(j+1/2)/G(j+1) e^(2j) I_{p_j}(kappa)

Differentiating term by term gives series of the same shape with shifted
Bessel orders (kappa derivatives) or reweighted coefficients (beta
derivatives). Every series is summed with a log-sum-exp so nothing overflows
for large kappa.
"""

import logging
from functools import lru_cache
from typing import NamedTuple

import numpy as np
from scipy.special import gammaln, ive

logger = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)

# ive below this is treated as underflowed and recomputed from the power series
_IVE_TINY = 1e-280
_BLOCK = 8


class SeriesConfig(NamedTuple):
    """
    :param rel_tol: stop once a term falls below ``rel_tol`` times the running sum
    :param max_terms: hard cap on the number of series terms
    """
    rel_tol: float = 1e-6
    max_terms: int = 10000

    def validate(self):
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")
        if self.max_terms < 1:
            raise ValueError("max_terms must be at least 1")


DEFAULT_CONFIG = SeriesConfig()


class NormTerms(NamedTuple):
    """Natural logs of c and its partials; ``-inf`` marks an exact zero."""
    log_c: float
    log_c_k: float
    log_c_kk: float
    log_c_b: float
    log_c_kb: float
    log_c_bb: float


class SeriesConvergenceError(RuntimeError):
    pass


def _log_bessel_series(order, kappa, n_terms=40):
    """
    Power series of ln I_v(x), used where the scaled Bessel underflows. That
    only happens for orders far above ``x``, where the series converges fast.
    """
    order = np.atleast_1d(np.asarray(order, dtype=float))
    k = np.arange(n_terms)[:, None]
    half = np.log(0.5 * kappa)
    log_terms = 2.0 * k * half - gammaln(k + 1.0) - gammaln(order[None, :] + k + 1.0)
    return order * half + _row_logsumexp(log_terms.T)


def log_bessel_i(order, kappa):
    """
    Natural log of the modified Bessel function of the first kind.

    :param order: nonnegative order (scalar or array)
    :param kappa: positive argument
    :return: ``ln I_order(kappa)`` with the same shape as ``order``
    """
    if not kappa > 0:
        raise ValueError("kappa must be positive, got {}".format(kappa))
    order = np.asarray(order, dtype=float)
    if np.any(order < 0):
        raise ValueError("order must be nonnegative")
    scalar = order.ndim == 0
    out = _log_bessel_unchecked(np.atleast_1d(order), kappa)
    return float(out[0]) if scalar else out


def _log_bessel_unchecked(order, kappa):
    scaled = ive(order, kappa)
    bad = ~(scaled > _IVE_TINY)
    if bad.any():
        scaled[bad] = 1.0
        out = np.log(scaled) + kappa
        out[bad] = _log_bessel_series(order[bad], kappa)
        return out
    return np.log(scaled) + kappa


def _check_domain(kappa, beta):
    if not kappa > 0:
        raise ValueError("kappa must be positive, got {}".format(kappa))
    if beta < 0:
        raise ValueError("beta must be nonnegative, got {}".format(beta))
    if not 2.0 * beta < kappa:
        raise ValueError("eccentricity 2*beta/kappa must be below 1 (kappa={}, beta={})".format(kappa, beta))


_SERIES_NAMES = ("s1_0", "s1_1", "s1_2", "s2_0", "s2_1", "s_bb")


@lru_cache(maxsize=256)
def _coefficients(n_terms):
    """Log coefficients of the c-type and beta-type series for j = 0 .. n_terms-1."""
    j = np.arange(n_terms, dtype=float)
    coef1 = gammaln(j + 0.5) - gammaln(j + 1.0)
    coef2 = np.full(n_terms, -np.inf)
    coef2[1:] = gammaln(j[1:] + 0.5) - gammaln(j[1:])
    coef_bb = coef2 + np.log(np.abs(2.0 * j - 1.0))
    orders = 0.5 + np.arange(2 * n_terms + 2)
    return j, coef1, coef2, coef_bb, orders


@lru_cache(maxsize=1024)
def _log_bessel_orders(kappa, n_terms):
    """
    ``ln I_{1/2+k}(kappa)`` for k = 0 .. 2*n_terms+1, covering p_j, p_j+1 and
    p_j+2. Cached on kappa alone since it does not involve beta.
    """
    out = _log_bessel_unchecked(_coefficients(n_terms)[4], kappa)
    out.flags.writeable = False
    return out


def _series_log_terms(kappa, beta, n_terms):
    """
    Log terms of the six series as a ``(6, n_terms)`` array, rows ordered
    as ``_SERIES_NAMES``. The beta series start at ``j = 1`` so their
    ``j = 0`` entries are ``-inf``.
    """
    j, coef1, coef2, coef_bb, _ = _coefficients(n_terms)
    log_i = _log_bessel_orders(kappa, n_terms)
    i0 = log_i[0:2 * n_terms:2]
    i1 = log_i[1:2 * n_terms + 1:2]
    i2 = log_i[2:2 * n_terms + 2:2]
    out = np.full((6, n_terms), -np.inf)
    if beta == 0.0:
        # only the leading term of each series survives
        out[0, 0], out[1, 0], out[2, 0] = coef1[0] + i0[0], coef1[0] + i1[0], coef1[0] + i2[0]
        if n_terms > 1:
            out[5, 1] = coef_bb[1] + i0[1]
        return out
    log_e = np.log(2.0 * beta / kappa)
    pow_even = 2.0 * j * log_e
    pow_odd = pow_even - log_e
    out[0] = coef1 + pow_even + i0
    out[1] = coef1 + pow_even + i1
    out[2] = coef1 + pow_even + i2
    out[3, 1:] = coef2[1:] + pow_odd[1:] + i0[1:]
    out[4, 1:] = coef2[1:] + pow_odd[1:] + i1[1:]
    out[5, 1:] = coef_bb[1:] + pow_odd[1:] - log_e + i0[1:]
    return out


def _cutoffs(log_t, rel_tol):
    """
    Per row, the number of terms to keep: up to and including the first term
    below ``rel_tol`` of the running sum at a point where the terms are still
    shrinking (otherwise a later term may dominate). ``-1`` marks a row that
    has not converged within the available terms.
    """
    return _truncate(log_t, rel_tol)[0]


def _truncate(log_t, rel_tol):
    """:func:`_cutoffs` together with the log of each truncated row sum."""
    peak = log_t.max(axis=1)
    empty = ~np.isfinite(peak)
    peak[empty] = 0.0
    w = np.exp(log_t - peak[:, None])
    running = np.cumsum(w, axis=1)
    ok = w <= rel_tol * running
    ok[:, :-1] &= w[:, 1:] < w[:, :-1]
    ok[:, -1] = False
    # exact zeros past the leading terms count as converged
    ok[:, 2:] |= w[:, 2:] == 0.0
    ok[:, :2] &= running[:, :2] > 0
    first = np.argmax(ok, axis=1)
    found = ok[np.arange(len(first)), first]
    out = np.where(found, first + 1, -1)
    out[empty] = 1
    with np.errstate(divide="ignore"):
        log_sum = peak + np.log(running[np.arange(len(out)), np.maximum(out, 1) - 1])
    log_sum[empty] = -np.inf
    return out, log_sum


def series_log_terms(kappa, beta, cfg=DEFAULT_CONFIG):
    """
    All six series as a dict of log-term arrays, truncated once each converges.

    Terms are generated in blocks; the block that satisfies the stopping rule
    is kept whole, so a few terms past the cutoff are included.
    """
    return dict(zip(_SERIES_NAMES, _series_matrix(kappa, beta, cfg)))


def _initial_block(kappa, beta, rel_tol):
    """
    First guess at the number of terms. The terms fall off like ``e^(2j)``
    and, past about ``sqrt(kappa)``, like a Gaussian in ``j``; the smaller
    bound wins. The cutoff itself does not depend on this guess.
    """
    target = 4.0 * np.sqrt(kappa) + 2.0
    if beta == 0.0:
        target = 2.0
    else:
        log_e = np.log(2.0 * beta / kappa)
        if log_e < 0.0:
            target = min(target, np.log(rel_tol) / (2.0 * log_e) + 4.0)
    return int(_BLOCK * np.ceil(max(target, 1.0) / _BLOCK))


def _series_matrix(kappa, beta, cfg):
    terms, cut, _ = _converged(kappa, beta, cfg)
    # truncate each series exactly where it converged, so the value does not
    # depend on the block size used to generate it
    terms[np.arange(terms.shape[1])[None, :] >= cut[:, None]] = -np.inf
    return terms


def _converged(kappa, beta, cfg):
    """Log terms, per-row cutoffs and log truncated sums of the six series."""
    cfg.validate()
    _check_domain(kappa, beta)
    n = min(_initial_block(kappa, beta, cfg.rel_tol), cfg.max_terms)
    while True:
        terms = _series_log_terms(kappa, beta, n)
        cut, sums = _truncate(terms, cfg.rel_tol)
        if np.all(cut > 0):
            return terms, cut, sums
        if n >= cfg.max_terms:
            raise SeriesConvergenceError(
                "series did not converge in {} terms (kappa={}, beta={})".format(n, kappa, beta))
        n = min(2 * n, cfg.max_terms)


def _row_logsumexp(log_t):
    peak = np.max(log_t, axis=-1)
    safe = np.where(np.isfinite(peak), peak, 0.0)
    with np.errstate(divide="ignore"):
        total = np.log(np.sum(np.exp(log_t - np.expand_dims(safe, -1)), axis=-1))
    return np.where(np.isfinite(peak), total + safe, -np.inf)


def _sum(log_t):
    return float(_row_logsumexp(np.asarray(log_t)))


@lru_cache(maxsize=8192)
def _norm_terms_cached(kappa, beta, cfg):
    sums = _converged(kappa, beta, cfg)[2]
    half = 0.5 * np.log(2.0 / kappa)
    log_k = np.log(kappa)
    pref1 = LOG_2PI + half
    pref2 = np.log(8.0 * np.pi) + half - log_k
    pref_bb = np.log(16.0 * np.pi) + half - 2.0 * log_k
    log_c = pref1 + sums[0]
    log_c_k = pref1 + sums[1]
    s1_2 = pref1 + sums[2]
    # c_kk = c_k / kappa + (series with order p+2)
    log_c_kk = float(np.logaddexp(log_c_k - log_k, s1_2))
    return NormTerms(float(log_c), float(log_c_k), log_c_kk, float(pref2 + sums[3]),
                     float(pref2 + sums[4]), float(pref_bb + sums[5]))


def norm_terms(kappa, beta, cfg=DEFAULT_CONFIG):
    """
    Log of the normalization constant and its five partial derivatives.

    At ``beta = 0`` the first beta derivatives vanish and are returned as
    ``-inf``; ``c_bb`` keeps its finite limit.

    :param kappa: concentration, ``kappa > 0``
    :param beta: ovalness, ``0 <= beta < kappa/2``
    :param cfg: series truncation settings
    """
    return _norm_terms_cached(float(kappa), float(beta), cfg)


def log_norm_const(kappa, beta, cfg=DEFAULT_CONFIG):
    """``ln c(kappa, beta)`` alone, cheaper than :func:`norm_terms`."""
    return _log_c_cached(float(kappa), float(beta), cfg)


@lru_cache(maxsize=8192)
def _log_c_cached(kappa, beta, cfg):
    cfg.validate()
    _check_domain(kappa, beta)
    n = min(_initial_block(kappa, beta, cfg.rel_tol), cfg.max_terms)
    log_e = np.log(2.0 * beta / kappa) if beta > 0 else -np.inf
    while True:
        j, coef1 = _coefficients(n)[:2]
        log_t = coef1 + _log_bessel_unchecked(0.5 + 2.0 * j, kappa)
        if beta > 0:
            log_t = log_t + 2.0 * j * log_e
        else:
            log_t[1:] = -np.inf
        cut, total = _truncate(log_t[None, :], cfg.rel_tol)
        if cut[0] > 0:
            return float(LOG_2PI + 0.5 * np.log(2.0 / kappa) + total[0])
        if n >= cfg.max_terms:
            raise SeriesConvergenceError(
                "series did not converge in {} terms (kappa={}, beta={})".format(n, kappa, beta))
        n = min(2 * n, cfg.max_terms)


def series_S1(m, kappa, beta, cfg=DEFAULT_CONFIG):
    """``ln sum_j`` of the c-type series with Bessel order shifted by ``m``, including the prefactor."""
    if m not in (0, 1, 2):
        raise ValueError("m must be 0, 1 or 2")
    t = series_log_terms(kappa, beta, cfg)["s1_{}".format(m)]
    return LOG_2PI + 0.5 * np.log(2.0 / kappa) + _sum(t)


def series_S2(n, kappa, beta, cfg=DEFAULT_CONFIG):
    """Log of c_beta (``n=0``) or c_kappa_beta (``n=1``); requires ``beta > 0``."""
    if n not in (0, 1):
        raise ValueError("n must be 0 or 1")
    if not beta > 0:
        raise ValueError("beta series need beta > 0")
    t = series_log_terms(kappa, beta, cfg)["s2_{}".format(n)]
    return np.log(8.0 * np.pi) + 0.5 * np.log(2.0 / kappa) - np.log(kappa) + _sum(t)


def series_bb(kappa, beta, cfg=DEFAULT_CONFIG):
    """Log of c_beta_beta; requires ``beta > 0`` (use :func:`norm_terms` for the limit)."""
    if not beta > 0:
        raise ValueError("beta series need beta > 0")
    return norm_terms(kappa, beta, cfg).log_c_bb


def asymptotic_log_c(kappa, beta):
    """Large-kappa approximation ``ln(2 pi e^kappa / sqrt(kappa^2 - 4 beta^2))``."""
    return LOG_2PI + kappa - 0.5 * np.log(kappa * kappa - 4.0 * beta * beta)

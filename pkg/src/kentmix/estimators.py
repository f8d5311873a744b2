"""
Parameter estimation for a single Kent component: moment, maximum likelihood,
MAP under several prior parameterizations, and minimum message length (MML).

All objective functions work from sufficient statistics, so weighted data
(as in a mixture M-step) is handled by passing weighted statistics.
Message lengths are computed in nats and converted to bits for reporting.
"""

import logging
import math
import warnings
from enum import Enum
from typing import NamedTuple, Optional

import numpy as np
from scipy.optimize import brentq, minimize, minimize_scalar

from kentmix.distributions import ECC_MARGIN, KentParams, VmfParams, standard_moments, vmf_log_norm, vmf_mean_resultant
from kentmix.geometry import angles_from_axes, axes_from_angles, rotation_alpha, rotation_eta, rotation_psi
from kentmix.norm_series import NormTerms, SeriesConfig, SeriesConvergenceError, log_norm_const, norm_terms

logger = logging.getLogger(__name__)

LN2 = math.log(2.0)

# optimal lattice quantizing constants q_d for d = 1..5
LATTICE_Q = {
    1: 1.0 / 12.0,
    2: 5.0 / (36.0 * math.sqrt(3.0)),
    3: 19.0 / (192.0 * 2.0 ** (1.0 / 3.0)),
    4: 0.076603,
    5: 0.075625,
}

# Fisher evaluation keeps beta at least this fraction of kappa
BETA_FLOOR_FRAC = 1e-5

# Estimation uses a tighter truncation than the library default: the Fisher
# entries take differences of near-equal moments, and one shared setting
# lets the likelihood and Fisher terms reuse a single cached evaluation.
TIGHT = SeriesConfig(rel_tol=1e-12)

# precision of a uniform distribution over psi's range [0, pi)
PSI_PRIOR_PRECISION = 12.0 / math.pi ** 2

MAX_E = 1.0 - 2.0 * ECC_MARGIN


class SufficientStats(NamedTuple):
    """
    :param n: (possibly fractional) sample size
    :param resultant_mean: ``sum(w x) / n``
    :param dispersion: ``sum(w x x^T) / n``
    """
    n: float
    resultant_mean: np.ndarray
    dispersion: np.ndarray


def sufficient_stats(data, weights=None) -> SufficientStats:
    """Sample mean vector and dispersion matrix, optionally weighted."""
    if isinstance(data, SufficientStats):
        return data
    x = np.asarray(data, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[0] == 0:
        raise ValueError("empty data")
    if weights is None:
        n = float(x.shape[0])
        return SufficientStats(n, x.sum(axis=0) / n, x.T @ x / n)
    w = np.asarray(weights, dtype=float)
    n = float(w.sum())
    if not n > 0:
        raise ValueError("weights sum to zero")
    return SufficientStats(n, w @ x / n, (x * w[:, None]).T @ x / n)


class MessageLength(NamedTuple):
    first_bits: float
    second_bits: float
    total_bits: float

    @classmethod
    def from_nats(cls, first, second):
        return cls(first / LN2, second / LN2, (first + second) / LN2)


class FisherInfo(NamedTuple):
    """Per-datum blocks; ``log_det`` includes the ``n^5`` sample-size factor."""
    f_angles: np.ndarray
    f_scale: np.ndarray
    log_det: float
    singular: bool


class PriorSpec(Enum):
    """
    Prior density together with the coordinates it is written in.

    The two 3-D variants describe the same prior in (kappa, beta) and
    (kappa, e) coordinates; likewise the 2-D variants, the last of which uses
    the unit hypercube where the prior is flat.
    """
    THREE_D_KAPPA_BETA = "3d_kappa_beta"
    THREE_D_KAPPA_ECC = "3d_kappa_ecc"
    TWO_D_KAPPA_BETA = "2d_kappa_beta"
    TWO_D_KAPPA_ECC = "2d_kappa_ecc"
    TWO_D_ROSENBLATT = "2d_rosenblatt"

    @property
    def is_3d(self):
        return self in (PriorSpec.THREE_D_KAPPA_BETA, PriorSpec.THREE_D_KAPPA_ECC)

    @property
    def coords(self):
        return {PriorSpec.THREE_D_KAPPA_BETA: "kappa_beta", PriorSpec.TWO_D_KAPPA_BETA: "kappa_beta",
                PriorSpec.THREE_D_KAPPA_ECC: "kappa_ecc", PriorSpec.TWO_D_KAPPA_ECC: "kappa_ecc",
                PriorSpec.TWO_D_ROSENBLATT: "rosenblatt"}[self]


def _log_sin(alpha):
    sa = abs(math.sin(alpha))
    return math.log(sa) if sa > 0 else -math.inf


def log_prior_canonical(p: KentParams, prior: PriorSpec):
    """Log prior density with respect to ``(psi, alpha, eta, kappa, beta)``."""
    k = p.kappa
    if prior.is_3d:
        # 2 kappa sin(alpha) / (pi^3 (1 + kappa^2)^2)
        return math.log(2.0 * k) + _log_sin(p.alpha) - 3.0 * math.log(math.pi) - 2.0 * math.log1p(k * k)
    # sin(alpha) / (2 pi^2 (1 + kappa^2)^(3/2))
    return _log_sin(p.alpha) - math.log(2.0 * math.pi ** 2) - 1.5 * math.log1p(k * k)


def log_jacobian(p: KentParams, prior: PriorSpec):
    """``ln |d(native coords) / d(psi, alpha, eta, kappa, beta)|`` for the prior's coordinates."""
    return _log_jacobian(prior, p.alpha, p.kappa)


def _log_jacobian(prior, alpha, k):
    coords = prior.coords
    if coords == "kappa_beta":
        return 0.0
    if coords == "kappa_ecc":
        return math.log(2.0 / k)
    # z = (psi/pi, (1-cos a)/2, eta/2pi, 1 - 1/sqrt(1+k^2), 2 beta/k)
    return (-math.log(math.pi) + _log_sin(alpha) - math.log(2.0) - math.log(2.0 * math.pi)
            + math.log(k) - 1.5 * math.log1p(k * k) + math.log(2.0 / k))


def log_prior(p: KentParams, prior: PriorSpec):
    """
    Log prior density in the prior's own coordinates, written out directly
    from its closed form (not derived through :func:`log_jacobian`).
    """
    return _log_prior(prior, p.alpha, p.kappa)


def _log_prior(prior, alpha, k):
    if prior is PriorSpec.THREE_D_KAPPA_BETA:
        return math.log(2.0 * k) + _log_sin(alpha) - 3.0 * math.log(math.pi) - 2.0 * math.log1p(k * k)
    if prior is PriorSpec.THREE_D_KAPPA_ECC:
        # kappa^2 sin(alpha) / (pi^3 (1 + kappa^2)^2)
        return 2.0 * math.log(k) + _log_sin(alpha) - 3.0 * math.log(math.pi) - 2.0 * math.log1p(k * k)
    if prior is PriorSpec.TWO_D_KAPPA_BETA:
        return _log_sin(alpha) - math.log(2.0 * math.pi ** 2) - 1.5 * math.log1p(k * k)
    if prior is PriorSpec.TWO_D_KAPPA_ECC:
        # kappa sin(alpha) / (4 pi^2 (1 + kappa^2)^(3/2))
        return math.log(k) + _log_sin(alpha) - math.log(4.0 * math.pi ** 2) - 1.5 * math.log1p(k * k)
    return 0.0


def rosenblatt_to_params(z):
    """Map a point of the unit hypercube to Kent parameters."""
    z = np.asarray(z, dtype=float)
    psi = math.pi * z[0]
    alpha = math.acos(1.0 - 2.0 * z[1])
    eta = 2.0 * math.pi * z[2]
    kappa = math.tan(math.acos(1.0 - z[3]))
    return KentParams(psi, alpha, eta, kappa, 0.5 * kappa * z[4])


def params_to_rosenblatt(p: KentParams):
    return np.array([p.psi / math.pi, 0.5 * (1.0 - math.cos(p.alpha)), p.eta / (2.0 * math.pi),
                     1.0 - 1.0 / math.sqrt(1.0 + p.kappa ** 2), p.ecc])


def moment_scale_approx(r1, r2):
    """
    Large-concentration approximation of ``(kappa, beta)`` from the mean
    resultant length ``r1`` and the major/minor spread difference ``r2``.
    """
    a = 2.0 - 2.0 * r1 - r2
    b = 2.0 - 2.0 * r1 + r2
    if not a > 0:
        raise ValueError("degenerate moment denominator 2-2r1-r2 = {}".format(a))
    kappa = 1.0 / a + 1.0 / b
    beta = 0.5 * (1.0 / a - 1.0 / b)
    beta = min(max(beta, 0.0), 0.5 * kappa * MAX_E)
    return kappa, beta


def _moment_residual(kappa, beta, r1, r2):
    t = norm_terms(kappa, beta, TIGHT)
    g1 = math.exp(t.log_c_k - t.log_c) - r1
    g2 = (math.exp(t.log_c_b - t.log_c) if beta > 0 else 0.0) - r2
    return np.array([g1, g2])


def _solve_scale(r1, r2, start, max_iter=100, tol=1e-9):
    """
    Damped Newton for ``c_k/c = r1``, ``c_b/c = r2`` in ``(log kappa, logit e)``
    with a finite-difference Jacobian. Returns ``(kappa, beta, converged)``.
    """
    k0, b0 = start
    e0 = min(max(2.0 * b0 / k0, 1e-6), 0.999)
    u = np.array([math.log(k0), math.log(e0 / (1.0 - e0))])

    def unpack(v):
        k = math.exp(min(v[0], 700.0))
        e = min(_expit(v[1]), MAX_E)
        return k, 0.5 * e * k

    def resid(v):
        try:
            return _moment_residual(*unpack(v), r1, r2)
        except (ArithmeticError, ValueError, SeriesConvergenceError):
            # treated as a failed line-search trial
            return np.full(2, np.inf)

    g = resid(u)
    h = 1e-6
    for _ in range(max_iter):
        if np.max(np.abs(g)) < tol:
            return (*unpack(u), True)
        J = np.empty((2, 2))
        for i in range(2):
            d = np.zeros(2)
            d[i] = h
            J[:, i] = (resid(u + d) - resid(u - d)) / (2.0 * h)
        try:
            step = np.linalg.solve(J, -g)
        except np.linalg.LinAlgError:
            break
        t = 1.0
        norm0 = np.linalg.norm(g)
        while t > 1e-8:
            cand = u + t * step
            gc = resid(cand)
            if np.linalg.norm(gc) < norm0:
                u, g = cand, gc
                break
            t *= 0.5
        else:
            break
    return (*unpack(u), bool(np.max(np.abs(g)) < tol))


def _solve_kappa_only(r1):
    """``c_k/c = r1`` at ``beta = 0``: the vMF mean resultant equation."""
    if r1 <= 0:
        return 1e-8
    lo, hi = -20.0, 25.0
    f = lambda lk: vmf_mean_resultant(math.exp(lk)) - r1
    if f(hi) < 0:
        return math.exp(hi)
    if f(lo) > 0:
        return math.exp(lo)
    return math.exp(brentq(f, lo, hi, xtol=1e-13))


class MomentResult(NamedTuple):
    params: KentParams
    converged: bool
    r1: float
    r2: float


def moment_fit(data) -> MomentResult:
    """
    Two-step moment estimate: orient by the mean direction and the principal
    axes of the rotated dispersion, then match ``(r1, r2)`` to the model
    moments.
    """
    s = sufficient_stats(data)
    r1 = float(np.linalg.norm(s.resultant_mean))
    if r1 < 1e-10:
        raise ValueError("mean direction undefined (resultant length {})".format(r1))
    g1 = s.resultant_mean / r1
    alpha = math.acos(min(1.0, max(-1.0, g1[0])))
    eta = math.atan2(g1[2], g1[1]) % (2.0 * math.pi)
    H = rotation_alpha(alpha) @ rotation_eta(eta)
    B = H @ s.dispersion @ H.T
    psi = 0.5 * math.atan2(2.0 * B[1, 2], B[1, 1] - B[2, 2])
    BL = B[1:, 1:]
    disc = math.hypot(0.5 * (BL[0, 0] - BL[1, 1]), BL[0, 1])
    r2 = 2.0 * disc
    Q = (rotation_psi(psi) @ H).T
    angles = angles_from_axes(Q, warn=False)
    try:
        start = moment_scale_approx(r1, r2)
    except ValueError:
        start = (1.0 / max(1.0 - r1, 1e-12), 0.0)
    if r2 < 1e-12:
        kappa, beta, ok = _solve_kappa_only(r1), 0.0, True
    else:
        kappa, beta, ok = _solve_scale(r1, r2, start)
    if not ok:
        logger.debug("moment root find failed (r1=%g, r2=%g); using the approximation", r1, r2)
        kappa, beta = start
    return MomentResult(KentParams(angles.psi, angles.alpha, angles.eta, kappa, beta), ok, r1, r2)


def moment_estimate(data) -> KentParams:
    return moment_fit(data).params


def negative_log_likelihood(data, p: KentParams, cfg=None):
    """Negative log-likelihood in nats from data or sufficient statistics."""
    s = sufficient_stats(data)
    return _nll(s, p.axes, p.kappa, p.beta, cfg)


def _nll(s, Q, kappa, beta, cfg=None):
    log_c = log_norm_const(kappa, beta, TIGHT if cfg is None else cfg)
    g1, g2, g3 = Q[:, 0], Q[:, 1], Q[:, 2]
    S = s.dispersion
    quad = g2 @ S @ g2 - g3 @ S @ g3
    return s.n * (log_c - kappa * (g1 @ s.resultant_mean) - beta * quad)


def axis_partials(psi, alpha, eta):
    """
    First and second partial derivatives of the axes with respect to
    ``(psi, alpha, eta)``.

    :return: ``(d1, d2)`` with ``d1[k, i]`` = d gamma_k / d theta_i and
        ``d2[k, i, j]`` = d^2 gamma_k / d theta_i d theta_j (each a 3-vector)
    """
    ca, sa = math.cos(alpha), math.sin(alpha)
    ce, se = math.cos(eta), math.sin(eta)
    cp, sp = math.cos(psi), math.sin(psi)
    Q = axes_from_angles(psi, alpha, eta)
    g1, g2, g3 = Q[:, 0], Q[:, 1], Q[:, 2]
    zero = np.zeros(3)
    g1_a = np.array([-sa, ca * ce, ca * se])
    g1_e = np.array([0.0, -sa * se, sa * ce])
    g1_ae = np.array([0.0, -ca * se, ca * ce])
    g1_ee = np.array([0.0, -sa * ce, -sa * se])
    g2_e = np.array([0.0, -cp * ca * se - sp * ce, cp * ca * ce - sp * se])
    g3_e = np.array([0.0, sp * ca * se - cp * ce, -sp * ca * ce - cp * se])
    g2_a = -cp * g1
    g3_a = sp * g1

    d1 = np.array([
        [zero, g1_a, g1_e],
        [g3, g2_a, g2_e],
        [-g2, g3_a, g3_e],
    ])
    d2 = np.empty((3, 3, 3, 3))
    d2[0] = [[zero, zero, zero], [zero, -g1, g1_ae], [zero, g1_ae, g1_ee]]
    d2[1] = [[-g2, g3_a, g3_e],
             [g3_a, -cp * g1_a, -cp * g1_e],
             [g3_e, -cp * g1_e, np.array([0.0, -g2[1], -g2[2]])]]
    d2[2] = [[-g3, -g2_a, -g2_e],
             [-g2_a, sp * g1_a, sp * g1_e],
             [-g2_e, sp * g1_e, np.array([0.0, -g3[1], -g3[2]])]]
    return d1, d2


def fisher_angles_generic(p: KentParams):
    """
    Angular Fisher block from expected second derivatives of the per-datum
    NLL using the axis partials and the model moments.
    """
    d1, d2 = axis_partials(*p.angles)
    Q = p.axes
    r1, lam = standard_moments(p.kappa, p.beta, TIGHT)
    M = (Q * np.array(lam)) @ Q.T
    ex = r1 * Q[:, 0]
    F = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            def T(k):
                return 2.0 * (d1[k, i] @ M @ d1[k, j] + Q[:, k] @ M @ d2[k, i, j])
            F[i, j] = -p.kappa * d2[0, i, j] @ ex - p.beta * T(1) + p.beta * T(2)
    return F


def _scale_moments(t: NormTerms, beta):
    """``(r1, l1, c_b/c, c_kk/c, c_kb/c, c_bb/c)`` from one set of series terms (``l1 = c_kk/c``)."""
    lc = t.log_c
    r1 = math.exp(t.log_c_k - lc)
    ckk = math.exp(t.log_c_kk - lc)
    cb = math.exp(t.log_c_b - lc) if beta > 0 else 0.0
    ckb = math.exp(t.log_c_kb - lc) if beta > 0 else 0.0
    cbb = math.exp(t.log_c_bb - lc)
    return r1, ckk, cb, ckk, ckb, cbb


def _angle_entries(psi, alpha, k, b, r1, l1, cb):
    """Distinct entries ``(f_pp, f_aa, f_ea, f_ee)`` of the per-datum angle block."""
    l2 = 0.5 * (1.0 - l1 + cb)
    l3 = 0.5 * (1.0 - l1 - cb)
    sp, cp = math.sin(psi), math.cos(psi)
    sa, ca = math.sin(alpha), math.cos(alpha)
    f_pp = 4.0 * b * cb
    f_aa = k * r1 + 2.0 * b * ((l1 - l3) * sp * sp - (l1 - l2) * cp * cp)
    f_ea = b * (1.0 - 3.0 * l1) * math.sin(2.0 * psi) * sa
    f_ee = sa * sa * k * r1 + 2.0 * b * (
        l2 * (cp * cp * ca * ca + sp * sp) + (l2 - l3) * ca * ca
        - l3 * (sp * sp * ca * ca + cp * cp) + l1 * sa * sa * math.cos(2.0 * psi))
    return f_pp, f_aa, f_ea, f_ee


def fisher_angles(p: KentParams):
    """Closed-form per-datum Fisher block for ``(psi, alpha, eta)``."""
    r1, l1, cb, _, _, _ = _scale_moments(norm_terms(p.kappa, p.beta, TIGHT), p.beta)
    f_pp, f_aa, f_ea, f_ee = _angle_entries(p.psi, p.alpha, p.kappa, p.beta, r1, l1, cb)
    ca = math.cos(p.alpha)
    return np.array([[f_pp, 0.0, ca * f_pp], [0.0, f_aa, f_ea], [ca * f_pp, f_ea, f_ee]])


def fisher_scale(kappa, beta):
    """Per-datum Fisher block for ``(kappa, beta)``: the covariance of ``(y1, y2^2 - y3^2)``."""
    r1, _, cb, ckk, ckb, cbb = _scale_moments(norm_terms(kappa, beta, TIGHT), beta)
    return np.array([[ckk - r1 * r1, ckb - r1 * cb], [ckb - r1 * cb, cbb - cb * cb]])


def _log_det_scalar(psi, alpha, k, b, t: NormTerms, n, psi_cap=True):
    """
    Log determinant of the Fisher matrix of ``n`` observations from explicit
    determinants, with the same psi cap as :func:`first_part_nats`. The
    angle block's determinant is
    ``F_pp (F_aa F_ee - F_ea^2) - cos^2(alpha) F_pp'^2 F_aa`` where ``F_pp`` may
    carry the cap and ``F_pp'`` is the uncapped coupling.
    """
    r1, l1, cb, ckk, ckb, cbb = _scale_moments(t, b)
    f_pp, f_aa, f_ea, f_ee = _angle_entries(psi, alpha, k, b, r1, l1, cb)
    ca = math.cos(alpha)
    f_pp, f_aa, f_ea, f_ee = n * f_pp, n * f_aa, n * f_ea, n * f_ee
    g_pp = f_pp + (PSI_PRIOR_PRECISION if psi_cap else 0.0)
    det_a = g_pp * (f_aa * f_ee - f_ea * f_ea) - ca * ca * f_pp * f_pp * f_aa
    det_s = n * n * ((ckk - r1 * r1) * (cbb - cb * cb) - (ckb - r1 * cb) ** 2)
    if not (det_a > 0 and det_s > 0):
        return -math.inf
    return math.log(det_a) + math.log(det_s)


def _log_det(m):
    sign, val = np.linalg.slogdet(m)
    return val if sign > 0 else -np.inf


def fisher_info(p: KentParams, n, beta_floor=True) -> FisherInfo:
    """
    Fisher information of ``n`` observations, block-diagonal in the angles
    and ``(kappa, beta)``.

    With ``beta_floor`` the blocks are evaluated at ``max(beta, 1e-5 kappa)``
    because the psi entries vanish as beta goes to zero.
    """
    floor = BETA_FLOOR_FRAC * p.kappa
    singular = p.beta < floor
    q = p
    if beta_floor and singular:
        q = KentParams(p.psi, p.alpha, p.eta, p.kappa, floor)
    fa = fisher_angles(q)
    fs = fisher_scale(q.kappa, q.beta)
    log_det = 5.0 * math.log(n) + _log_det(fa) + _log_det(fs)
    return FisherInfo(fa, fs, float(log_det), bool(singular))


def capped_log_det(fi: FisherInfo, n, psi_cap=True):
    """
    ``ln |F|`` for ``n`` observations with ``12/pi^2`` added to the psi-psi
    entry. That is the precision of a uniform spread over psi's whole range,
    so the psi uncertainty width never exceeds pi even as beta goes to zero
    and psi stops being identifiable.
    """
    fa = n * fi.f_angles
    if psi_cap:
        fa = fa.copy()
        fa[0, 0] += PSI_PRIOR_PRECISION
    return float(_log_det(fa) + _log_det(n * fi.f_scale))


def first_part_nats(p: KentParams, n, prior: PriorSpec, bounded=True, d=5, psi_cap=True):
    """
    Cost of stating the parameters, with prior and Fisher both written in
    the prior's own coordinates (the result does not depend on that choice).

    The standard form ``(d/2) ln q_d - ln h + (1/2) ln |F|`` is unbounded below
    as kappa or beta go to zero, because the Fisher determinant vanishes
    faster than the prior. Two guards apply by default. ``psi_cap`` bounds
    the psi width by its range (see :func:`capped_log_det`), so a near-vMF
    component is never cheaper to state than its orientation warrants. With
    ``bounded`` the cost is ``(1/2) ln(1 + q_d^d |F| / h^2)``, which matches
    the standard form whenever the data pin the parameters down and goes to
    zero otherwise.
    """
    log_jac = log_jacobian(p, prior)
    log_det_native = capped_log_det(fisher_info(p, n), n, psi_cap) - 2.0 * log_jac
    standard = 0.5 * d * math.log(LATTICE_Q[d]) - log_prior(p, prior) + 0.5 * log_det_native
    if not bounded:
        return standard
    return 0.5 * _softplus(2.0 * standard)


def _softplus(x):
    if x > 30.0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


def _mml_objective(s, prior, Q, k, b):
    """
    Message length of one component with the scalar fast path: a single
    series evaluation feeds both the likelihood and the Fisher determinant.
    Agrees with :func:`first_part_nats` plus :func:`negative_log_likelihood`.
    """
    a = angles_from_axes(Q, warn=False)
    return _mml_value(s, prior, a.psi, a.alpha, Q, k, b)


def _mml_first_part(n, prior, psi, alpha, k, b):
    b = _floored(k, b)
    t = norm_terms(k, b, TIGHT)
    log_det = _log_det_scalar(psi, alpha, k, b, t, n)
    standard = (2.5 * math.log(LATTICE_Q[5]) - _log_prior(prior, alpha, k)
                + 0.5 * (log_det - 2.0 * _log_jacobian(prior, alpha, k)))
    return 0.5 * _softplus(2.0 * standard)


def _mml_value(s, prior, psi, alpha, Q, k, b):
    # sin(alpha) only enters squared or through |sin|, so raw angles are fine here
    return _mml_first_part(s.n, prior, psi, alpha, k, b) + _nll(s, Q, k, _floored(k, b)) + 2.5


def message_length(data, p: KentParams, prior=PriorSpec.THREE_D_KAPPA_BETA, precision=None) -> MessageLength:
    """
    Two-part message length for a single Kent component.

    :param precision: optional datum accuracy ``epsilon``; when given the
        second part also carries ``-n ln(epsilon^2)`` so totals are on an
        absolute scale. Model comparisons do not depend on it.
    """
    s = sufficient_stats(data)
    first = first_part_nats(p, s.n, prior)
    second = _nll(s, p.axes, p.kappa, p.beta) + 2.5
    if precision is not None:
        second -= s.n * 2.0 * math.log(precision)
    return MessageLength.from_nats(first, second)


# --- numerical optimization -------------------------------------------------

def _logit(x):
    return math.log(x / (1.0 - x))


def _expit(v):
    if v >= 0:
        return 1.0 / (1.0 + math.exp(-v))
    ev = math.exp(v)
    return ev / (1.0 + ev)


class _Coords:
    """Unconstrained optimizer variables: raw angles plus a two-value scale transform."""

    def __init__(self, kind):
        if kind not in ("kappa_beta", "kappa_ecc", "rosenblatt"):
            raise ValueError(kind)
        self.kind = kind

    def encode(self, p: KentParams):
        k, b = p.kappa, max(p.beta, 1e-10 * p.kappa)
        e = min(2.0 * b / k, 1.0 - 1e-6)
        if self.kind == "kappa_beta":
            scale = [math.log(b), math.log(k - 2.0 * b)]
        elif self.kind == "kappa_ecc":
            scale = [math.log(k), _logit(e)]
        else:
            z4 = 1.0 - 1.0 / math.sqrt(1.0 + k * k)
            scale = [_logit(min(max(z4, 1e-15), 1.0 - 1e-15)), _logit(e)]
        return np.array([p.psi, p.alpha, p.eta] + scale)

    def decode(self, v):
        """Return ``(Q, kappa, beta)`` or ``None`` when outside the valid domain."""
        Q = axes_from_angles(v[0], v[1], v[2])
        try:
            if self.kind == "kappa_beta":
                b = math.exp(v[3])
                k = 2.0 * b + math.exp(v[4])
            elif self.kind == "kappa_ecc":
                k = math.exp(v[3])
                b = 0.5 * k * _expit(v[4])
            else:
                z4 = _expit(v[3])
                k = math.tan(math.acos(1.0 - z4))
                b = 0.5 * k * _expit(v[4])
        except OverflowError:
            return None
        if not (1e-10 < k < 1e8) or not b < 0.5 * k * MAX_E:
            return None
        return Q, k, b

    def init_steps(self):
        return np.array([0.1, 0.1, 0.1, 0.2, 0.5])


def _params_from(Q, k, b):
    a = angles_from_axes(Q, warn=False)
    return KentParams(a.psi, a.alpha, a.eta, k, b)


class FitResult(NamedTuple):
    params: KentParams
    objective: float
    converged: bool
    n_evals: int
    method: str
    flags: tuple = ()


def _nelder_mead(fun, x0, steps, xatol, fatol, maxfev):
    simplex = np.vstack([x0] + [x0 + np.eye(len(x0))[i] * steps[i] for i in range(len(x0))])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = minimize(fun, x0, method="Nelder-Mead",
                       options={"xatol": xatol, "fatol": fatol, "maxfev": maxfev,
                                "initial_simplex": simplex, "adaptive": False})
    return res


def _optimize(s, objective, coords, init: KentParams, method, xatol=1e-6, fatol=1e-9, maxfev=5000, steps=None):
    """
    Nelder-Mead over :class:`_Coords` variables started at ``init``.

    :param steps: initial simplex edge per variable; smaller steps suit warm
        starts such as EM updates
    """
    c = _Coords(coords)

    def fun(v):
        dec = c.decode(v)
        if dec is None:
            return np.inf
        Q, k, b = dec
        val = objective(Q, k, b)
        return val if np.isfinite(val) else np.inf

    x0 = c.encode(init)
    f0 = fun(x0)
    res = _nelder_mead(fun, x0, c.init_steps() if steps is None else np.asarray(steps, dtype=float), xatol, fatol, maxfev)
    if not res.fun <= f0:
        logger.debug("%s optimizer did not improve on its start; keeping the start", method)
        return FitResult(init, float(f0), False, int(res.nfev), method)
    Q, k, b = c.decode(res.x)
    return FitResult(_params_from(Q, k, b), float(res.fun), bool(res.success), int(res.nfev), method)


def _default_init(s, init):
    if init is not None:
        return init
    return moment_estimate(s)


def ml_fit(data, init=None, coords="kappa_ecc", **opt) -> FitResult:
    s = sufficient_stats(data)
    init = _default_init(s, init)
    return _optimize(s, lambda Q, k, b: _nll(s, Q, k, b), coords, init, "ml", **opt)


def ml_estimate(data, init: Optional[KentParams] = None, coords="kappa_ecc") -> KentParams:
    """
    Maximum likelihood estimate by derivative-free search started at ``init``
    (the moment estimate by default).

    :param coords: optimizer scale variables, ``"kappa_ecc"`` (log kappa,
        logit e) or ``"kappa_beta"`` (log beta, log(kappa - 2 beta))
    """
    return ml_fit(data, init, coords).params


def log_posterior(data, p: KentParams, prior: PriorSpec):
    """Unnormalized log posterior in the prior's own coordinates."""
    return log_prior(p, prior) - negative_log_likelihood(data, p)


def map_fit(data, prior=PriorSpec.THREE_D_KAPPA_BETA, init=None, **opt) -> FitResult:
    s = sufficient_stats(data)
    init = _default_init(s, init)

    def objective(Q, k, b):
        p = _params_from(Q, k, b)
        return -log_prior(p, prior) + _nll(s, Q, k, b)

    return _optimize(s, objective, prior.coords, init, "map_" + prior.value, **opt)


def map_estimate(data, prior=PriorSpec.THREE_D_KAPPA_BETA, init=None) -> KentParams:
    """
    Posterior mode in the coordinates the prior is written in. The mode moves
    when the same prior is re-expressed in other coordinates.
    """
    return map_fit(data, prior, init).params


def _floored(k, b):
    return max(b, BETA_FLOOR_FRAC * k)


def mml_fit(data, prior=PriorSpec.THREE_D_KAPPA_BETA, init=None, **opt) -> FitResult:
    """
    Minimize the message length over ``beta >= 1e-5 kappa``. Below the floor
    the objective is held at its floor value, so an estimate sitting on the
    floor is effectively a vMF and is flagged ``beta_at_floor``.
    """
    s = sufficient_stats(data)
    init = _default_init(s, init)

    def objective(Q, k, b):
        return _mml_objective(s, prior, Q, k, b)

    res = _optimize(s, objective, prior.coords, init, "mml", **opt)
    p = res.params
    if p.beta <= BETA_FLOOR_FRAC * p.kappa * (1.0 + 1e-9):
        p = KentParams(p.psi, p.alpha, p.eta, p.kappa, BETA_FLOOR_FRAC * p.kappa)
        res = res._replace(params=p, flags=res.flags + ("beta_at_floor",))
    return res


def mml_estimate(data, init=None, prior=PriorSpec.THREE_D_KAPPA_BETA) -> KentParams:
    """Minimizer of the two-part message length."""
    return mml_fit(data, prior, init).params


def _first_axis_partials(psi, alpha, eta):
    """``d[k, i]`` = d gamma_k / d theta_i for ``theta = (psi, alpha, eta)``."""
    ca, sa = math.cos(alpha), math.sin(alpha)
    ce, se = math.cos(eta), math.sin(eta)
    cp, sp = math.cos(psi), math.sin(psi)
    Q = axes_from_angles(psi, alpha, eta)
    g1, g2, g3 = Q[:, 0], Q[:, 1], Q[:, 2]
    g1_a = np.array([-sa, ca * ce, ca * se])
    g1_e = np.array([0.0, -sa * se, sa * ce])
    g2_e = np.array([0.0, -cp * ca * se - sp * ce, cp * ca * ce - sp * se])
    g3_e = np.array([0.0, sp * ca * se - cp * ce, -sp * ca * ce - cp * se])
    d = np.array([[np.zeros(3), g1_a, g1_e], [g3, -cp * g1, g2_e], [-g2, sp * g1, g3_e]])
    return Q, d


class _ScoringProblem:
    """
    Objective in ``v = (psi, alpha, eta, ln kappa, logit e)`` with its
    gradient and a Fisher-based curvature, for :func:`refine_fit`.
    """

    def __init__(self, s, mml, prior):
        self.s, self.mml, self.prior = s, mml, prior

    @staticmethod
    def scale(v):
        k = math.exp(v[3])
        e = _expit(v[4])
        return k, 0.5 * k * e, e

    def value(self, v):
        try:
            k, b, e = self.scale(v)
        except OverflowError:
            return math.inf
        if not (1e-10 < k < 1e8) or not e < MAX_E:
            return math.inf
        Q = axes_from_angles(v[0], v[1], v[2])
        if self.mml:
            return _mml_value(self.s, self.prior, v[0], v[1], Q, k, b)
        return _nll(self.s, Q, k, b)

    def gradient_and_metric(self, v):
        s = self.s
        k, b, e = self.scale(v)
        b_eff = _floored(k, b) if self.mml else b
        Q, d = _first_axis_partials(v[0], v[1], v[2])
        g1, g2, g3 = Q[:, 0], Q[:, 1], Q[:, 2]
        m, S = s.resultant_mean, s.dispersion
        t = norm_terms(k, b_eff, TIGHT)
        r1, l1, cb, ckk, ckb, cbb = _scale_moments(t, b_eff)
        grad = np.empty(5)
        for i in range(3):
            grad[i] = -s.n * (k * (d[0, i] @ m) + 2.0 * b_eff * (d[1, i] @ S @ g2 - d[2, i] @ S @ g3))
        quad = g2 @ S @ g2 - g3 @ S @ g3
        dk = s.n * (r1 - g1 @ m)
        db = s.n * (cb - quad)
        # kappa = exp(v3), beta = kappa e / 2 with e = expit(v4)
        J = np.array([[k, 0.0], [b, b * (1.0 - e)]])
        grad[3:] = J.T @ np.array([dk, db])
        f_pp, f_aa, f_ea, f_ee = _angle_entries(v[0], v[1], k, b_eff, r1, l1, cb)
        ca = math.cos(v[1])
        H = np.zeros((5, 5))
        H[:3, :3] = s.n * np.array([[f_pp, 0.0, ca * f_pp], [0.0, f_aa, f_ea], [ca * f_pp, f_ea, f_ee]])
        H[0, 0] += PSI_PRIOR_PRECISION
        fs = np.array([[ckk - r1 * r1, ckb - r1 * cb], [ckb - r1 * cb, cbb - cb * cb]])
        H[3:, 3:] = s.n * (J.T @ fs @ J)
        if self.mml:
            grad += self._first_part_gradient(v)
        return grad, H

    def _first_part_gradient(self, v, h=1e-6):
        def fp(w):
            k, b, _ = self.scale(w)
            return _mml_first_part(self.s.n, self.prior, w[0], w[1], k, b)

        g = np.empty(5)
        for i in range(5):
            up, dn = v.copy(), v.copy()
            up[i] += h
            dn[i] -= h
            g[i] = (fp(up) - fp(dn)) / (2.0 * h)
        return g


def refine_fit(data, init: KentParams, method="mml", prior=PriorSpec.THREE_D_KAPPA_BETA,
               max_steps=50, tol=1e-9) -> FitResult:
    """
    Polish an estimate that is already close, as in the M-step of EM, by
    Fisher scoring: exact likelihood gradient, expected-information metric,
    and a backtracking line search that only accepts decreases. For the
    message length the first-part gradient is taken by central differences.

    :param method: ``"ml"`` or ``"mml"``
    :param tol: stop when a step lowers the objective by less than this
        (relative to ``max(1, |objective|)``)
    """
    s = sufficient_stats(data)
    prob = _ScoringProblem(s, method == "mml", prior)
    v = _Coords("kappa_ecc").encode(init)
    f = prob.value(v)
    n_evals, converged = 1, False
    for _ in range(max_steps):
        g, H = prob.gradient_and_metric(v)
        try:
            step = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = -g / max(1.0, float(np.abs(np.diag(H)).max()))
        slope = float(g @ step)
        if not slope < 0:
            step, slope = -g, -float(g @ g)
        t, accepted = 1.0, False
        for _ in range(30):
            cand = v + t * step
            fc = prob.value(cand)
            n_evals += 1
            if fc <= f + 1e-4 * t * slope:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            converged = True
            break
        gain = f - fc
        v, f = cand, fc
        if gain < tol * max(1.0, abs(f)):
            converged = True
            break
    k, b, _ = prob.scale(v)
    if method == "mml":
        b = _floored(k, b)
    Q = axes_from_angles(v[0], v[1], v[2])
    return FitResult(_params_from(Q, k, b), float(f), converged, n_evals, "refine_" + method)


ESTIMATORS = ("moment", "ml", "map1", "map2", "rosenblatt", "mml")


def fit_kent(data, method, prior=PriorSpec.THREE_D_KAPPA_BETA, init=None, **opt) -> FitResult:
    """
    Dispatch by estimator name: ``moment``, ``ml``, ``map1`` (3-D prior in
    kappa, beta), ``map2`` (3-D prior in kappa, e), ``rosenblatt`` (2-D prior
    on the unit hypercube) or ``mml``.
    """
    s = sufficient_stats(data)
    if method == "moment":
        m = moment_fit(s)
        return FitResult(m.params, negative_log_likelihood(s, m.params), m.converged, 0, "moment")
    if method == "ml":
        return ml_fit(s, init, **opt)
    if method == "map1":
        return map_fit(s, PriorSpec.THREE_D_KAPPA_BETA, init, **opt)
    if method == "map2":
        return map_fit(s, PriorSpec.THREE_D_KAPPA_ECC, init, **opt)
    if method == "rosenblatt":
        return map_fit(s, PriorSpec.TWO_D_ROSENBLATT, init, **opt)
    if method == "mml":
        return mml_fit(s, prior, init, **opt)
    raise ValueError("unknown estimator {!r}; choose from {}".format(method, ESTIMATORS))


# --- von Mises-Fisher ---------------------------------------------------------

def vmf_log_prior(p: VmfParams):
    """Uniform mean direction times ``4 kappa^2 / (pi (1 + kappa^2)^2)``."""
    k = p.kappa
    return _log_sin(p.alpha) - math.log(4.0 * math.pi) + math.log(4.0 / math.pi) + 2.0 * math.log(k) - 2.0 * math.log1p(k * k)


def _vmf_a_prime(k):
    if k < 1e-2:
        return 1.0 / 3.0 - k * k / 15.0
    if k > 350:
        return 1.0 / (k * k)
    return 1.0 / (k * k) - 1.0 / math.sinh(k) ** 2


def vmf_fisher_log_det(p: VmfParams, n):
    """``ln(n^3 (kappa A)^2 sin^2(alpha) A'(kappa))``."""
    k = p.kappa
    a = vmf_mean_resultant(k)
    return 3.0 * math.log(n) + 2.0 * math.log(k * a) + 2.0 * _log_sin(p.alpha) + math.log(_vmf_a_prime(k))


def vmf_negative_log_likelihood(data, p: VmfParams):
    s = sufficient_stats(data)
    return s.n * (vmf_log_norm(p.kappa) - p.kappa * (p.mean @ s.resultant_mean))


def vmf_first_part_nats(p: VmfParams, n, bounded=True):
    """vMF analogue of :func:`first_part_nats` with three free parameters."""
    standard = 1.5 * math.log(LATTICE_Q[3]) - vmf_log_prior(p) + 0.5 * vmf_fisher_log_det(p, n)
    if not bounded:
        return standard
    return 0.5 * _softplus(2.0 * standard)


def vmf_message_length(data, p: VmfParams, bounded=True) -> MessageLength:
    s = sufficient_stats(data)
    first = vmf_first_part_nats(p, s.n, bounded)
    second = vmf_negative_log_likelihood(s, p) + 1.5
    return MessageLength.from_nats(first, second)


def _vmf_direction(s):
    r = float(np.linalg.norm(s.resultant_mean))
    if r < 1e-12:
        raise ValueError("mean direction undefined")
    return s.resultant_mean / r, r


def vmf_ml_estimate(data) -> VmfParams:
    s = sufficient_stats(data)
    mu, r = _vmf_direction(s)
    return VmfParams.from_mean(mu, _solve_kappa_only(r))


def vmf_mml_estimate(data, bounded=True) -> VmfParams:
    """
    The mean direction is the sample resultant direction (the message length
    does not depend on it); kappa minimizes the message length in one
    dimension.
    """
    s = sufficient_stats(data)
    mu, r = _vmf_direction(s)
    base = VmfParams.from_mean(mu, 1.0)
    if base.alpha < 1e-6 or base.alpha > math.pi - 1e-6:
        # the first part is orientation-free; evaluate it away from the pole
        base = VmfParams(0.5 * math.pi, 0.0, 1.0)

    def f(lk):
        k = math.exp(lk)
        q = VmfParams(base.alpha, base.eta, k)
        return vmf_first_part_nats(q, s.n, bounded) + s.n * (vmf_log_norm(k) - k * r)

    k_ml = _solve_kappa_only(r)
    lo, hi = math.log(1e-6), max(math.log(k_ml) + 2.0, math.log(10.0))
    res = minimize_scalar(f, bounds=(lo, hi), method="bounded", options={"xatol": 1e-9})
    return VmfParams.from_mean(mu, math.exp(res.x))

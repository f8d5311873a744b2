"""
Kent (FB5) and von Mises-Fisher densities, moments, KL divergences and samplers.

Kent density on the unit sphere::

    f(x) = exp(kappa g1.x + beta [(g2.x)^2 - (g3.x)^2]) / c(kappa, beta)
"""

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from kentmix.geometry import angles_from_axes, axes_from_angles, cartesian_to_spherical
from kentmix.norm_series import DEFAULT_CONFIG, norm_terms

logger = logging.getLogger(__name__)

LOG_4PI = np.log(4.0 * np.pi)

# beta must stay below kappa/2 by this fraction of kappa
ECC_MARGIN = 1e-9


@dataclass(frozen=True)
class KentParams:
    psi: float
    alpha: float
    eta: float
    kappa: float
    beta: float

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("kappa must be positive, got {}".format(self.kappa))
        if self.beta < 0:
            raise ValueError("beta must be nonnegative, got {}".format(self.beta))
        if not self.beta < 0.5 * self.kappa - ECC_MARGIN * self.kappa:
            raise ValueError("beta must be below kappa/2 (kappa={}, beta={})".format(self.kappa, self.beta))
        if not 0.0 <= self.alpha <= np.pi:
            raise ValueError("alpha must lie in [0, pi], got {}".format(self.alpha))

    @classmethod
    def from_ecc(cls, psi, alpha, eta, kappa, ecc):
        return cls(psi, alpha, eta, kappa, 0.5 * ecc * kappa)

    @classmethod
    def from_axes(cls, Q, kappa, beta):
        a = angles_from_axes(Q, warn=False)
        return cls(a.psi, a.alpha, a.eta, kappa, beta)

    @property
    def ecc(self):
        return 2.0 * self.beta / self.kappa

    @property
    def angles(self):
        return (self.psi, self.alpha, self.eta)

    @property
    def axes(self):
        """3x3 matrix with columns gamma1 (mean), gamma2 (major), gamma3 (minor)."""
        return axes_from_angles(self.psi, self.alpha, self.eta)

    @property
    def mean(self):
        return self.axes[:, 0]

    def as_vector(self):
        return np.array([self.psi, self.alpha, self.eta, self.kappa, self.beta])

    def to_dict(self):
        return {"psi": self.psi, "alpha": self.alpha, "eta": self.eta,
                "kappa": self.kappa, "beta": self.beta}


@dataclass(frozen=True)
class VmfParams:
    alpha: float
    eta: float
    kappa: float

    def __post_init__(self):
        if self.kappa < 0:
            raise ValueError("kappa must be nonnegative, got {}".format(self.kappa))
        if not 0.0 <= self.alpha <= np.pi:
            raise ValueError("alpha must lie in [0, pi], got {}".format(self.alpha))

    @classmethod
    def from_mean(cls, mean, kappa):
        theta, phi = cartesian_to_spherical(np.asarray(mean, dtype=float))
        return cls(theta, phi, kappa)

    @property
    def mean(self):
        st = np.sin(self.alpha)
        return np.array([np.cos(self.alpha), st * np.cos(self.eta), st * np.sin(self.eta)])

    def as_vector(self):
        return np.array([self.alpha, self.eta, self.kappa])

    def to_dict(self):
        return {"alpha": self.alpha, "eta": self.eta, "kappa": self.kappa}


class KentMoments(NamedTuple):
    mean_vec: np.ndarray
    second_moment: np.ndarray
    lambdas: tuple


def rotate_params(p, R):
    """Parameters of the distribution of ``R x`` when ``x ~ p``."""
    return KentParams.from_axes(np.asarray(R) @ p.axes, p.kappa, p.beta)


def _as_points(x):
    x = np.asarray(x, dtype=float)
    return x[None, :] if x.ndim == 1 else x


def kent_log_density(x, p: KentParams, cfg=DEFAULT_CONFIG):
    """
    Log density at one point ``(3,)`` or many ``(N, 3)``.
    """
    single = np.ndim(x) == 1
    y = _as_points(x) @ p.axes
    out = p.kappa * y[:, 0] + p.beta * (y[:, 1] ** 2 - y[:, 2] ** 2) - norm_terms(p.kappa, p.beta, cfg).log_c
    return float(out[0]) if single else out


def standard_moments(kappa, beta, cfg=DEFAULT_CONFIG):
    """
    Mean resultant ``c_k/c`` and the eigenvalues ``(l1, l2, l3)`` of E[yy^T]
    for the distribution in its own frame.
    """
    t = norm_terms(kappa, beta, cfg)
    r1 = np.exp(t.log_c_k - t.log_c)
    l1 = np.exp(t.log_c_kk - t.log_c)
    cb = np.exp(t.log_c_b - t.log_c)
    return r1, (l1, 0.5 * (1.0 - l1 + cb), 0.5 * (1.0 - l1 - cb))


def kent_moments(p: KentParams, cfg=DEFAULT_CONFIG) -> KentMoments:
    """``E[x] = (c_k/c) g1`` and ``E[xx^T] = Q diag(l1, l2, l3) Q^T``."""
    Q = p.axes
    r1, lambdas = standard_moments(p.kappa, p.beta, cfg)
    return KentMoments(r1 * Q[:, 0], (Q * np.array(lambdas)) @ Q.T, lambdas)


def _expected_energy(p, mean_vec, second):
    """E[kappa g1.x + beta((g2.x)^2 - (g3.x)^2)] under given moments."""
    Q = p.axes
    g1, g2, g3 = Q[:, 0], Q[:, 1], Q[:, 2]
    return p.kappa * g1 @ mean_vec + p.beta * (g2 @ second @ g2 - g3 @ second @ g3)


def kent_kl(a: KentParams, b: KentParams, cfg=DEFAULT_CONFIG):
    """KL(a || b) in nats, using the moments of ``a``."""
    m = kent_moments(a, cfg)
    la = norm_terms(a.kappa, a.beta, cfg).log_c
    lb = norm_terms(b.kappa, b.beta, cfg).log_c
    kl = lb - la + _expected_energy(a, m.mean_vec, m.second_moment) - _expected_energy(b, m.mean_vec, m.second_moment)
    # rounding can leave a tiny negative value for identical inputs
    return max(float(kl), 0.0)


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _vmf_standard_cosines(kappa, n, rng):
    """Cosines ``w = mu.x`` for a vMF about the pole, by exact inversion."""
    u = rng.random(n)
    if kappa < 1e-12:
        return 2.0 * u - 1.0
    w = 1.0 + np.log(u + (1.0 - u) * np.exp(-2.0 * kappa)) / kappa
    return np.clip(w, -1.0, 1.0)


def _vmf_standard(kappa, n, rng):
    """Samples about ``(1, 0, 0)``."""
    w = _vmf_standard_cosines(kappa, n, rng)
    phi = 2.0 * np.pi * rng.random(n)
    s = np.sqrt(np.maximum(0.0, 1.0 - w * w))
    return np.column_stack([w, s * np.cos(phi), s * np.sin(phi)])


def kent_sample(p: KentParams, n: int, seed=None):
    """
    Draw ``n`` points by rejection from a vMF envelope.

    In the standard frame ``beta (y2^2 - y3^2) <= beta (1 - y1^2) <= 2 beta (1 - y1)``,
    so a vMF with concentration ``kappa - 2 beta`` bounds the target up to a
    constant; each proposal is kept with probability
    ``exp(2 beta y1 + beta (y2^2 - y3^2) - 2 beta)``.

    :param seed: integer seed or ``numpy.random.Generator``
    :return: ``(n, 3)`` array of unit vectors
    """
    rng = _rng(seed)
    kappa_env = p.kappa - 2.0 * p.beta
    out = []
    have = 0
    # expected acceptance is roughly sqrt((kappa - 2 beta) / (kappa + 2 beta))
    rate = max(0.05, np.sqrt(max(kappa_env, 1e-12) / (p.kappa + 2.0 * p.beta)))
    while have < n:
        m = int(1.2 * (n - have) / rate) + 16
        y = _vmf_standard(kappa_env, m, rng)
        log_acc = p.beta * (2.0 * y[:, 0] + y[:, 1] ** 2 - y[:, 2] ** 2 - 2.0)
        keep = np.log(rng.random(m)) < log_acc
        out.append(y[keep])
        have += int(keep.sum())
    y = np.concatenate(out)[:n]
    return y @ p.axes.T


def vmf_log_norm(kappa):
    """``ln(4 pi sinh(kappa) / kappa)``, stable for small and large kappa."""
    if kappa < 1e-8:
        return LOG_4PI + kappa * kappa / 6.0
    return LOG_4PI + kappa + np.log1p(-np.exp(-2.0 * kappa)) - np.log(2.0 * kappa)


def vmf_mean_resultant(kappa):
    """``A(kappa) = coth(kappa) - 1/kappa``."""
    if kappa < 1e-3:
        return kappa / 3.0 - kappa ** 3 / 45.0
    return 1.0 / np.tanh(kappa) - 1.0 / kappa


def vmf_log_density(x, p: VmfParams):
    single = np.ndim(x) == 1
    out = p.kappa * (_as_points(x) @ p.mean) - vmf_log_norm(p.kappa)
    return float(out[0]) if single else out


def vmf_moment(p: VmfParams):
    """
    ``(E[x], E[xx^T])``. Along the mean ``E[(mu.x)^2] = 1 - 2A/kappa``; each
    orthogonal direction carries ``A/kappa``.
    """
    mu = p.mean
    a = vmf_mean_resultant(p.kappa)
    perp = 1.0 / 3.0 if p.kappa < 1e-8 else a / p.kappa
    return a * mu, perp * np.eye(3) + (1.0 - 3.0 * perp) * np.outer(mu, mu)


def vmf_kl(a: VmfParams, b: VmfParams):
    mean_a = vmf_mean_resultant(a.kappa) * a.mean
    kl = vmf_log_norm(b.kappa) - vmf_log_norm(a.kappa) + (a.kappa * a.mean - b.kappa * b.mean) @ mean_a
    return max(float(kl), 0.0)


def _basis_for(mu):
    """Orthonormal matrix whose first column is ``mu``."""
    mu = np.asarray(mu, dtype=float)
    helper = np.eye(3)[int(np.argmin(np.abs(mu)))]
    u = helper - (helper @ mu) * mu
    u /= np.linalg.norm(u)
    return np.column_stack([mu, u, np.cross(mu, u)])


def vmf_sample(p: VmfParams, n: int, seed=None):
    rng = _rng(seed)
    return _vmf_standard(p.kappa, n, rng) @ _basis_for(p.mean).T

"""
Orientation algebra for the Kent axes.

The three orthonormal axes (mean, major, minor) are parameterized by the
angles ``(psi, alpha, eta)``: ``alpha`` and ``eta`` are the co-latitude and
longitude of the mean axis, and ``psi`` spins the major/minor pair about it.
Spherical coordinates use ``X1`` as the pole::

    x1 = cos(theta), x2 = sin(theta) cos(phi), x3 = sin(theta) sin(phi)
"""

import warnings
from typing import NamedTuple

import numpy as np

TWO_PI = 2.0 * np.pi

# below this sin(alpha) the mean axis sits on the pole and psi/eta mix
GIMBAL_EPS = 1e-12


class DegenerateOrientationWarning(UserWarning):
    """Raised when psi and eta cannot be separated (mean axis on the pole)."""


class OrientationAngles(NamedTuple):
    psi: float
    alpha: float
    eta: float

    @classmethod
    def make(cls, psi, alpha, eta):
        """Build angles, folding ``psi`` into [0, pi] and ``eta`` into [0, 2pi)."""
        if not 0.0 <= alpha <= np.pi:
            raise ValueError("alpha must lie in [0, pi], got {}".format(alpha))
        psi = float(np.mod(psi, np.pi)) if not 0.0 <= psi <= np.pi else float(psi)
        return cls(psi, float(alpha), float(np.mod(eta, TWO_PI)))


def rotation_psi(psi):
    c, s = np.cos(psi), np.sin(psi)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, s], [0.0, -s, c]])


def rotation_alpha(alpha):
    c, s = np.cos(alpha), np.sin(alpha)
    return np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_eta(eta):
    return rotation_psi(eta)


def rotation_matrix(psi, alpha, eta):
    """R = R_psi R_alpha R_eta, which maps each axis gamma_i onto X_i."""
    return rotation_psi(psi) @ rotation_alpha(alpha) @ rotation_eta(eta)


def axes_from_angles(psi, alpha, eta):
    """
    Return ``Q = (gamma1, gamma2, gamma3)`` as a 3x3 matrix with the axes as
    columns. ``Q`` equals the transpose of :func:`rotation_matrix`.
    """
    ca, sa = np.cos(alpha), np.sin(alpha)
    ce, se = np.cos(eta), np.sin(eta)
    cp, sp = np.cos(psi), np.sin(psi)
    g1 = [ca, sa * ce, sa * se]
    g2 = [-cp * sa, cp * ca * ce - sp * se, cp * ca * se + sp * ce]
    g3 = [sp * sa, -sp * ca * ce - cp * se, -sp * ca * se + cp * ce]
    return np.array([g1, g2, g3]).T


def angles_from_axes(Q, warn=True):
    """
    Recover ``(psi, alpha, eta)`` from an axis matrix.

    ``psi`` is folded into [0, pi); folding flips the signs of gamma2 and
    gamma3 together, which leaves the Kent density unchanged. When the mean
    axis lies on the pole (sin alpha < 1e-12) only psi +/- eta is
    identifiable, so psi is set to 0 and the combined angle goes to eta.
    """
    Q = np.asarray(Q, dtype=float)
    g1, g2, g3 = Q[:, 0], Q[:, 1], Q[:, 2]
    alpha = float(np.arccos(np.clip(g1[0], -1.0, 1.0)))
    if np.hypot(g1[1], g1[2]) < GIMBAL_EPS:
        if warn:
            warnings.warn(
                "mean axis on the pole; psi and eta are not separable",
                DegenerateOrientationWarning,
                stacklevel=2,
            )
        if g1[0] > 0:
            alpha = 0.0
            # gamma2 = (0, cos(psi+eta), sin(psi+eta))
            eta = np.arctan2(g2[2], g2[1])
        else:
            alpha = np.pi
            # gamma2 = (0, -cos(eta-psi), -sin(eta-psi))
            eta = np.arctan2(-g2[2], -g2[1])
        return OrientationAngles(0.0, alpha, float(np.mod(eta, TWO_PI)))
    eta = np.arctan2(g1[2], g1[1])
    psi = np.arctan2(g3[0], -g2[0])
    psi = float(np.mod(psi, np.pi))
    if psi >= np.pi:
        psi = 0.0
    return OrientationAngles(psi, alpha, float(np.mod(eta, TWO_PI)))


def spherical_to_cartesian(theta, phi):
    """Unit vector(s) for co-latitude ``theta`` and longitude ``phi`` (radians)."""
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    st = np.sin(theta)
    return np.stack([np.cos(theta), st * np.cos(phi), st * np.sin(phi)], axis=-1)


def cartesian_to_spherical(x):
    """
    Inverse of :func:`spherical_to_cartesian`. Accepts a single vector or an
    ``(N, 3)`` array; returns ``(theta, phi)`` with ``phi`` in [0, 2pi) and
    ``phi = 0`` at the poles.
    """
    x = np.asarray(x, dtype=float)
    x = x / np.linalg.norm(x, axis=-1, keepdims=True)
    theta = np.arccos(np.clip(x[..., 0], -1.0, 1.0))
    rho = np.hypot(x[..., 1], x[..., 2])
    phi = np.where(rho < GIMBAL_EPS, 0.0, np.mod(np.arctan2(x[..., 2], x[..., 1]), TWO_PI))
    # mod can return exactly 2pi for tiny negative angles
    phi = np.where(phi >= TWO_PI, 0.0, phi)
    if theta.ndim == 0:
        return float(theta), float(phi)
    return theta, phi


def normalize(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def wrap_angle(d, period):
    """Signed difference wrapped into [-period/2, period/2)."""
    return np.mod(np.asarray(d) + 0.5 * period, period) - 0.5 * period

"""Quaternion, rotation-matrix and Euler-angle helpers.

Conventions used throughout the package:

* Quaternions are ``ndarray`` of shape (4,), scalar first ``[w, x, y, z]``,
  Hamilton product.
* ``rotmat_from_quat(q)`` is the body-to-navigation direction cosine matrix.
* Euler angles are the intrinsic Z-Y-X sequence ``(yaw, pitch, roll)`` with
  ``C = Rz(yaw) @ Ry(pitch) @ Rx(roll)``. Yaw and roll are reported in
  ``[0, 2*pi)`` and pitch in ``[-pi/2, pi/2)``.
* Attitude errors are small rotations expressed in the navigation frame,
  ``C_true = (I + [dtheta]x) @ C_est``.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .exceptions import DegenerateInput, GimbalLock

TWO_PI = 2.0 * np.pi
GIMBAL_TOL = 1e-6


class EulerAngles(NamedTuple):
    """Z-Y-X Euler angles in radians."""

    yaw: float
    pitch: float
    roll: float


def skew(v):
    """Cross-product matrix, ``skew(a) @ b == cross(a, b)``."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def quat_normalize(q):
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q)


def quat_multiply(p, q):
    """Hamilton product ``p * q``."""
    pw, px, py, pz = p
    qw, qx, qy, qz = q
    return np.array(
        [
            pw * qw - px * qx - py * qy - pz * qz,
            pw * qx + px * qw + py * qz - pz * qy,
            pw * qy - px * qz + py * qw + pz * qx,
            pw * qz + px * qy - py * qx + pz * qw,
        ]
    )


def quat_conjugate(q):
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_from_rotvec(rv):
    """Exponential map of a rotation vector (axis times angle)."""
    rv = np.asarray(rv, dtype=float)
    angle = np.linalg.norm(rv)
    if angle < 1e-12:
        # second-order series keeps unit norm to machine precision
        q = np.array([1.0 - angle**2 / 8.0, *(0.5 * rv)])
        return q / np.linalg.norm(q)
    half = 0.5 * angle
    return np.array([np.cos(half), *(np.sin(half) / angle * rv)])


def rotvec_from_quat(q):
    """Logarithm map, returning the rotation vector with angle in [0, pi]."""
    q = quat_normalize(q)
    if q[0] < 0.0:
        q = -q
    vec_norm = np.linalg.norm(q[1:])
    if vec_norm < 1e-15:
        return 2.0 * q[1:]
    angle = 2.0 * np.arctan2(vec_norm, q[0])
    return angle / vec_norm * q[1:]


def quat_increment(q, dtheta):
    """Rotate ``q`` by the body-frame rotation vector ``dtheta``.

    This is the exact exponential-map version of the strapdown quaternion
    update, ``q' = q * exp(dtheta)``.
    """
    dtheta = np.asarray(dtheta, dtype=float)
    if np.linalg.norm(dtheta) < 1e-12:
        return np.asarray(q, dtype=float).copy()
    return quat_normalize(quat_multiply(q, quat_from_rotvec(dtheta)))


def quat_correct(q, dtheta):
    """Apply a navigation-frame attitude error, ``q' = exp(dtheta) * q``."""
    dtheta = np.asarray(dtheta, dtype=float)
    if np.linalg.norm(dtheta) < 1e-12:
        return np.asarray(q, dtype=float).copy()
    return quat_normalize(quat_multiply(quat_from_rotvec(dtheta), q))


def rotmat_from_quat(q):
    """Body-to-navigation rotation matrix of a (re-normalized) quaternion."""
    w, x, y, z = quat_normalize(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_from_rotmat(C):
    """Quaternion (w >= 0) of a rotation matrix, Shepperd's method."""
    C = np.asarray(C, dtype=float)
    tr = np.trace(C)
    d = np.array([tr, C[0, 0], C[1, 1], C[2, 2]])
    k = int(np.argmax(d))
    if k == 0:
        w = 0.5 * np.sqrt(1.0 + tr)
        q = np.array(
            [w, (C[2, 1] - C[1, 2]) / (4 * w), (C[0, 2] - C[2, 0]) / (4 * w), (C[1, 0] - C[0, 1]) / (4 * w)]
        )
    elif k == 1:
        x = 0.5 * np.sqrt(1.0 + 2 * C[0, 0] - tr)
        q = np.array(
            [(C[2, 1] - C[1, 2]) / (4 * x), x, (C[0, 1] + C[1, 0]) / (4 * x), (C[0, 2] + C[2, 0]) / (4 * x)]
        )
    elif k == 2:
        y = 0.5 * np.sqrt(1.0 + 2 * C[1, 1] - tr)
        q = np.array(
            [(C[0, 2] - C[2, 0]) / (4 * y), (C[0, 1] + C[1, 0]) / (4 * y), y, (C[1, 2] + C[2, 1]) / (4 * y)]
        )
    else:
        z = 0.5 * np.sqrt(1.0 + 2 * C[2, 2] - tr)
        q = np.array(
            [(C[1, 0] - C[0, 1]) / (4 * z), (C[0, 2] + C[2, 0]) / (4 * z), (C[1, 2] + C[2, 1]) / (4 * z), z]
        )
    if q[0] < 0.0:
        q = -q
    return quat_normalize(q)


def rotmat_from_euler(e):
    yaw, pitch, roll = e
    cy, sy = np.cos(yaw), np.sin(yaw)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cr, sr = np.cos(roll), np.sin(roll)
    return np.array(
        [
            [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
            [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
            [-sp, cp * sr, cp * cr],
        ]
    )


def euler_from_rotmat(C, *, wrap=True):
    """Z-Y-X Euler angles of ``C``.

    With ``wrap=True`` yaw and roll are mapped into ``[0, 2*pi)``; otherwise
    all angles are returned in ``(-pi, pi]``, which is what angle differences
    need.

    Raises
    ------
    GimbalLock
        If pitch is within 1e-6 rad of +/- pi/2.
    """
    C = np.asarray(C, dtype=float)
    s = -C[2, 0]
    pitch = np.arcsin(np.clip(s, -1.0, 1.0))
    if np.pi / 2 - abs(pitch) <= GIMBAL_TOL:
        raise GimbalLock(f"pitch {pitch:.9f} rad is at gimbal lock")
    yaw = np.arctan2(C[1, 0], C[0, 0])
    roll = np.arctan2(C[2, 1], C[2, 2])
    if wrap:
        yaw = np.mod(yaw, TWO_PI)
        roll = np.mod(roll, TWO_PI)
        # mod can round a tiny negative angle up to exactly 2*pi
        yaw = 0.0 if yaw >= TWO_PI else yaw
        roll = 0.0 if roll >= TWO_PI else roll
    return EulerAngles(float(yaw), float(pitch), float(roll))


def euler_from_quat(q, *, wrap=True):
    return euler_from_rotmat(rotmat_from_quat(q), wrap=wrap)


def quat_from_euler(e):
    yaw, pitch, roll = e
    cy, sy = np.cos(yaw / 2), np.sin(yaw / 2)
    cp, sp = np.cos(pitch / 2), np.sin(pitch / 2)
    cr, sr = np.cos(roll / 2), np.sin(roll / 2)
    return quat_normalize(
        np.array(
            [
                cy * cp * cr + sy * sp * sr,
                cy * cp * sr - sy * sp * cr,
                cy * sp * cr + sy * cp * sr,
                sy * cp * cr - cy * sp * sr,
            ]
        )
    )


def euler_rate_matrix(e):
    """Map Z-Y-X Euler angle perturbations to a navigation-frame rotation.

    Returns ``E`` such that a small change ``(d_yaw, d_pitch, d_roll)``
    corresponds to the navigation-frame rotation vector ``E @ d``.
    """
    yaw, pitch, _ = e
    cy, sy = np.cos(yaw), np.sin(yaw)
    cp, sp = np.cos(pitch), np.sin(pitch)
    return np.array([[0.0, -sy, cy * cp], [0.0, cy, sy * cp], [1.0, 0.0, -sp]])


def euler_covariance(q, attitude_cov):
    """Covariance of the Euler angles given a navigation-frame attitude error covariance."""
    e = euler_from_quat(q)
    J = np.linalg.inv(euler_rate_matrix(e))
    cov = J @ attitude_cov @ J.T
    return 0.5 * (cov + cov.T)


def polar_project(M):
    """Closest rotation matrix to ``M`` in the Frobenius norm.

    Uses the SVD form of the polar decomposition, flipping the direction of
    the smallest singular value when needed to obtain ``det = +1``.

    Raises
    ------
    DegenerateInput
        If a sign flip is required while the two smallest singular values
        coincide, so the minimizer is not unique.
    """
    M = np.asarray(M, dtype=float)
    if not np.all(np.isfinite(M)):
        raise DegenerateInput("matrix has non-finite entries")
    U, sv, Vt = np.linalg.svd(M)
    d = np.sign(np.linalg.det(U @ Vt))
    if d < 0.0:
        if sv[1] - sv[2] <= 1e-12 * max(1.0, sv[0]):
            raise DegenerateInput("closest rotation is not unique (repeated smallest singular value)")
        C = U @ np.diag([1.0, 1.0, -1.0]) @ Vt
    else:
        C = U @ Vt
    return C


def wrap_to_pi(a):
    """Wrap angles to ``(-pi, pi]``."""
    a = np.asarray(a, dtype=float)
    w = np.mod(a + np.pi, TWO_PI) - np.pi
    return np.where(w == -np.pi, np.pi, w)

"""Continuous 9D rotation parameterization and symmetry canonicalization."""

from __future__ import annotations

import numpy as np

from .errors import DegenerateRotationError

_DEGENERATE_EPS = 1e-8


def rot9_to_so3(raw) -> np.ndarray:
    """Map 9 unconstrained reals onto SO(3).

    The raw vector is read row-major as a 3x3 matrix whose columns are
    Gram-Schmidt orthonormalized; the third axis is replaced by e1 x e2,
    which equals the sign-corrected orthonormalization of the third
    column. Any rotation matrix (flattened) maps to itself.
    """
    m = np.asarray(raw, dtype=np.float64).reshape(3, 3)
    a1, a2 = m[:, 0], m[:, 1]
    n1 = np.linalg.norm(a1)
    if n1 < _DEGENERATE_EPS:
        raise DegenerateRotationError("first column is near zero")
    e1 = a1 / n1
    u2 = a2 - (e1 @ a2) * e1
    n2 = np.linalg.norm(u2)
    if n2 < _DEGENERATE_EPS:
        raise DegenerateRotationError("first two columns are near parallel")
    e2 = u2 / n2
    e3 = np.cross(e1, e2)
    return np.stack([e1, e2, e3], axis=1)


def rot9_to_so3_backward(raw, grad_rotation) -> np.ndarray:
    """Chain dL/dR back to the 9 raw parameters.

    After the determinant correction the output is locally independent of
    the third raw column, so its gradient is zero.
    """
    m = np.asarray(raw, dtype=np.float64).reshape(3, 3)
    dR = np.asarray(grad_rotation, dtype=np.float64).reshape(3, 3)
    a1, a2 = m[:, 0], m[:, 1]
    n1 = np.linalg.norm(a1)
    e1 = a1 / n1
    u2 = a2 - (e1 @ a2) * e1
    n2 = np.linalg.norm(u2)
    e2 = u2 / n2

    c3 = dR[:, 2]
    g1 = dR[:, 0] + np.cross(e2, c3)   # e3 = e1 x e2 contributions
    g2 = dR[:, 1] + np.cross(c3, e1)
    v = (g2 - (g2 @ e2) * e2) / n2     # through e2 = u2 / |u2|
    da2 = v - (v @ e1) * e1            # through u2 = a2 - (e1.a2) e1
    g1 = g1 - (v @ e1) * a2 - (e1 @ a2) * v
    da1 = (g1 - (g1 @ e1) * e1) / n1   # through e1 = a1 / |a1|

    out = np.zeros((3, 3))
    out[:, 0] = da1
    out[:, 1] = da2
    return out.reshape(9)


def so3_to_raw9(rotation) -> np.ndarray:
    """Row-major flattening; a fixed point of rot9_to_so3."""
    return np.asarray(rotation, dtype=np.float64).reshape(9).copy()


def axis_rotation(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation about a unit axis."""
    a = np.asarray(axis, dtype=np.float64)
    a = a / np.linalg.norm(a)
    k = np.array([[0.0, -a[2], a[1]],
                  [a[2], 0.0, -a[0]],
                  [-a[1], a[0], 0.0]])
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def _reference_direction(axis: np.ndarray) -> np.ndarray:
    seed = np.array([1.0, 0.0, 0.0])
    if abs(seed @ axis) > 0.9:
        seed = np.array([0.0, 1.0, 0.0])
    v = seed - (seed @ axis) * axis
    return v / np.linalg.norm(v)


def normalize_symmetric_rotation(rotation, axis) -> np.ndarray:
    """Canonical representative of { R * Rot_axis(theta) }.

    The spin angle is chosen so the image of a fixed reference direction
    orthogonal to the axis lands in the canonical half-plane around that
    same direction (maximal dot product). Idempotent, and invariant to
    pre-composed spins about the axis.
    """
    R = np.asarray(rotation, dtype=np.float64)
    a = np.asarray(axis, dtype=np.float64)
    a = a / np.linalg.norm(a)
    v0 = _reference_direction(a)
    w0 = np.cross(a, v0)
    c = (R @ v0) @ v0
    s = (R @ w0) @ v0
    if abs(c) < 1e-15 and abs(s) < 1e-15:
        return R.copy()   # reference circle orthogonal to v0: genuinely ambiguous
    theta = np.arctan2(s, c)
    return R @ axis_rotation(a, theta)


def rotation_angle(rotation_a, rotation_b) -> float:
    """Geodesic angle between two rotations, radians."""
    Ra = np.asarray(rotation_a, dtype=np.float64)
    Rb = np.asarray(rotation_b, dtype=np.float64)
    cos = (np.trace(Ra.T @ Rb) - 1.0) / 2.0
    return float(np.arccos(np.clip(cos, -1.0, 1.0)))


def random_rotation(rng) -> np.ndarray:
    """Uniform random rotation via QR of a Gaussian matrix."""
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q @ np.diag(np.sign(np.diag(r)))
    if np.linalg.det(q) < 0:
        q[:, 2] = -q[:, 2]
    return q

"""Rotation math: 6D encoding, quaternions, exp/log maps, slerp.

All functions are batched over leading dimensions and work in float64.
The 6D representation is the first two columns of the rotation matrix,
decoded back with Gram-Schmidt.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidInputError

_ORTHO_ATOL = 1e-6
_DEGENERATE_NORM = 1e-8


def _check_finite(x: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(x)):
        raise InvalidInputError(f"{name} contains non-finite values")


def encode_rotation_6d(rot: np.ndarray) -> np.ndarray:
    """Encode rotation matrices (..., 3, 3) as (..., 6): first two columns stacked."""
    rot = np.asarray(rot, dtype=np.float64)
    if rot.shape[-2:] != (3, 3):
        raise InvalidInputError(f"expected (..., 3, 3) rotation matrices, got {rot.shape}")
    _check_finite(rot, "rotation matrix")
    eye = np.eye(3)
    gram = rot @ np.swapaxes(rot, -1, -2)
    if not np.allclose(gram, eye, atol=_ORTHO_ATOL):
        raise InvalidInputError("matrix is not orthonormal within 1e-6")
    if not np.allclose(np.linalg.det(rot), 1.0, atol=_ORTHO_ATOL):
        raise InvalidInputError("matrix determinant is not +1 within 1e-6")
    return np.concatenate([rot[..., :, 0], rot[..., :, 1]], axis=-1)


def decode_rotation_6d(v: np.ndarray) -> np.ndarray:
    """Decode (..., 6) vectors to rotation matrices via Gram-Schmidt on the two columns."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != 6:
        raise InvalidInputError(f"expected (..., 6) input, got {v.shape}")
    _check_finite(v, "6d rotation")
    a, b = v[..., :3], v[..., 3:]
    na = np.linalg.norm(a, axis=-1, keepdims=True)
    if np.any(na < _DEGENERATE_NORM):
        raise InvalidInputError("first 6d column is degenerate (near-zero norm)")
    c0 = a / na
    b_perp = b - np.sum(c0 * b, axis=-1, keepdims=True) * c0
    nb = np.linalg.norm(b_perp, axis=-1, keepdims=True)
    if np.any(nb < _DEGENERATE_NORM):
        raise InvalidInputError("6d columns are near-collinear")
    c1 = b_perp / nb
    c2 = np.cross(c0, c1)
    return np.stack([c0, c1, c2], axis=-1)


def axis_angle_to_matrix(rotvec: np.ndarray) -> np.ndarray:
    """Exponential map: rotation vectors (..., 3) to matrices (..., 3, 3)."""
    rotvec = np.asarray(rotvec, dtype=np.float64)
    if rotvec.shape[-1] != 3:
        raise InvalidInputError(f"expected (..., 3) rotation vectors, got {rotvec.shape}")
    theta = np.linalg.norm(rotvec, axis=-1, keepdims=True)
    small = theta[..., 0] < 1e-8
    safe = np.where(theta < 1e-8, 1.0, theta)
    k = rotvec / safe
    kx, ky, kz = k[..., 0], k[..., 1], k[..., 2]
    zeros = np.zeros_like(kx)
    K = np.stack(
        [
            np.stack([zeros, -kz, ky], axis=-1),
            np.stack([kz, zeros, -kx], axis=-1),
            np.stack([-ky, kx, zeros], axis=-1),
        ],
        axis=-2,
    )
    t = theta[..., None]
    eye = np.broadcast_to(np.eye(3), K.shape)
    out = eye + np.sin(t) * K + (1.0 - np.cos(t)) * (K @ K)
    # first-order fallback keeps gradients sane near zero
    approx = eye + _skew(rotvec)
    return np.where(small[..., None, None], approx, out)


def _skew(v: np.ndarray) -> np.ndarray:
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    zeros = np.zeros_like(x)
    return np.stack(
        [
            np.stack([zeros, -z, y], axis=-1),
            np.stack([z, zeros, -x], axis=-1),
            np.stack([-y, x, zeros], axis=-1),
        ],
        axis=-2,
    )


def matrix_to_axis_angle(rot: np.ndarray) -> np.ndarray:
    """Log map: rotation matrices (..., 3, 3) to rotation vectors (..., 3)."""
    rot = np.asarray(rot, dtype=np.float64)
    quat = quat_from_matrix(rot)
    # via quaternion: stable at both theta ~ 0 and theta ~ pi
    w = np.clip(quat[..., 0], -1.0, 1.0)
    xyz = quat[..., 1:]
    n = np.linalg.norm(xyz, axis=-1)
    theta = 2.0 * np.arctan2(n, w)
    scale = np.where(n < 1e-12, 2.0, theta / np.where(n < 1e-12, 1.0, n))
    return xyz * scale[..., None]


def quat_from_matrix(rot: np.ndarray) -> np.ndarray:
    """Matrices (..., 3, 3) to unit quaternions (..., 4) in wxyz order, w >= 0."""
    rot = np.asarray(rot, dtype=np.float64)
    if rot.shape[-2:] != (3, 3):
        raise InvalidInputError(f"expected (..., 3, 3), got {rot.shape}")
    m = rot
    # Shepperd's method, branch on the largest diagonal combination
    t0 = 1.0 + m[..., 0, 0] + m[..., 1, 1] + m[..., 2, 2]
    t1 = 1.0 + m[..., 0, 0] - m[..., 1, 1] - m[..., 2, 2]
    t2 = 1.0 - m[..., 0, 0] + m[..., 1, 1] - m[..., 2, 2]
    t3 = 1.0 - m[..., 0, 0] - m[..., 1, 1] + m[..., 2, 2]

    q0 = np.stack(
        [t0, m[..., 2, 1] - m[..., 1, 2], m[..., 0, 2] - m[..., 2, 0], m[..., 1, 0] - m[..., 0, 1]],
        axis=-1,
    )
    q1 = np.stack(
        [m[..., 2, 1] - m[..., 1, 2], t1, m[..., 1, 0] + m[..., 0, 1], m[..., 0, 2] + m[..., 2, 0]],
        axis=-1,
    )
    q2 = np.stack(
        [m[..., 0, 2] - m[..., 2, 0], m[..., 1, 0] + m[..., 0, 1], t2, m[..., 2, 1] + m[..., 1, 2]],
        axis=-1,
    )
    q3 = np.stack(
        [m[..., 1, 0] - m[..., 0, 1], m[..., 0, 2] + m[..., 2, 0], m[..., 2, 1] + m[..., 1, 2], t3],
        axis=-1,
    )
    ts = np.stack([t0, t1, t2, t3], axis=-1)
    idx = np.argmax(ts, axis=-1)
    qs = np.stack([q0, q1, q2, q3], axis=-2)
    quat = np.take_along_axis(qs, idx[..., None, None].repeat(4, axis=-1), axis=-2)[..., 0, :]
    quat = quat / np.linalg.norm(quat, axis=-1, keepdims=True)
    sign = np.where(quat[..., :1] < 0.0, -1.0, 1.0)
    return quat * sign


def matrix_from_quat(quat: np.ndarray) -> np.ndarray:
    """Unit quaternions (..., 4) wxyz to matrices (..., 3, 3)."""
    quat = np.asarray(quat, dtype=np.float64)
    if quat.shape[-1] != 4:
        raise InvalidInputError(f"expected (..., 4), got {quat.shape}")
    q = quat / np.linalg.norm(quat, axis=-1, keepdims=True)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    row0 = np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], axis=-1)
    row1 = np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], axis=-1)
    row2 = np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], axis=-1)
    return np.stack([row0, row1, row2], axis=-2)


def quat_slerp(qa: np.ndarray, qb: np.ndarray, frac: float | np.ndarray) -> np.ndarray:
    """Spherical interpolation between unit quaternions, shortest path."""
    qa = np.asarray(qa, dtype=np.float64)
    qb = np.asarray(qb, dtype=np.float64)
    dot = np.sum(qa * qb, axis=-1, keepdims=True)
    qb = np.where(dot < 0.0, -qb, qb)
    dot = np.abs(dot)
    dot = np.clip(dot, -1.0, 1.0)
    theta = np.arccos(dot)
    sin_theta = np.sin(theta)
    near = sin_theta[..., 0] < 1e-7
    frac = np.asarray(frac, dtype=np.float64)
    while frac.ndim < qa.ndim - 1:
        frac = frac[..., None]
    f = frac[..., None] if frac.ndim == qa.ndim - 1 else frac
    safe_sin = np.where(sin_theta < 1e-7, 1.0, sin_theta)
    wa = np.sin((1.0 - f) * theta) / safe_sin
    wb = np.sin(f * theta) / safe_sin
    out = wa * qa + wb * qb
    lerp = (1.0 - f) * qa + f * qb
    out = np.where(near[..., None], lerp, out)
    return out / np.linalg.norm(out, axis=-1, keepdims=True)


def slerp_matrices(ra: np.ndarray, rb: np.ndarray, frac: float) -> np.ndarray:
    """Slerp between rotation matrices (..., 3, 3)."""
    return matrix_from_quat(quat_slerp(quat_from_matrix(ra), quat_from_matrix(rb), frac))


def rotz(yaw: np.ndarray | float) -> np.ndarray:
    """Rotation about world Z by yaw (radians); batched over yaw's shape."""
    yaw = np.asarray(yaw, dtype=np.float64)
    c, s = np.cos(yaw), np.sin(yaw)
    zeros = np.zeros_like(c)
    ones = np.ones_like(c)
    row0 = np.stack([c, -s, zeros], axis=-1)
    row1 = np.stack([s, c, zeros], axis=-1)
    row2 = np.stack([zeros, zeros, ones], axis=-1)
    return np.stack([row0, row1, row2], axis=-2)


def random_rotation(rng: np.random.Generator, shape: tuple[int, ...] = ()) -> np.ndarray:
    """Uniform random rotation matrices via normalized Gaussian quaternions."""
    q = rng.standard_normal(shape + (4,))
    q /= np.linalg.norm(q, axis=-1, keepdims=True)
    return matrix_from_quat(q)

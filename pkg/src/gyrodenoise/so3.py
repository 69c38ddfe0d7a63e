"""Numerically stable rotation algebra on SO(3).

All rotations are plain 3x3 numpy arrays (optionally stacked along leading
axes). Rotation vectors ("axis-angle") are 3-vectors in radians. Functions
accept both single and batched inputs where noted.
"""

from __future__ import annotations

import numpy as np

# Branch thresholds (double-precision crossover points).
EXP_SMALL_ANGLE = 1e-8
LOG_SMALL_ANGLE = 1e-6
LOG_NEAR_PI = np.pi - 1e-4

ORTHO_TOL = 1e-6


class InvalidRotationError(ValueError):
    """Raised when a matrix fails the SO(3) invariants beyond tolerance."""


def hat(v):
    """Skew-symmetric matrix of a 3-vector (batched over leading axes)."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def vee(m):
    """Inverse of hat: extract the 3-vector from a skew-symmetric matrix."""
    m = np.asarray(m, dtype=float)
    return np.stack(
        [m[..., 2, 1], m[..., 0, 2], m[..., 1, 0]], axis=-1
    )


def is_rotation(r, tol=1e-9):
    r = np.asarray(r, dtype=float)
    if r.shape[-2:] != (3, 3):
        return False
    eye = np.eye(3)
    ortho = np.linalg.norm(
        np.swapaxes(r, -1, -2) @ r - eye, axis=(-2, -1)
    )
    det = np.linalg.det(r)
    return bool(np.all(ortho < tol) and np.all(np.abs(det - 1.0) < tol))


def check_rotation(r, tol=ORTHO_TOL):
    """Raise InvalidRotationError if r is not a rotation within tol."""
    r = np.asarray(r, dtype=float)
    if r.shape[-2:] != (3, 3):
        raise InvalidRotationError(f"expected trailing shape (3, 3), got {r.shape}")
    if not np.all(np.isfinite(r)):
        raise InvalidRotationError("non-finite entries in rotation matrix")
    err = np.linalg.norm(np.swapaxes(r, -1, -2) @ r - np.eye(3), axis=(-2, -1))
    if np.any(err > tol):
        raise InvalidRotationError(
            f"matrix fails orthonormality: |R^T R - I| = {float(np.max(err)):.3e}"
        )
    det = np.linalg.det(r)
    if np.any(np.abs(det - 1.0) > tol):
        raise InvalidRotationError(f"determinant {float(np.min(det)):.6f} != 1")
    return r


def exp_so3(v):
    """SO(3) exponential map (Rodrigues formula), batched over leading axes.

    Uses a second-order series for the coefficients below EXP_SMALL_ANGLE to
    avoid 0/0.
    """
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError("non-finite rotation vector")
    theta = np.linalg.norm(v, axis=-1)
    small = theta < EXP_SMALL_ANGLE
    th = np.where(small, 1.0, theta)  # avoid division warnings
    a = np.where(small, 1.0 - theta**2 / 6.0, np.sin(th) / th)
    b = np.where(small, 0.5 - theta**2 / 24.0, (1.0 - np.cos(th)) / th**2)
    k = hat(v)
    return (
        np.eye(3)
        + a[..., None, None] * k
        + b[..., None, None] * (k @ k)
    )


def _log_near_pi(r, theta):
    # (R + R^T)/2 = cos(t) I + (1 - cos(t)) n n^T; recover the axis from the
    # strongest column, then fix its sign with the skew part.
    c = np.cos(theta)
    s = (r + r.T) / 2.0
    nnt = (s - c * np.eye(3)) / (1.0 - c)
    i = int(np.argmax(np.diag(nnt)))
    n = nnt[:, i]
    n = n / np.linalg.norm(n)
    a = vee(r - r.T)  # = 2 sin(t) n
    if np.dot(a, n) < 0:
        n = -n
    elif np.dot(a, n) == 0.0:
        # theta == pi exactly: sign is ambiguous, pick a canonical one
        for x in n:
            if x != 0.0:
                if x < 0:
                    n = -n
                break
    return theta * n


def log_so3(r):
    """SO(3) logarithm map, inverse of exp_so3 on the ball |v| < pi.

    Batched over leading axes. Uses a series branch near theta = 0 and
    symmetric-part axis extraction near theta = pi.
    """
    r = check_rotation(r)
    single = r.ndim == 2
    rs = r.reshape((-1, 3, 3))
    tr = np.trace(rs, axis1=-2, axis2=-1)
    u = np.clip((tr - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(u)
    a = vee(rs - np.swapaxes(rs, -1, -2))

    out = np.empty((rs.shape[0], 3))
    small = theta < LOG_SMALL_ANGLE
    near_pi = theta > LOG_NEAR_PI
    mid = ~small & ~near_pi

    # series for theta / (2 sin theta)
    c_small = 0.5 + theta[small] ** 2 / 12.0
    out[small] = c_small[:, None] * a[small]

    th = theta[mid]
    out[mid] = (th / (2.0 * np.sin(th)))[:, None] * a[mid]

    for idx in np.nonzero(near_pi)[0]:
        out[idx] = _log_near_pi(rs[idx], theta[idx])

    return out[0] if single else out.reshape(r.shape[:-2] + (3,))


def project_to_so3(m):
    """Nearest rotation matrix (polar decomposition via SVD), batched."""
    m = np.asarray(m, dtype=float)
    u, _, vt = np.linalg.svd(m)
    r = u @ vt
    det = np.linalg.det(r)
    # flip the last singular direction where det == -1
    if np.any(det < 0):
        u = u.copy()
        u[..., :, 2] = np.where((det < 0)[..., None], -u[..., :, 2], u[..., :, 2])
        r = u @ vt
    return r


def compose(a, b):
    """Rotation composition a @ b."""
    return np.matmul(a, b)


def sequential_product(rots, reproject_every=512):
    """Left-to-right product of a stack of rotations (M, 3, 3).

    Re-projects onto SO(3) every `reproject_every` factors to bound
    round-off drift.
    """
    rots = np.asarray(rots, dtype=float)
    out = np.eye(3)
    for i, r in enumerate(rots):
        out = out @ r
        if reproject_every and (i + 1) % reproject_every == 0:
            out = project_to_so3(out)
    return out


def integrate_increments(r0, omegas, dt, reproject_every=512):
    """Open-loop integration R_n = R_{n-1} exp(omega_n dt).

    Returns the (M+1, 3, 3) stack R_0..R_M for M angular-rate samples.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    omegas = np.asarray(omegas, dtype=float)
    if omegas.ndim != 2 or omegas.shape[1] != 3:
        raise ValueError(f"expected (M, 3) angular rates, got {omegas.shape}")
    bad = np.nonzero(~np.all(np.isfinite(omegas), axis=1))[0]
    if bad.size:
        raise ValueError(f"non-finite angular rate at index {int(bad[0])}")
    incs = exp_so3(omegas * dt)
    out = np.empty((len(omegas) + 1, 3, 3))
    out[0] = np.asarray(r0, dtype=float)
    cur = out[0]
    for i, inc in enumerate(incs):
        cur = cur @ inc
        if reproject_every and (i + 1) % reproject_every == 0:
            cur = project_to_so3(cur)
        out[i + 1] = cur
    return out


def relative_increments(rots, j, stride=None):
    """delta R_{i,i+j} = R_i^T R_{i+j} at i = 0, stride, 2*stride, ...

    `stride` defaults to j (one window every j timestamps).
    """
    rots = np.asarray(rots, dtype=float)
    if stride is None:
        stride = j
    starts = np.arange(0, len(rots) - j, stride)
    ri = rots[starts]
    rj = rots[starts + j]
    return starts, np.swapaxes(ri, -1, -2) @ rj


def quat_to_rot(q):
    """Unit quaternion (w, x, y, z) to rotation matrix, batched.

    Internal helper for ground-truth parsing; quaternions are not part of
    the public rotation API.
    """
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    r = np.empty(q.shape[:-1] + (3, 3))
    r[..., 0, 0] = 1 - 2 * (y * y + z * z)
    r[..., 0, 1] = 2 * (x * y - w * z)
    r[..., 0, 2] = 2 * (x * z + w * y)
    r[..., 1, 0] = 2 * (x * y + w * z)
    r[..., 1, 1] = 1 - 2 * (x * x + z * z)
    r[..., 1, 2] = 2 * (y * z - w * x)
    r[..., 2, 0] = 2 * (x * z - w * y)
    r[..., 2, 1] = 2 * (y * z + w * x)
    r[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return r


def rot_to_quat(r):
    """Rotation matrix to unit quaternion (w, x, y, z), single matrix."""
    r = np.asarray(r, dtype=float)
    tr = np.trace(r)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2
        return np.array(
            [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s,
             (r[1, 0] - r[0, 1]) / s]
        )
    i = int(np.argmax(np.diag(r)))
    j, k = (i + 1) % 3, (i + 2) % 3
    s = np.sqrt(r[i, i] - r[j, j] - r[k, k] + 1.0) * 2
    q = np.empty(4)
    q[0] = (r[k, j] - r[j, k]) / s
    q[1 + i] = 0.25 * s
    q[1 + j] = (r[j, i] + r[i, j]) / s
    q[1 + k] = (r[k, i] + r[i, k]) / s
    return q / np.linalg.norm(q)

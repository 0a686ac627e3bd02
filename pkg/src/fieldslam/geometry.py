"""Camera model and Lie-group machinery (SE(3), Sim(3)) shared by all solvers.

Conventions fixed here and used everywhere else:
  * poses are camera-to-world; X_world = T @ X_cam,
  * retractions are right-multiplicative, T <- T * exp(xi),
  * twist layout is (v, omega) for se(3) and (v, omega, sigma) for sim(3),
  * quaternions are stored scalar-first (w, x, y, z) and kept unit norm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonPositiveDepth, NonPositiveInverseDepth

# Below this rotation angle / log-scale the trig coefficients switch to
# their Taylor expansions.
SMALL_ANGLE = 1e-8

_MIN_Z = 1e-8


def _readonly(a, shape):
    arr = np.array(a, dtype=np.float64).reshape(shape)
    arr.flags.writeable = False
    return arr


# ---------------------------------------------------------------------------
# quaternion helpers (scalar-first)
# ---------------------------------------------------------------------------

def quat_mul(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conj(q):
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_normalize(q):
    return q / np.linalg.norm(q)


def quat_to_matrix(q):
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(R):
    """Rotation matrix to unit quaternion, Shepperd's branch selection."""
    m = np.asarray(R, dtype=np.float64)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        t = tr + 1.0
        q = np.array([t, m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1]])
    elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
        t = 1.0 + m[0, 0] - m[1, 1] - m[2, 2]
        q = np.array([m[2, 1] - m[1, 2], t, m[0, 1] + m[1, 0], m[0, 2] + m[2, 0]])
    elif m[1, 1] >= m[2, 2]:
        t = 1.0 - m[0, 0] + m[1, 1] - m[2, 2]
        q = np.array([m[0, 2] - m[2, 0], m[0, 1] + m[1, 0], t, m[1, 2] + m[2, 1]])
    else:
        t = 1.0 - m[0, 0] - m[1, 1] + m[2, 2]
        q = np.array([m[1, 0] - m[0, 1], m[0, 2] + m[2, 0], m[1, 2] + m[2, 1], t])
    q *= 0.5 / np.sqrt(t)
    if q[0] < 0:
        q = -q
    return q


def hat(v):
    """Skew-symmetric matrix of a 3-vector (or batch (..., 3) -> (..., 3, 3))."""
    v = np.asarray(v, dtype=np.float64)
    z = np.zeros_like(v[..., 0])
    return np.stack([
        np.stack([z, -v[..., 2], v[..., 1]], axis=-1),
        np.stack([v[..., 2], z, -v[..., 0]], axis=-1),
        np.stack([-v[..., 1], v[..., 0], z], axis=-1),
    ], axis=-2)


def so3_exp_quat(omega):
    """Axis-angle 3-vector to unit quaternion."""
    omega = np.asarray(omega, dtype=np.float64)
    theta = np.linalg.norm(omega)
    if theta < SMALL_ANGLE:
        # sin(t/2)/t ~ 1/2 - t^2/48
        k = 0.5 - theta * theta / 48.0
        q = np.concatenate([[1.0 - theta * theta / 8.0], k * omega])
    else:
        half = 0.5 * theta
        q = np.concatenate([[np.cos(half)], np.sin(half) / theta * omega])
    return quat_normalize(q)


def so3_log(q):
    """Unit quaternion to axis-angle 3-vector on the principal branch."""
    q = np.asarray(q, dtype=np.float64)
    if q[0] < 0:
        q = -q
    vn = np.linalg.norm(q[1:])
    if vn < SMALL_ANGLE:
        return 2.0 / q[0] * q[1:]
    theta = 2.0 * np.arctan2(vn, q[0])
    return theta / vn * q[1:]


def _so3_left_jacobian_terms(omega):
    """Coefficients (A, B) of V = I + A*hat(w) + B*hat(w)^2 for SE(3) exp."""
    theta = np.linalg.norm(omega)
    if theta < SMALL_ANGLE:
        t2 = theta * theta
        return 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0
    t2 = theta * theta
    return (1.0 - np.cos(theta)) / t2, (theta - np.sin(theta)) / (t2 * theta)


def _sim3_w_matrix(omega, sigma):
    """Closed-form W with t = W v for sim(3) exp (Sim(3) V-matrix)."""
    theta = np.linalg.norm(omega)
    s = np.exp(sigma)
    if abs(sigma) < SMALL_ANGLE:
        C = 1.0
        if theta < SMALL_ANGLE:
            A, B = 0.5, 1.0 / 6.0
        else:
            t2 = theta * theta
            A = (1.0 - np.cos(theta)) / t2
            B = (theta - np.sin(theta)) / (t2 * theta)
    else:
        C = (s - 1.0) / sigma
        if theta < SMALL_ANGLE:
            s2 = sigma * sigma
            A = ((sigma - 1.0) * s + 1.0) / s2
            B = (s * (0.5 * s2 - sigma + 1.0) - 1.0) / (s2 * sigma)
        else:
            t2 = theta * theta
            a = s * np.sin(theta)
            b = s * np.cos(theta)
            c = t2 + sigma * sigma
            A = (a * sigma + (1.0 - b) * theta) / (theta * c)
            B = (C - ((b - 1.0) * sigma + a * theta) / c) / t2
    W = hat(omega)
    return C * np.eye(3) + A * W + B * (W @ W)


# ---------------------------------------------------------------------------
# pose types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SE3:
    """Rigid transform, camera-to-world. Immutable."""

    q: np.ndarray  # unit quaternion (w, x, y, z)
    t: np.ndarray  # translation, meters

    def __init__(self, q, t):
        object.__setattr__(self, "q", _readonly(quat_normalize(np.asarray(q, dtype=np.float64)), (4,)))
        object.__setattr__(self, "t", _readonly(t, (3,)))

    @staticmethod
    def identity():
        return SE3(np.array([1.0, 0, 0, 0]), np.zeros(3))

    @staticmethod
    def from_matrix(M):
        M = np.asarray(M, dtype=np.float64)
        return SE3(matrix_to_quat(M[:3, :3]), M[:3, 3])

    def rotation_matrix(self):
        return quat_to_matrix(self.q)

    def matrix(self):
        M = np.eye(4)
        M[:3, :3] = self.rotation_matrix()
        M[:3, 3] = self.t
        return M

    def compose(self, other: "SE3") -> "SE3":
        return SE3(quat_mul(self.q, other.q), self.t + self.rotation_matrix() @ other.t)

    def __matmul__(self, other):
        return self.compose(other)

    def inverse(self) -> "SE3":
        qc = quat_conj(self.q)
        return SE3(qc, -(quat_to_matrix(qc) @ self.t))

    def transform(self, p):
        """Apply to one point (3,) or a batch (..., 3)."""
        p = np.asarray(p, dtype=np.float64)
        return p @ self.rotation_matrix().T + self.t

    def rotate(self, v):
        return np.asarray(v, dtype=np.float64) @ self.rotation_matrix().T

    def retract(self, xi) -> "SE3":
        return self.compose(se3_exp(xi))

    def to_sim3(self) -> "Sim3":
        # promotion keeps scale exactly 1
        return Sim3(self.q, self.t, 1.0)

    def interpolate(self, other: "SE3", alpha: float) -> "SE3":
        """Geodesic blend used by trajectory generation (slerp + lerp)."""
        qa, qb = self.q, other.q
        if np.dot(qa, qb) < 0:
            qb = -qb
        dot = np.clip(np.dot(qa, qb), -1.0, 1.0)
        ang = np.arccos(dot)
        if ang < 1e-9:
            q = quat_normalize((1 - alpha) * qa + alpha * qb)
        else:
            q = (np.sin((1 - alpha) * ang) * qa + np.sin(alpha * ang) * qb) / np.sin(ang)
        return SE3(q, (1 - alpha) * self.t + alpha * other.t)


@dataclass(frozen=True)
class Sim3:
    """Similarity transform, camera-to-world: X -> s R X + t. Immutable."""

    q: np.ndarray
    t: np.ndarray
    s: float

    def __init__(self, q, t, s):
        if s <= 0:
            raise ValueError(f"Sim3 scale must be positive, got {s}")
        object.__setattr__(self, "q", _readonly(quat_normalize(np.asarray(q, dtype=np.float64)), (4,)))
        object.__setattr__(self, "t", _readonly(t, (3,)))
        object.__setattr__(self, "s", float(s))

    @staticmethod
    def identity():
        return Sim3(np.array([1.0, 0, 0, 0]), np.zeros(3), 1.0)

    def rotation_matrix(self):
        return quat_to_matrix(self.q)

    def compose(self, other: "Sim3") -> "Sim3":
        other = as_sim3(other)
        return Sim3(
            quat_mul(self.q, other.q),
            self.s * (self.rotation_matrix() @ other.t) + self.t,
            self.s * other.s,
        )

    def __matmul__(self, other):
        return self.compose(other)

    def inverse(self) -> "Sim3":
        qc = quat_conj(self.q)
        Rinv = quat_to_matrix(qc)
        return Sim3(qc, -(Rinv @ self.t) / self.s, 1.0 / self.s)

    def transform(self, p):
        p = np.asarray(p, dtype=np.float64)
        return self.s * (p @ self.rotation_matrix().T) + self.t

    def retract(self, xi) -> "Sim3":
        return self.compose(sim3_exp(xi))

    def se3_part(self) -> SE3:
        """Rotation and translation with the scale dropped (caller folds the
        scale into depths)."""
        return SE3(self.q, self.t)


def as_sim3(T) -> Sim3:
    return T if isinstance(T, Sim3) else T.to_sim3()


# ---------------------------------------------------------------------------
# exponential / logarithm maps
# ---------------------------------------------------------------------------

def se3_exp(xi) -> SE3:
    """xi = (v, omega) 6-vector to SE3."""
    xi = np.asarray(xi, dtype=np.float64)
    v, omega = xi[:3], xi[3:6]
    A, B = _so3_left_jacobian_terms(omega)
    W = hat(omega)
    V = np.eye(3) + A * W + B * (W @ W)
    return SE3(so3_exp_quat(omega), V @ v)


def se3_log(T: SE3):
    omega = so3_log(T.q)
    A, B = _so3_left_jacobian_terms(omega)
    W = hat(omega)
    V = np.eye(3) + A * W + B * (W @ W)
    return np.concatenate([np.linalg.solve(V, T.t), omega])


def sim3_exp(xi) -> Sim3:
    """xi = (v, omega, sigma) 7-vector to Sim3; translation scaled by the
    closed-form W matrix."""
    xi = np.asarray(xi, dtype=np.float64)
    v, omega, sigma = xi[:3], xi[3:6], xi[6]
    W = _sim3_w_matrix(omega, sigma)
    return Sim3(so3_exp_quat(omega), W @ v, np.exp(sigma))


def sim3_log(T: Sim3):
    omega = so3_log(T.q)
    sigma = np.log(T.s)
    W = _sim3_w_matrix(omega, sigma)
    return np.concatenate([np.linalg.solve(W, T.t), omega, [sigma]])


def pose_log(T):
    """log for either group; SE3 gives 6 numbers, Sim3 gives 7."""
    return sim3_log(T) if isinstance(T, Sim3) else se3_log(T)


def rotation_geodesic(Ta, Tb) -> float:
    """Angle in radians between the rotations of two poses."""
    dq = quat_mul(quat_conj(Ta.q), Tb.q)
    return float(np.linalg.norm(so3_log(dq)))


# ---------------------------------------------------------------------------
# camera model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Intrinsics:
    """Pinhole camera; pixel coordinates are continuous, column-major (u, v)."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def scaled(self, factor: float) -> "Intrinsics":
        """Intrinsics of the same camera at a resized grid (e.g. depth grid)."""
        return Intrinsics(
            self.fx * factor, self.fy * factor,
            (self.cx + 0.5) * factor - 0.5, (self.cy + 0.5) * factor - 0.5,
            int(round(self.width * factor)), int(round(self.height * factor)),
        )

    def matrix(self):
        return np.array([[self.fx, 0, self.cx], [0, self.fy, self.cy], [0, 0, 1.0]])


def project(p, K: Intrinsics):
    """Camera-frame points (..., 3) to pixels (..., 2).

    Raises NonPositiveDepth if any point has z <= 1e-8.
    """
    p = np.asarray(p, dtype=np.float64)
    z = p[..., 2]
    if np.any(z <= _MIN_Z):
        raise NonPositiveDepth(f"min z = {z.min() if z.size else 'n/a'}")
    return np.stack([K.fx * p[..., 0] / z + K.cx, K.fy * p[..., 1] / z + K.cy], axis=-1)


def backproject(px, inv_depth, K: Intrinsics):
    """Pixels (..., 2) with inverse depths (...,) to camera-frame points.

    Raises NonPositiveInverseDepth if any inverse depth is <= 0.
    """
    px = np.asarray(px, dtype=np.float64)
    inv_depth = np.asarray(inv_depth, dtype=np.float64)
    if np.any(inv_depth <= 0):
        raise NonPositiveInverseDepth(f"min inverse depth = {inv_depth.min()}")
    d = inv_depth[..., None]
    return np.stack([
        (px[..., 0] - K.cx) / K.fx,
        (px[..., 1] - K.cy) / K.fy,
        np.ones_like(px[..., 0]),
    ], axis=-1) / d


def pixel_rays(px, K: Intrinsics):
    """Unnormalized camera-frame ray directions ((u-cx)/fx, (v-cy)/fy, 1)."""
    px = np.asarray(px, dtype=np.float64)
    return np.stack([
        (px[..., 0] - K.cx) / K.fx,
        (px[..., 1] - K.cy) / K.fy,
        np.ones_like(px[..., 0]),
    ], axis=-1)


def _projection_jacobian(X, K: Intrinsics):
    """d(project)/dX at camera points X (N, 3) -> (N, 2, 3)."""
    x, y, z = X[:, 0], X[:, 1], X[:, 2]
    iz = 1.0 / z
    iz2 = iz * iz
    J = np.zeros((X.shape[0], 2, 3))
    J[:, 0, 0] = K.fx * iz
    J[:, 0, 2] = -K.fx * x * iz2
    J[:, 1, 1] = K.fy * iz
    J[:, 1, 2] = -K.fy * y * iz2
    return J


def _point_action_jacobian(X, dof):
    """d(exp(xi) X)/dxi at xi=0, twist layout (v, omega[, sigma]).

    X (N, 3) -> (N, 3, dof). Columns: identity block, -hat(X), and for
    Sim(3) the scale direction X itself.
    """
    n = X.shape[0]
    J = np.zeros((n, 3, dof))
    J[:, 0, 0] = J[:, 1, 1] = J[:, 2, 2] = 1.0
    J[:, :, 3:6] = -hat(X)
    if dof == 7:
        J[:, :, 6] = X
    return J


def reproject_with_jacobians(T_i, T_j, px, inv_depth, K: Intrinsics, rel_only=False):
    """Warp pixels of frame i into frame j and return prediction Jacobians.

    The warp is pred = project(T_rel @ backproject(px, inv_depth)) with
    T_rel = inverse(T_j) @ T_i. Works for SE3 and Sim3 poses (dof 6 / 7).
    With rel_only=True, T_i is interpreted directly as T_rel (T_j ignored)
    and only the Jacobian w.r.t. a right perturbation of T_rel is returned.

    Args:
        px: (N, 2) pixel coordinates in frame i.
        inv_depth: (N,) positive inverse depths of frame i.

    Returns:
        pred (N, 2), valid (N,) bool (target-side z > 1e-8), and Jacobians
        of the prediction w.r.t. right-multiplied twists: J_i (N, 2, dof),
        J_j (N, 2, dof) (None when rel_only), J_d (N, 2) w.r.t. inverse
        depth. Invalid points carry zeroed Jacobians; callers must zero
        their residual weights.
    """
    px = np.asarray(px, dtype=np.float64)
    d = np.asarray(inv_depth, dtype=np.float64)
    if rel_only:
        T_rel = T_i
    else:
        T_rel = T_j.inverse() @ T_i
    dof = 7 if isinstance(T_rel, Sim3) else 6
    scale = T_rel.s if isinstance(T_rel, Sim3) else 1.0
    R_rel = T_rel.rotation_matrix()

    X_i = pixel_rays(px, K) / d[:, None]
    X_j = T_rel.transform(X_i)
    valid = X_j[:, 2] > _MIN_Z
    X_safe = X_j.copy()
    X_safe[~valid, 2] = 1.0  # placeholder; weights are zeroed by callers

    Jpi = _projection_jacobian(X_safe, K)
    pred = np.stack([
        K.fx * X_safe[:, 0] / X_safe[:, 2] + K.cx,
        K.fy * X_safe[:, 1] / X_safe[:, 2] + K.cy,
    ], axis=-1)

    sR = scale * R_rel
    # d X_j / d xi_i = s R * d(exp(xi) X_i)/dxi
    A_i = _point_action_jacobian(X_i, dof)
    dXj_dxi_i = np.einsum("ab,nbk->nak", sR, A_i)
    J_i = np.einsum("nab,nbk->nak", Jpi, dXj_dxi_i)

    # d X_j / d d = s R (-X_i / d)
    dXj_dd = (X_i * (-1.0 / d)[:, None]) @ sR.T
    J_d = np.einsum("nab,nb->na", Jpi, dXj_dd)

    if rel_only:
        J_j = None
    else:
        # d X_j / d xi_j = -d(exp(xi) X_j)/dxi
        dXj_dxi_j = -_point_action_jacobian(X_j, dof)
        J_j = np.einsum("nab,nbk->nak", Jpi, dXj_dxi_j)
        J_j[~valid] = 0.0

    J_i[~valid] = 0.0
    J_d[~valid] = 0.0
    return pred, valid, J_i, J_j, J_d

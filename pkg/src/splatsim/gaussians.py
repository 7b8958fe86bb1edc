"""Gaussian-splat math: covariance, EWA projection and real spherical harmonics.

Conventions
-----------
* Quaternions are stored scalar-first, ``(w, x, y, z)``.
* SH coefficients have shape ``(..., (L+1)**2, 3)``: coefficient index first,
  colour channel last. The basis follows the usual splatting sign conventions
  so files produced by stock 3DGS trainers evaluate identically.
* Cameras use the OpenCV frame: +x right, +y down, +z forward.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import ValidationError

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)
MAX_SH_DEGREE = 3
COV2D_FLOOR = 0.3
NEAR_PLANE = 0.01


def sh_coeff_count(degree):
    return (degree + 1) ** 2


def sh_degree_from_count(count):
    degree = int(round(np.sqrt(count))) - 1
    if degree < 0 or degree > MAX_SH_DEGREE or sh_coeff_count(degree) != count:
        raise ValidationError(f"unsupported SH coefficient count {count}", field="sh")
    return degree


# --------------------------------------------------------------------------
# quaternions


def normalize_quaternions(q):
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norm == 0):
        raise ValidationError("zero-length quaternion", field="rotation")
    # rows that are already unit are left untouched so renormalising is a no-op
    return np.where(np.abs(norm - 1.0) > 1e-12, q / norm, q)


def quat_to_matrix(q):
    """Rotation matrices for unit quaternions ``(..., 4)`` -> ``(..., 3, 3)``."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def matrix_to_quat(R):
    """Unit quaternions (w >= 0) for rotation matrices ``(..., 3, 3)``."""
    R = np.asarray(R, dtype=np.float64)
    shape = R.shape[:-2]
    xyzw = Rotation.from_matrix(R.reshape(-1, 3, 3)).as_quat()
    q = np.concatenate([xyzw[:, 3:], xyzw[:, :3]], axis=1)
    q[q[:, 0] < 0] *= -1
    return q.reshape(shape + (4,))


def quat_multiply(a, b):
    """Hamilton product ``a * b`` (apply ``b`` first, then ``a``)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def _as_rotation_matrices(rotation):
    rotation = np.asarray(rotation, dtype=np.float64)
    if rotation.shape[-1] == 4:
        return quat_to_matrix(normalize_quaternions(rotation))
    if rotation.shape[-2:] == (3, 3):
        return rotation
    raise ValidationError(f"rotation must be quaternion(s) or 3x3 matrices, got shape {rotation.shape}")


# --------------------------------------------------------------------------
# splats


@dataclass
class GaussianSplat:
    center: np.ndarray
    rotation: np.ndarray
    scale: np.ndarray
    opacity: float
    sh: np.ndarray
    object_id: int = 0

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        self.scale = np.asarray(self.scale, dtype=np.float64).reshape(3)
        self.sh = np.asarray(self.sh, dtype=np.float64).reshape(-1, 3)
        if abs(np.linalg.norm(self.rotation) - 1.0) > 1e-6:
            raise ValidationError("splat rotation must be a unit quaternion", field="rotation")
        if np.any(self.scale <= 0):
            raise ValidationError("splat scales must be positive", field="scale")
        if not 0.0 < self.opacity < 1.0 and self.opacity != 1.0:
            raise ValidationError("splat opacity must lie in (0, 1]", field="opacity")
        sh_degree_from_count(self.sh.shape[0])


def covariance(splat):
    """Return the 3x3 covariance ``R S S^T R^T`` of one splat."""
    return covariances(splat.rotation, splat.scale)


def covariances(rotations, scales):
    """Batched covariance for quaternions ``(..., 4)`` and scales ``(..., 3)``."""
    R = quat_to_matrix(normalize_quaternions(rotations))
    M = R * np.asarray(scales, dtype=np.float64)[..., None, :]
    cov = M @ np.swapaxes(M, -1, -2)
    return 0.5 * (cov + np.swapaxes(cov, -1, -2))


def decompose_covariance(cov):
    """Split SPD covariances into (quaternions, scales) with ``cov = R S S R^T``."""
    cov = np.asarray(cov, dtype=np.float64)
    evals, evecs = np.linalg.eigh(cov)
    evals = np.maximum(evals, 1e-30)
    det = np.linalg.det(evecs)
    evecs[..., :, 2] *= np.sign(det)[..., None]
    return matrix_to_quat(evecs), np.sqrt(evals)


@dataclass
class GaussianScene:
    """Structure-of-arrays container for a set of splats.

    ``bounds`` is the axis-aligned box ``(lo, hi)`` of the centres.
    """

    centers: np.ndarray
    rotations: np.ndarray
    scales: np.ndarray
    opacities: np.ndarray
    sh: np.ndarray
    object_ids: np.ndarray = None

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=np.float64).reshape(-1, 3)
        n = len(self.centers)
        self.rotations = normalize_quaternions(np.asarray(self.rotations, dtype=np.float64).reshape(n, 4)) if n else np.zeros((0, 4))
        self.scales = np.asarray(self.scales, dtype=np.float64).reshape(n, 3)
        self.opacities = np.asarray(self.opacities, dtype=np.float64).reshape(n)
        sh = np.asarray(self.sh, dtype=np.float64)
        if n:
            self.sh = sh.reshape(n, -1, 3)
        else:
            self.sh = sh.reshape(0, sh.shape[-2] if sh.ndim == 3 else 1, 3)
        if self.object_ids is None:
            self.object_ids = np.zeros(n, dtype=np.int64)
        self.object_ids = np.asarray(self.object_ids, dtype=np.int64).reshape(-1)
        if len(self.object_ids) != n:
            raise ValidationError("object_ids length must equal splat count", field="object_ids")
        sh_degree_from_count(self.sh.shape[1])
        if n and np.any(self.scales <= 0):
            raise ValidationError("splat scales must be positive", field="scale")

    def __len__(self):
        return len(self.centers)

    def __getitem__(self, i):
        return GaussianSplat(
            self.centers[i], self.rotations[i], self.scales[i], float(self.opacities[i]), self.sh[i], int(self.object_ids[i])
        )

    @classmethod
    def from_splats(cls, splats):
        splats = list(splats)
        return cls(
            centers=np.array([s.center for s in splats]),
            rotations=np.array([s.rotation for s in splats]),
            scales=np.array([s.scale for s in splats]),
            opacities=np.array([s.opacity for s in splats]),
            sh=np.array([s.sh for s in splats]),
            object_ids=np.array([s.object_id for s in splats]),
        )

    @property
    def sh_degree(self):
        return sh_degree_from_count(self.sh.shape[1])

    @property
    def bounds(self):
        return self.centers.min(axis=0), self.centers.max(axis=0)

    @property
    def splats(self):
        return [self[i] for i in range(len(self))]

    def covariances(self):
        return covariances(self.rotations, self.scales)

    def object_id_list(self):
        return sorted(int(i) for i in np.unique(self.object_ids))

    def subset(self, mask):
        """Scene restricted to a boolean mask or index array (order kept).

        A slice gives views into this scene's arrays; use :meth:`copy` for
        an independent scene.
        """
        return GaussianScene(
            self.centers[mask], self.rotations[mask], self.scales[mask], self.opacities[mask], self.sh[mask], self.object_ids[mask]
        )

    def copy(self):
        return GaussianScene(
            self.centers.copy(), self.rotations.copy(), self.scales.copy(), self.opacities.copy(), self.sh.copy(),
            self.object_ids.copy(),
        )


# --------------------------------------------------------------------------
# cameras


@dataclass
class CameraSpec:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    world_to_camera: np.ndarray = field(default_factory=lambda: np.eye(4))

    def __post_init__(self):
        self.world_to_camera = np.asarray(self.world_to_camera, dtype=np.float64)
        if self.world_to_camera.shape == (3, 4):
            self.world_to_camera = np.vstack([self.world_to_camera, [0, 0, 0, 1]])
        if self.world_to_camera.shape != (4, 4):
            raise ValidationError("world_to_camera must be a 4x4 matrix", field="world_to_camera")
        if self.fx <= 0 or self.fy <= 0:
            raise ValidationError("focal lengths must be positive", field="fx")
        if self.width <= 0 or self.height <= 0:
            raise ValidationError("image size must be positive", field="width")
        R = self.rotation
        if np.abs(R @ R.T - np.eye(3)).max() > 1e-6:
            raise ValidationError("camera rotation is not orthonormal", field="world_to_camera")

    @property
    def rotation(self):
        return self.world_to_camera[:3, :3]

    @property
    def translation(self):
        return self.world_to_camera[:3, 3]

    @property
    def position(self):
        return -self.rotation.T @ self.translation

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 0.0, 1.0), width=320, height=240, fov_y_deg=45.0):
        eye = np.asarray(eye, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - eye
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, np.asarray(up, dtype=np.float64))
        if np.linalg.norm(right) < 1e-9:
            right = np.cross(forward, [0.0, 1.0, 0.0] if abs(forward[1]) < 0.9 else [1.0, 0.0, 0.0])
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        R = np.stack([right, down, forward])
        w2c = np.eye(4)
        w2c[:3, :3] = R
        w2c[:3, 3] = -R @ eye
        f = 0.5 * height / np.tan(np.radians(fov_y_deg) / 2)
        return cls(f, f, width / 2.0, height / 2.0, width, height, w2c)

    def to_camera(self, points):
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation


def projection_jacobian(t, fx, fy):
    """Jacobian of the perspective map at camera-space points ``t`` ``(..., 3)``."""
    t = np.asarray(t, dtype=np.float64)
    tx, ty, tz = t[..., 0], t[..., 1], t[..., 2]
    J = np.zeros(t.shape[:-1] + (2, 3))
    J[..., 0, 0] = fx / tz
    J[..., 0, 2] = -fx * tx / tz**2
    J[..., 1, 1] = fy / tz
    J[..., 1, 2] = -fy * ty / tz**2
    return J


def project_covariance(cov, camera, mean):
    """Screen-space covariance ``J W cov W^T J^T + floor`` at ``mean``.

    Returns ``None`` when the centre is not in front of the near plane (cull).
    """
    t = camera.to_camera(mean)
    if t[2] <= NEAR_PLANE:
        return None
    J = projection_jacobian(t, camera.fx, camera.fy)
    T = J @ camera.rotation
    cov2d = T @ np.asarray(cov, dtype=np.float64) @ T.T
    cov2d = 0.5 * (cov2d + cov2d.T)
    return cov2d + COV2D_FLOOR * np.eye(2)


def project_covariances(covs, camera, means):
    """Batched :func:`project_covariance`; returns ``(cov2d, depth, pixel, visible)``."""
    t = camera.to_camera(means)
    visible = t[:, 2] > NEAR_PLANE
    tz = np.where(visible, t[:, 2], 1.0)
    tt = t.copy()
    tt[:, 2] = tz
    J = projection_jacobian(tt, camera.fx, camera.fy)
    T = J @ camera.rotation
    cov2d = T @ covs @ np.swapaxes(T, -1, -2)
    cov2d = 0.5 * (cov2d + np.swapaxes(cov2d, -1, -2))
    cov2d[:, 0, 0] += COV2D_FLOOR
    cov2d[:, 1, 1] += COV2D_FLOOR
    pixel = np.stack([camera.fx * tt[:, 0] / tz + camera.cx, camera.fy * tt[:, 1] / tz + camera.cy], axis=1)
    return cov2d, t[:, 2], pixel, visible


# --------------------------------------------------------------------------
# spherical harmonics


def _band_terms(x, y, z, band):
    if band == 0:
        return [np.full(x.shape, SH_C0)]
    if band == 1:
        return [-SH_C1 * y, SH_C1 * z, -SH_C1 * x]
    xx, yy, zz = x * x, y * y, z * z
    if band == 2:
        return [
            SH_C2[0] * x * y,
            SH_C2[1] * y * z,
            SH_C2[2] * (2.0 * zz - xx - yy),
            SH_C2[3] * x * z,
            SH_C2[4] * (xx - yy),
        ]
    return [
        SH_C3[0] * y * (3.0 * xx - yy),
        SH_C3[1] * x * y * z,
        SH_C3[2] * y * (4.0 * zz - xx - yy),
        SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
        SH_C3[4] * x * (4.0 * zz - xx - yy),
        SH_C3[5] * z * (xx - yy),
        SH_C3[6] * x * (xx - 3.0 * yy),
    ]


def sh_basis(dirs, degree, band=None):
    """Real SH basis values ``(..., (degree+1)**2)`` at unit directions ``(..., 3)``.

    With ``band`` set, only that band's ``2 band + 1`` values are returned.
    """
    dirs = np.asarray(dirs, dtype=np.float64)
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    bands = range(degree + 1) if band is None else [band]
    out = [t for b in bands for t in _band_terms(x, y, z, b)]
    return np.stack(out, axis=-1)


def eval_sh(sh, view_direction):
    """RGB colour of SH coefficients ``(..., K, 3)`` seen along ``view_direction``.

    The +0.5 offset is applied and the result clamped at zero.
    """
    sh = np.asarray(sh, dtype=np.float64)
    degree = sh_degree_from_count(sh.shape[-2])
    basis = sh_basis(view_direction, degree)
    rgb = np.einsum("...k,...kc->...c", basis, sh) + 0.5
    return np.maximum(rgb, 0.0)


def _fibonacci_sphere(n):
    i = np.arange(n) + 0.5
    phi = np.arccos(1.0 - 2.0 * i / n)
    theta = np.pi * (1.0 + 5.0**0.5) * i
    return np.stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)], axis=1)


@lru_cache(maxsize=None)
def _band_fit(degree):
    """Sample directions and the pseudo-inverse of one SH band evaluated on them."""
    dirs = _fibonacci_sphere(16)
    return dirs, np.linalg.pinv(sh_basis(dirs, degree, band=degree))


def sh_band_rotation(R, degree):
    """Wigner-style block(s) ``(..., 2l+1, 2l+1)`` for SH band ``degree``.

    Built numerically: the rotated band must reproduce ``f(R^T d)`` at a fixed
    set of sample directions, solved in the least-squares sense (exact, as
    each band is closed under rotation).
    """
    dirs, pinv = _band_fit(degree)
    rotated = np.einsum("...ji,mj->...mi", R, dirs)
    return pinv @ sh_basis(rotated, degree, band=degree)


def rotate_sh(sh, rotation, mode="exact"):
    """Rotate SH coefficients so that ``eval_sh(out, R d) == eval_sh(sh, d)``.

    Parameters
    ----------
    sh : array ``(..., K, 3)``
    rotation : unit quaternion(s) ``(..., 4)`` or rotation matrices ``(..., 3, 3)``
    mode : ``"exact"`` rotates every band; ``"truncate"`` zeroes bands >= 2.
    """
    if mode not in ("exact", "truncate"):
        raise ValidationError(f"unknown sh rotation mode {mode!r}", field="sh_rotation")
    sh = np.array(sh, dtype=np.float64, copy=True)
    degree = sh_degree_from_count(sh.shape[-2])
    if degree == 0:
        return sh
    R = _as_rotation_matrices(rotation)
    # degree 1 is a vector: f(d) = v . d with v = (-c3, -c1, c2) up to C1
    v = np.stack([-sh[..., 3, :], -sh[..., 1, :], sh[..., 2, :]], axis=-2)
    v = R @ v
    sh[..., 1, :] = -v[..., 1, :]
    sh[..., 2, :] = v[..., 2, :]
    sh[..., 3, :] = -v[..., 0, :]
    for band in range(2, degree + 1):
        lo, hi = band * band, (band + 1) ** 2
        if mode == "truncate":
            sh[..., lo:hi, :] = 0.0
        else:
            sh[..., lo:hi, :] = sh_band_rotation(R, band) @ sh[..., lo:hi, :]
    return sh

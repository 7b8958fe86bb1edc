"""Carry driving-particle motion over to every Gaussian.

Each Gaussian is tied to its ``K_b`` nearest driving particles of the same
object (Gaussian-kernel weights). Per frame, a weighted rigid fit of those
neighbours' rest and current positions moves the Gaussian's centre, rotates
its covariance and rotates its SH coefficients.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import BindingError, ValidationError
from .gaussians import GaussianScene, decompose_covariance, matrix_to_quat, quat_multiply, rotate_sh

# singular-value ratio below which neighbours count as collinear
RANK_TOL = 1e-10


@dataclass
class DrivingBinding:
    """Per-Gaussian neighbour lists into the driving set.

    ``neighbors`` is ``(G, K)``; rows with fewer real neighbours are padded
    with index 0 and weight 0. Gaussians of ``static`` objects have no
    neighbours and never move.
    """

    neighbors: np.ndarray
    weights: np.ndarray
    rest_positions: np.ndarray
    static: np.ndarray
    bandwidth: dict

    def __len__(self):
        return len(self.neighbors)


@dataclass
class RigidFit:
    """Batched rigid transforms ``x -> R x + t`` (one per Gaussian)."""

    rotation: np.ndarray
    translation: np.ndarray
    identity: np.ndarray

    @classmethod
    def identity_fits(cls, n):
        return cls(np.tile(np.eye(3), (n, 1, 1)), np.zeros((n, 3)), np.ones(n, dtype=bool))


def kernel_weights(dist, bandwidth):
    """``exp(-d^2 / 2h^2)`` normalised per row; stable when every distance is large."""
    d2 = np.asarray(dist, dtype=np.float64) ** 2
    d2 = d2 - d2.min(axis=-1, keepdims=True)
    w = np.exp(-d2 / (2.0 * bandwidth**2))
    return w / w.sum(axis=-1, keepdims=True)


def build_binding(centers, driving_rest, k=8, bandwidth=None, gaussian_objects=None, driving_objects=None,
                  static_objects=()):  # fmt: skip
    """Bind Gaussians to nearby driving particles without crossing object ids.

    Parameters
    ----------
    centers : (G, 3) Gaussian centres
    driving_rest : (P, 3) driving-particle rest positions
    k : neighbours per Gaussian (every particle of the object when it has
        fewer); at least 3 non-collinear ones are needed to pick up rotation
    bandwidth : kernel width ``h``; a float, a dict keyed by object id, or
        None for the median nearest-neighbour spacing of the object's particles
    gaussian_objects, driving_objects : object ids (default all 0)
    static_objects : ids whose Gaussians stay put (no particles needed)
    """
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    rest = np.asarray(driving_rest, dtype=np.float64).reshape(-1, 3)
    G = len(centers)
    if k < 1:
        raise ValidationError("binding needs k >= 1", field="binding_neighbors")
    g_obj = np.zeros(G, np.int64) if gaussian_objects is None else np.asarray(gaussian_objects, np.int64)
    d_obj = np.zeros(len(rest), np.int64) if driving_objects is None else np.asarray(driving_objects, np.int64)
    static_set = {int(o) for o in static_objects}
    nbr = np.zeros((G, k), np.int64)
    wts = np.zeros((G, k))
    static = np.zeros(G, dtype=bool)
    widths = {}
    for oid in np.unique(g_obj):
        oid = int(oid)
        gsel = np.flatnonzero(g_obj == oid)
        if oid in static_set:
            static[gsel] = True
            continue
        dsel = np.flatnonzero(d_obj == oid)
        if len(dsel) == 0:
            raise BindingError(f"object {oid} has Gaussians but no driving particles")
        pts = rest[dsel]
        kk = min(k, len(dsel))
        tree = cKDTree(pts)
        if isinstance(bandwidth, dict):
            h = bandwidth.get(oid)
        else:
            h = bandwidth
        if h is None:
            if len(pts) > 1:
                d, _ = tree.query(pts, k=2)
                h = float(np.median(d[:, 1]))
            h = h if h and h > 0 else 1.0
        if not h > 0:
            raise ValidationError("binding bandwidth must be > 0", field="binding_bandwidth")
        widths[oid] = float(h)
        dist, idx = tree.query(centers[gsel], k=kk)
        dist = dist.reshape(len(gsel), kk)
        idx = idx.reshape(len(gsel), kk)
        # order each row by distance, then by position, so the binding does
        # not depend on how the driving set is stored
        cand = pts[idx]
        order = np.lexsort((cand[..., 2], cand[..., 1], cand[..., 0], dist), axis=-1)
        dist = np.take_along_axis(dist, order, axis=1)
        idx = np.take_along_axis(idx, order, axis=1)
        nbr[gsel, :kk] = dsel[idx]
        wts[gsel, :kk] = kernel_weights(dist, h)
    return DrivingBinding(neighbors=nbr, weights=wts, rest_positions=rest, static=static, bandwidth=widths)


def kabsch(p, q, w):
    """Weighted rigid fit mapping points ``p`` onto ``q``.

    Arrays are ``(..., K, 3)`` with weights ``(..., K)`` summing to 1.
    Returns ``(R, t, ok)``; ``ok`` is False where the neighbours are
    collinear or coincident, in which case ``R = I`` and only the
    translation is fitted.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    pbar = np.einsum("...k,...ki->...i", w, p)
    qbar = np.einsum("...k,...ki->...i", w, q)
    H = np.einsum("...k,...ki,...kj->...ij", w, p - pbar[..., None, :], q - qbar[..., None, :])
    U, S, Vt = np.linalg.svd(H)
    V = np.swapaxes(Vt, -1, -2)
    d = np.sign(np.linalg.det(V @ np.swapaxes(U, -1, -2)))
    d = np.where(d == 0, 1.0, d)
    V[..., :, 2] *= d[..., None]
    R = V @ np.swapaxes(U, -1, -2)
    ok = S[..., 1] > RANK_TOL * np.maximum(S[..., 0], np.finfo(float).tiny)
    R = np.where(ok[..., None, None], R, np.eye(3))
    t = qbar - np.einsum("...ij,...j->...i", R, pbar)
    return R, t, ok


def fit_rigid(binding, current):
    """Rigid fit for every Gaussian from current driving-particle positions.

    Gaussians whose neighbours have not moved at all get the exact identity.
    """
    current = np.asarray(current, dtype=np.float64).reshape(-1, 3)
    if current.shape != binding.rest_positions.shape:
        raise ValidationError("current positions must match the driving set", field="positions")
    G = len(binding)
    fits = RigidFit.identity_fits(G)
    live = ~binding.static
    if not live.any():
        return fits
    nbr = binding.neighbors[live]
    w = binding.weights[live]
    p = binding.rest_positions[nbr]
    q = current[nbr]
    moved = ((p != q).any(axis=2) & (w > 0)).any(axis=1)
    if not moved.any():
        return fits
    R, t, _ = kabsch(p[moved], q[moved], w[moved])
    rows = np.flatnonzero(live)[moved]
    fits.rotation[rows] = R
    fits.translation[rows] = t
    fits.identity[rows] = False
    return fits


def apply_binding(scene, binding, fits, mode="rigid", deformation=None, sh_mode="exact"):
    """Deformed copy of ``scene``.

    ``rigid`` mode: ``mu' = R mu + t``, orientation composed with ``R``
    (scales kept), SH rotated by ``R``. ``stretch`` mode additionally
    replaces the covariance by ``F S F^T`` with ``F`` the weighted average of
    the neighbours' deformation gradients (``deformation``, ``(P, 3, 3)``),
    rotating SH by the rotation part of ``F``.
    """
    if len(scene) != len(binding):
        raise ValidationError("binding does not match the scene", field="scene")
    out = scene.copy()
    moving = ~fits.identity
    if not moving.any():
        return out
    R = fits.rotation[moving]
    t = fits.translation[moving]
    out.centers[moving] = np.einsum("nij,nj->ni", R, scene.centers[moving]) + t
    if mode == "rigid":
        out.rotations[moving] = quat_multiply(matrix_to_quat(R), scene.rotations[moving])
        out.sh[moving] = rotate_sh(scene.sh[moving], R, sh_mode)
    elif mode == "stretch":
        if deformation is None:
            raise ValidationError("stretch binding needs particle deformation gradients", field="deformation")
        Fp = np.asarray(deformation, dtype=np.float64)
        F = np.einsum("nk,nkij->nij", binding.weights[moving], Fp[binding.neighbors[moving]])
        cov = F @ scene.covariances()[moving] @ np.swapaxes(F, -1, -2)
        quats, scales = decompose_covariance(0.5 * (cov + np.swapaxes(cov, -1, -2)))
        out.rotations[moving] = quats
        out.scales[moving] = scales
        U, _, Vt = np.linalg.svd(F)
        d = np.sign(np.linalg.det(U @ Vt))
        U[..., :, 2] *= d[..., None]
        out.sh[moving] = rotate_sh(scene.sh[moving], U @ Vt, sh_mode)
    else:
        raise ValidationError(f"unknown binding mode {mode!r}", field="binding_mode")
    return GaussianScene(out.centers, out.rotations, out.scales, out.opacities, out.sh, out.object_ids)

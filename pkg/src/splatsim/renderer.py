"""CPU splat rasterizer: EWA projection, global depth sort, front-to-back compositing.

Pixel ``(u, v)`` (column, row) has its centre at continuous image coordinate
``(u, v)``, so a splat whose projected centre lands on integer coordinates
is evaluated at ``delta = 0`` there.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numba
import numpy as np

from .errors import ValidationError
from .gaussians import NEAR_PLANE, CameraSpec, eval_sh, project_covariances

TILE = 16
T_MIN = 1e-4
SIGMA_CUTOFF = 3.0


@dataclass
class Image:
    """Float RGB image; ``alpha`` is set for renders over a transparent background."""

    pixels: np.ndarray
    alpha: Optional[np.ndarray] = None

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def height(self):
        return self.pixels.shape[0]

    def __len__(self):
        return self.width * self.height

    def over(self, background):
        """Fill the remaining transmittance with an RGB ``background``."""
        if self.alpha is None:
            return self
        bg = np.asarray(background, dtype=np.float64)
        return Image(self.pixels + (1.0 - self.alpha)[..., None] * bg)


def composite(front, back):
    """Depth composite of two transparent renders, ``front`` entirely nearer."""
    t = 1.0 - front.alpha
    return Image(front.pixels + t[..., None] * back.pixels, 1.0 - t * (1.0 - back.alpha))


def _sort_order(scene, depth):
    # depth first; the remaining keys only break exact ties so the order
    # never depends on how splats are stored
    keys = [scene.sh.reshape(len(scene), -1)[:, ::-1].T, scene.rotations[:, ::-1].T, scene.scales[:, ::-1].T]
    keys += [scene.opacities[None], scene.centers[:, ::-1].T, depth[None]]
    return np.lexsort(np.concatenate(keys, axis=0))


@numba.njit(cache=True)
def _bin_tiles(px, py, ext_x, ext_y, width, height, tiles_x, tiles_y):
    """CSR lists of splats per tile, each in the incoming (depth) order."""
    n = px.shape[0]
    n_tiles = tiles_x * tiles_y
    lo = np.empty((n, 2), np.int64)
    hi = np.empty((n, 2), np.int64)
    counts = np.zeros(n_tiles + 1, np.int64)
    for s in range(n):
        x0 = max(0, int(np.ceil(px[s] - ext_x[s])))
        x1 = min(width - 1, int(np.floor(px[s] + ext_x[s])))
        y0 = max(0, int(np.ceil(py[s] - ext_y[s])))
        y1 = min(height - 1, int(np.floor(py[s] + ext_y[s])))
        if x0 > x1 or y0 > y1:
            lo[s, 0] = 1
            hi[s, 0] = 0
            continue
        lo[s, 0] = x0 // TILE
        hi[s, 0] = x1 // TILE
        lo[s, 1] = y0 // TILE
        hi[s, 1] = y1 // TILE
        for ty in range(lo[s, 1], hi[s, 1] + 1):
            for tx in range(lo[s, 0], hi[s, 0] + 1):
                counts[ty * tiles_x + tx + 1] += 1
    indptr = np.cumsum(counts)
    fill = indptr[:-1].copy()
    items = np.empty(indptr[-1], np.int64)
    for s in range(n):
        if lo[s, 0] > hi[s, 0]:
            continue
        for ty in range(lo[s, 1], hi[s, 1] + 1):
            for tx in range(lo[s, 0], hi[s, 0] + 1):
                t = ty * tiles_x + tx
                items[fill[t]] = s
                fill[t] += 1
    return indptr, items


@numba.njit(cache=True, parallel=True)
def _raster(px, py, ext_x, ext_y, conic, opacity, color, indptr, items, width, height, tiles_x, out, trans):
    n_tiles = indptr.shape[0] - 1
    for t in numba.prange(n_tiles):
        tx = t % tiles_x
        ty = t // tiles_x
        for v in range(ty * TILE, min(height, (ty + 1) * TILE)):
            for u in range(tx * TILE, min(width, (tx + 1) * TILE)):
                T = 1.0
                r = 0.0
                g = 0.0
                b = 0.0
                for q in range(indptr[t], indptr[t + 1]):
                    s = items[q]
                    dx = u - px[s]
                    dy = v - py[s]
                    if abs(dx) > ext_x[s] or abs(dy) > ext_y[s]:
                        continue
                    power = -0.5 * (conic[s, 0] * dx * dx + 2.0 * conic[s, 1] * dx * dy + conic[s, 2] * dy * dy)
                    a = opacity[s] * np.exp(power)
                    w = a * T
                    r += w * color[s, 0]
                    g += w * color[s, 1]
                    b += w * color[s, 2]
                    T *= 1.0 - a
                    if T < T_MIN:
                        break
                out[v, u, 0] = r
                out[v, u, 1] = g
                out[v, u, 2] = b
                trans[v, u] = T


def render(scene, camera, background=(1.0, 1.0, 1.0)):
    """Render ``scene`` seen by ``camera``.

    Splats are sorted once by camera-space depth of their centre and
    composited front to back, ``C = sum c_i a_i prod_{j<i} (1 - a_j)`` with
    ``a_i = opacity_i * exp(-1/2 d^T S'^-1 d)``, stopping once transmittance
    drops below 1e-4. Each splat only touches pixels inside its 3-sigma
    screen box. ``background=None`` returns premultiplied colour plus an
    ``alpha`` channel instead of filling the remaining transmittance.
    """
    if not isinstance(camera, CameraSpec):
        raise ValidationError("camera must be a CameraSpec", field="camera")
    H, W = int(camera.height), int(camera.width)
    tiles_x = -(-W // TILE)
    tiles_y = -(-H // TILE)
    out = np.zeros((H, W, 3))
    trans = np.ones((H, W))
    if len(scene):
        # every batched quantity is computed after sorting: numpy's batched
        # kernels are not bitwise independent of an element's position
        R, t = camera.rotation, camera.translation
        c = scene.centers
        depth = R[2, 0] * c[:, 0] + R[2, 1] * c[:, 1] + R[2, 2] * c[:, 2] + t[2]
        order = _sort_order(scene, depth)
        order = order[depth[order] > NEAR_PLANE]
        if len(order):
            ordered = scene.subset(order)
            cov2d, _, pixel, _ = project_covariances(ordered.covariances(), camera, ordered.centers)
            det = cov2d[:, 0, 0] * cov2d[:, 1, 1] - cov2d[:, 0, 1] ** 2
            conic = np.stack([cov2d[:, 1, 1] / det, -cov2d[:, 0, 1] / det, cov2d[:, 0, 0] / det], axis=1)
            ext_x = SIGMA_CUTOFF * np.sqrt(cov2d[:, 0, 0])
            ext_y = SIGMA_CUTOFF * np.sqrt(cov2d[:, 1, 1])
            view = ordered.centers - camera.position
            view /= np.linalg.norm(view, axis=1, keepdims=True)
            color = np.clip(eval_sh(ordered.sh, view), 0.0, 1.0)
            px = np.ascontiguousarray(pixel[:, 0])
            py = np.ascontiguousarray(pixel[:, 1])
            indptr, items = _bin_tiles(px, py, ext_x, ext_y, W, H, tiles_x, tiles_y)
            _raster(px, py, ext_x, ext_y, conic, ordered.opacities, color, indptr, items, W, H, tiles_x, out, trans)
    if background is None:
        return Image(out, 1.0 - trans)
    bg = np.asarray(background, dtype=np.float64)
    return Image(np.clip(out + trans[..., None] * bg, 0.0, 1.0))


def render_objects(scene, camera):
    """Per-object transparent renders keyed by object id (for layered output)."""
    return {oid: render(scene.subset(scene.object_ids == oid), camera, None) for oid in scene.object_id_list()}


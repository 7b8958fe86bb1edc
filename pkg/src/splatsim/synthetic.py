"""Small procedural splat scenes for demos, tests and benchmarks."""
from __future__ import annotations

import numpy as np

from .gaussians import SH_C0, GaussianScene, sh_coeff_count


def lattice(lo, hi, n):
    """``n[0] x n[1] x n[2]`` grid of points spanning the box ``[lo, hi]`` (inclusive)."""
    n = np.broadcast_to(np.asarray(n, dtype=np.int64), (3,))
    axes = [np.linspace(lo[i], hi[i], n[i]) if n[i] > 1 else np.array([0.5 * (lo[i] + hi[i])]) for i in range(3)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)


def block_scene(center=(0.0, 0.0, 0.0), size=(0.2, 0.2, 0.2), n=(8, 8, 8), color=(0.8, 0.3, 0.2), object_id=0,
                opacity=0.9, scale=None, sh_degree=0, rng=None):  # fmt: skip
    """Box filled with isotropic splats on a regular lattice.

    ``scale`` defaults to 60% of the lattice spacing. With ``rng`` set, the
    rotations are random and higher SH bands get small random values.
    """
    center = np.asarray(center, dtype=np.float64)
    size = np.broadcast_to(np.asarray(size, dtype=np.float64), (3,))
    n = np.broadcast_to(np.asarray(n, dtype=np.int64), (3,))
    pts = lattice(center - size / 2, center + size / 2, n)
    m = len(pts)
    if scale is None:
        spacing = size / np.maximum(n - 1, 1)
        scale = 0.6 * float(spacing.min())
    rot = np.tile([1.0, 0.0, 0.0, 0.0], (m, 1))
    sh = np.zeros((m, sh_coeff_count(sh_degree), 3))
    sh[:, 0, :] = (np.asarray(color, dtype=np.float64) - 0.5) / SH_C0
    if rng is not None:
        rot = rng.normal(size=(m, 4))
        if sh_degree > 0:
            sh[:, 1:, :] = 0.1 * rng.normal(size=(m, sh.shape[1] - 1, 3))
    return GaussianScene(pts, rot, np.full((m, 3), scale), np.full(m, opacity), sh, np.full(m, object_id))


def concat(scenes):
    scenes = list(scenes)
    return GaussianScene(
        np.concatenate([s.centers for s in scenes]),
        np.concatenate([s.rotations for s in scenes]),
        np.concatenate([s.scales for s in scenes]),
        np.concatenate([s.opacities for s in scenes]),
        np.concatenate([s.sh for s in scenes]),
        np.concatenate([s.object_ids for s in scenes]),
    )

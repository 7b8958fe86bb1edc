"""Curvature estimation and physical-geometric adaptive Poisson-disk sampling.

The sample radius shrinks for soft material and for curved regions:

    K_hat = clip(gain * K, V_min, V_max)
    r_hat = min(r, k * sqrt((E / E_ref) / K_hat) * r)

where ``K`` is the surface variation ``l3 / (l1 + l2 + l3)`` of the point
covariance (``l3`` the smallest eigenvalue). Driving particles are chosen as
a subset of the input points (see :func:`pgas_sample`).
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numba
import numpy as np
from scipy.spatial import cKDTree

from .errors import ValidationError

CURVATURE_MODES = ("global", "local")


@dataclass
class PgasParams:
    base_radius: float = 0.05
    v_max: float = 10.0
    v_min: float = 1.0
    k: float = math.sqrt(10.0)
    e_ref: float = 1e6
    curvature_mode: str = "local"
    local_neighbors: int = 30
    curvature_gain: float | None = None
    faithful: bool = False
    rng_seed: int = 0

    def __post_init__(self):
        if not self.base_radius > 0:
            raise ValidationError("base_radius must be > 0", field="base_radius")
        if not 0 < self.v_min <= self.v_max:
            raise ValidationError("need 0 < v_min <= v_max", field="v_min")
        if not self.k > 0:
            raise ValidationError("k must be > 0", field="k")
        if not self.e_ref > 0:
            raise ValidationError("e_ref must be > 0", field="e_ref")
        if self.curvature_mode not in CURVATURE_MODES:
            raise ValidationError(f"curvature_mode must be one of {CURVATURE_MODES}", field="curvature_mode")
        if self.local_neighbors < 3:
            raise ValidationError("local_neighbors must be >= 3", field="local_neighbors")
        if self.curvature_gain is not None and not self.curvature_gain > 0:
            raise ValidationError("curvature_gain must be > 0", field="curvature_gain")

    @property
    def gain(self):
        """Multiplier applied to raw K before clamping (1 in faithful mode)."""
        if self.faithful:
            return 1.0
        return 3.0 * self.v_max if self.curvature_gain is None else self.curvature_gain


@dataclass
class CurvatureField:
    raw: np.ndarray
    clamped: np.ndarray
    mode: str


def surface_variation(cov):
    """Smallest-eigenvalue ratio of covariance matrices ``(..., 3, 3)``; 0 when degenerate."""
    evals = np.linalg.eigvalsh(cov)  # ascending
    total = evals.sum(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        K = np.where(total > 0, np.maximum(evals[..., 0], 0.0) / total, 0.0)
    return np.clip(K, 0.0, 1.0 / 3.0)


def clamp_curvature(K, params):
    return np.clip(np.asarray(K, dtype=np.float64) * params.gain, params.v_min, params.v_max)


def estimate_curvature(points, params=None):
    """Per-point curvature score.

    ``global`` mode computes one K from the covariance of all points about
    their mean and broadcasts it; ``local`` mode uses each point's
    ``local_neighbors`` nearest neighbours (itself included).
    """
    params = params or PgasParams()
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(pts)
    if n < 4:
        raise ValidationError(f"curvature needs at least 4 points, got {n}", field="points")
    if params.curvature_mode == "global":
        d = pts - pts.mean(axis=0)
        K = np.full(n, float(surface_variation(d.T @ d / n)))
    else:
        k = min(params.local_neighbors + 1, n)
        _, nbr = cKDTree(pts).query(pts, k=k)
        hood = pts[nbr]
        d = hood - hood.mean(axis=1, keepdims=True)
        cov = np.einsum("nki,nkj->nij", d, d) / k
        K = surface_variation(cov)
    return CurvatureField(raw=K, clamped=clamp_curvature(K, params), mode=params.curvature_mode)


def adapt_radius(E, K, params=None):
    """Adaptive radius for Young's modulus ``E`` (Pa) and raw curvature ``K``."""
    params = params or PgasParams()
    E = np.asarray(E, dtype=np.float64)
    if np.any(E <= 0):
        raise ValidationError("Young's modulus must be > 0", field="E")
    K_hat = clamp_curvature(K, params)
    r = params.base_radius
    r_hat = np.minimum(r, params.k * np.sqrt((E / params.e_ref) / K_hat) * r)
    return float(r_hat) if r_hat.ndim == 0 else r_hat


@dataclass
class SampleSet:
    indices: np.ndarray
    positions: np.ndarray
    radii: np.ndarray
    point_radii: np.ndarray

    def __len__(self):
        return len(self.indices)


@numba.njit(cache=True)
def _anneal_sample(pts, shape, level, rank, order, indptr, nbrs):
    n = pts.shape[0]
    accepted = np.zeros(n, np.bool_)
    out = np.empty(n, np.int64)
    n_out = 0
    # saturated pass: every radius equals the base radius, so any listed
    # neighbour of an accepted point conflicts
    for oi in range(n):
        i = order[oi]
        ok = True
        for p in range(indptr[i], indptr[i + 1]):
            if accepted[nbrs[p]]:
                ok = False
                break
        if ok:
            accepted[i] = True
            out[n_out] = i
            n_out += 1
    # softening pass: a point becomes admissible once the radius level drops
    # below its smallest normalised distance to an accepted point
    bound = np.full(n, np.inf)
    heap = [(0.0, np.int64(0), np.int64(0))]
    heap.pop()
    for i in range(n):
        if accepted[i]:
            continue
        u = np.inf
        for p in range(indptr[i], indptr[i + 1]):
            j = nbrs[p]
            if accepted[j]:
                d = np.sqrt(((pts[i] - pts[j]) ** 2).sum())
                u = min(u, d / max(shape[i], shape[j]))
        bound[i] = u
        if u > level:
            heapq.heappush(heap, (-u, rank[i], np.int64(i)))
    while len(heap) > 0:
        negu, _, i = heapq.heappop(heap)
        if accepted[i] or -negu != bound[i]:
            continue
        if bound[i] <= level:
            break
        accepted[i] = True
        out[n_out] = i
        n_out += 1
        for p in range(indptr[i], indptr[i + 1]):
            j = nbrs[p]
            if accepted[j]:
                continue
            d = np.sqrt(((pts[i] - pts[j]) ** 2).sum())
            u = d / max(shape[i], shape[j])
            if u < bound[j]:
                bound[j] = u
                if u > level:
                    heapq.heappush(heap, (-u, rank[j], np.int64(j)))
    return out[:n_out]


def _neighbour_csr(pts, radius):
    pairs = cKDTree(pts).query_pairs(radius, output_type="ndarray")
    n = len(pts)
    if len(pairs) == 0:
        return np.zeros(n + 1, np.int64), np.zeros(0, np.int64)
    both = np.concatenate([pairs, pairs[:, ::-1]])
    both = both[np.lexsort((both[:, 1], both[:, 0]))]
    indptr = np.zeros(n + 1, np.int64)
    np.cumsum(np.bincount(both[:, 0], minlength=n), out=indptr[1:])
    return indptr, both[:, 1].astype(np.int64)


def pgas_sample(points, E_field, params=None, curvature=None):
    """Select driving particles among ``points`` with stiffness/curvature-adapted radii.

    Candidates are first dart-thrown in a seeded random order at the base
    radius ``r`` (where every adaptive radius saturates). Stiffness is then
    lowered continuously from that saturated level to the requested field;
    each remaining point is inserted as soon as its distance to every kept
    point exceeds the larger of the two current radii (ties by the seeded
    order). The result is a maximal set: kept points satisfy
    ``|x_i - x_j| > max(r_hat_i, r_hat_j)`` and every other point conflicts
    with some kept point. Because softening only continues the same sweep,
    scaling the E field down never removes samples.

    Parameters
    ----------
    points : (N, 3) array
    E_field : scalar or (N,) Young's modulus per point, Pa
    params : PgasParams
    curvature : optional precomputed :class:`CurvatureField`

    Returns
    -------
    SampleSet
        indices into ``points`` (acceptance order), their positions and radii.
    """
    params = params or PgasParams()
    pts = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(pts)
    if n == 0:
        raise ValidationError("cannot sample an empty point set", field="points")
    E = np.broadcast_to(np.asarray(E_field, dtype=np.float64), (n,))
    if np.any(~(E > 0)):
        raise ValidationError("Young's modulus must be > 0", field="E")
    if curvature is None:
        K = estimate_curvature(pts, params).raw if n >= 4 else np.zeros(n)
    else:
        K = curvature.raw
    r_hat = np.asarray(adapt_radius(E, K, params), dtype=np.float64).reshape(n)
    # r_hat_i = min(r, level * shape_i): only the scalar level carries the
    # global stiffness scale
    e_max = float(E.max())
    shape = np.sqrt((E / e_max) / clamp_curvature(K, params))
    r = params.base_radius
    level = params.k * np.sqrt(e_max / params.e_ref) * r
    rng = np.random.default_rng(params.rng_seed)
    order = rng.permutation(n).astype(np.int64)
    rank = np.empty(n, np.int64)
    rank[order] = np.arange(n)
    indptr, nbrs = _neighbour_csr(pts, r)
    idx = _anneal_sample(pts, shape, float(level), rank, order, indptr, nbrs)
    return SampleSet(indices=idx, positions=pts[idx], radii=r_hat[idx], point_radii=r_hat)

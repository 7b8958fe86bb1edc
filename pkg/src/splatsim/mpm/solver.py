"""Simulation state, initialisation and time stepping around the numba kernels."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numba
import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from ..errors import SimulationError, ValidationError
from ..materials import MaterialProperties, PropertyField, lame_from_young_poisson
from ..scene_io.config import ForceSpec, SimConfig
from . import kernels

OCCUPANCY_CLOSING = 3


@dataclass
class MpmParticles:
    x: np.ndarray
    v: np.ndarray
    F: np.ndarray
    C: np.ndarray
    mass: np.ndarray
    volume0: np.ndarray
    mu: np.ndarray
    lam: np.ndarray
    object_id: np.ndarray
    # compact 0..n_objects-1 index used by the damping kernel
    object_index: np.ndarray

    def __len__(self):
        return len(self.x)


@dataclass
class MpmGrid:
    resolution: int
    dx: float
    origin: np.ndarray
    mass: np.ndarray
    momentum: np.ndarray
    collider: np.ndarray
    touched: np.ndarray
    active: np.ndarray

    @classmethod
    def create(cls, resolution, origin, extent):
        n = int(resolution)
        size = n**3
        return cls(
            resolution=n,
            dx=float(extent) / n,
            origin=np.asarray(origin, dtype=np.float64).copy(),
            mass=np.zeros(size),
            momentum=np.zeros((size, 3)),
            collider=np.zeros(size, np.bool_),
            touched=np.zeros(size, np.bool_),
            active=np.zeros(size, np.int64),
        )

    @property
    def extent(self):
        return self.dx * self.resolution

    def node_position(self, i, j, k):
        return self.origin + self.dx * np.array([i, j, k], dtype=np.float64)


@dataclass
class ScheduledForce:
    spec: ForceSpec
    object_id: int
    delivered: bool = False


@dataclass
class FrameSnapshot:
    frame: int
    time: float
    positions: np.ndarray
    velocities: np.ndarray
    F: np.ndarray


@dataclass
class SimState:
    particles: MpmParticles
    grid: MpmGrid
    config: SimConfig
    frame: int = 0
    substep_count: int = 0
    forces: list = field(default_factory=list)
    last_snapshot: Optional[FrameSnapshot] = None

    @property
    def time(self):
        return self.substep_count * self.config.dt_substep

    def snapshot(self):
        p = self.particles
        return FrameSnapshot(self.frame, self.time, p.x.copy(), p.v.copy(), p.F.copy())

    def total_mass(self):
        return float(self.particles.mass.sum())

    def momentum(self):
        p = self.particles
        return (p.mass[:, None] * p.v).sum(axis=0)

    def center_of_mass(self, object_id=None):
        p = self.particles
        sel = slice(None) if object_id is None else p.object_id == object_id
        m = p.mass[sel]
        return (m[:, None] * p.x[sel]).sum(axis=0) / m.sum()

    def elastic_energy(self):
        p = self.particles
        return float(kernels.elastic_energy(p.F, p.volume0, p.mu, p.lam))

    def grid_mass(self):
        """Total node mass produced by a particle-to-grid transfer of the current state."""
        g = self.grid
        return float(kernels.p2g_mass(self.particles.x, self.particles.mass, g.resolution, g.dx, g.origin).sum())


def set_threads(n):
    """Number of threads used by the parallel loops (grid update, G2P)."""
    if n is not None:
        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))
    return numba.get_num_threads()


def occupancy_volume(points, voxel=None, closing=OCCUPANCY_CLOSING):
    """Volume enclosed by a point set, from a closed and hole-filled voxel mask.

    The voxel edge defaults to the median nearest-neighbour spacing, so a
    regular lattice maps one point per voxel. Dilating by ``closing`` voxels
    seals gaps in sparse or surface-only sets before the interior is filled;
    the same number of erosions then restores the outline.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) < 2:
        raise ValidationError("occupancy volume needs at least 2 points", field="points")
    if voxel is None:
        d, _ = cKDTree(pts).query(pts, k=2)
        voxel = float(np.median(d[:, 1]))
    if not voxel > 0:
        raise ValidationError("points are coincident; cannot estimate a volume", field="points")
    pad = closing + 2
    ijk = np.floor((pts - pts.min(axis=0)) / voxel).astype(np.int64) + pad
    mask = np.zeros(tuple(ijk.max(axis=0) + pad + 1), dtype=bool)
    mask[tuple(ijk.T)] = True
    st = np.ones((3, 3, 3), dtype=bool)
    if closing:
        mask = ndimage.binary_dilation(mask, st, iterations=closing)
    mask = ndimage.binary_fill_holes(mask)
    if closing:
        mask = ndimage.binary_erosion(mask, st, iterations=closing, border_value=0)
    return float(mask.sum()) * voxel**3


def compute_domain(points, config):
    """Cubic simulation domain ``(origin, extent)``.

    Explicit ``domain_min``/``domain_size`` win; otherwise a cube of side
    ``domain_padding * max extent`` centred on the points' bounding box.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    size = config.domain_size
    if size is None:
        extent = float((hi - lo).max())
        size = config.domain_padding * (extent if extent > 0 else 1.0)
    if config.domain_min is not None:
        origin = np.asarray(config.domain_min, dtype=np.float64)
    else:
        origin = 0.5 * (lo + hi) - 0.5 * size
    return origin, float(size)


def _check_inside(x, grid):
    g = (x - grid.origin) / grid.dx
    base = np.floor(g - 0.5)
    bad = np.flatnonzero(((base < 0) | (base + 2 >= grid.resolution)).any(axis=1))
    if len(bad):
        p = int(bad[0])
        raise SimulationError(
            f"particle {p} at {x[p].tolist()} lies outside the grid domain "
            f"[{grid.origin.tolist()}, +{grid.extent:g}] (one-cell margin required)",
            particle=p,
        )


def mark_colliders(grid, points):
    """Flag the nodes covered by a rigid object's points (closed and filled)."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = grid.resolution
    ijk = np.rint((pts - grid.origin) / grid.dx).astype(np.int64)
    ijk = ijk[((ijk >= 0) & (ijk < n)).all(axis=1)]
    mask = np.zeros((n, n, n), dtype=bool)
    mask[tuple(ijk.T)] = True
    mask = ndimage.binary_closing(mask, np.ones((3, 3, 3), dtype=bool))
    mask = ndimage.binary_fill_holes(mask)
    grid.collider |= mask.reshape(-1)
    return int(mask.sum())


@dataclass
class RigidPlan:
    """How rigid objects are treated: ``colliders`` are removed from the particle set."""

    colliders: set
    properties: dict


def handle_rigid(properties, config):
    """Split objects flagged rigid according to ``config.rigid_mode``.

    ``collider`` mode excludes them from deformation (their cells become
    sticky nodes); ``stiff`` mode keeps them as particles with Young's
    modulus raised to at least ``config.stiff_min_modulus``, which also
    saturates the adaptive sampling radius at its coarse value.
    """
    colliders = set()
    out = {}
    for oid, props in properties.items():
        if not props.rigid:
            out[oid] = props
        elif config.rigid_mode == "collider":
            colliders.add(oid)
            out[oid] = props
        else:
            out[oid] = MaterialProperties(
                props.density,
                max(props.young_modulus, config.stiff_min_modulus),
                props.poisson_ratio,
                True,
                props.material_name,
            )
    return RigidPlan(colliders=colliders, properties=out)


def initialize(positions, field, config, object_ids=None, volume_points=None, forces=None, domain=None):
    """Build a rest :class:`SimState` for the driving particles.

    Parameters
    ----------
    positions : (N, 3) array or SampleSet
    field : PropertyField with N entries
    config : SimConfig
    object_ids : (N,) int array, default all zero
    volume_points : optional dict ``object_id -> points`` used for the
        occupancy volume (e.g. all Gaussian centres of the object); the
        driving particles themselves are used otherwise
    forces : optional list of ``(object_id, ForceSpec)``
    domain : optional ``(origin, extent)`` overriding :func:`compute_domain`
    """
    x = np.array(getattr(positions, "positions", positions), dtype=np.float64).reshape(-1, 3)
    n = len(x)
    if n == 0:
        raise ValidationError("driving set is empty", field="positions")
    if len(field) != n:
        raise ValidationError(f"property field has {len(field)} entries for {n} particles", field="field")
    oids = np.zeros(n, np.int64) if object_ids is None else np.asarray(object_ids, dtype=np.int64).reshape(n)
    origin, extent = domain if domain is not None else compute_domain(x, config)
    grid = MpmGrid.create(config.grid_resolution, origin, extent)
    _check_inside(x, grid)

    uniq, compact = np.unique(oids, return_inverse=True)
    volume0 = np.empty(n)
    for o, oid in enumerate(uniq):
        sel = compact == o
        count = int(sel.sum())
        src = None if volume_points is None else volume_points.get(int(oid))
        src = x[sel] if src is None else np.asarray(src, dtype=np.float64).reshape(-1, 3)
        if len(src) >= 4:
            volume0[sel] = occupancy_volume(src) / count
        else:
            # too few points to outline a volume: standard 8 particles per cell
            volume0[sel] = (grid.dx / 2.0) ** 3
    lame = lame_from_young_poisson(field.young_modulus, field.poisson_ratio)
    particles = MpmParticles(
        x=x,
        v=np.zeros((n, 3)),
        F=np.tile(np.eye(3), (n, 1, 1)),
        C=np.zeros((n, 3, 3)),
        mass=np.asarray(field.density, dtype=np.float64) * volume0,
        volume0=volume0,
        mu=np.broadcast_to(lame.mu, (n,)).astype(np.float64),
        lam=np.broadcast_to(lame.lam, (n,)).astype(np.float64),
        object_id=oids,
        object_index=compact.astype(np.int64),
    )
    scheduled = [ScheduledForce(spec, int(oid)) for oid, spec in (forces or [])]
    return SimState(particles=particles, grid=grid, config=config, forces=scheduled)


def _up_vector(gravity):
    g = np.asarray(gravity, dtype=np.float64)
    norm = np.linalg.norm(g)
    return -g / norm if norm > 0 else np.array([0.0, 0.0, 1.0])


def _force_arrays(state):
    t = state.time
    dt = state.config.dt_substep
    default_radius = state.config.force_radius_cells * state.grid.dx
    pts, imp, rad = [], [], []
    for f in state.forces:
        s = f.spec
        if s.kind == "impulse":
            if f.delivered or t < s.start_time:
                continue
            f.delivered = True
            impulse = s.vector
        else:
            if not s.start_time <= t < s.start_time + s.duration:
                continue
            impulse = s.vector * dt
        pts.append(s.application_point)
        imp.append(impulse)
        rad.append(default_radius if s.radius is None else s.radius)
    if not pts:
        return np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0)
    return np.asarray(pts, dtype=np.float64), np.asarray(imp, dtype=np.float64), np.asarray(rad, dtype=np.float64)


def substep(state):
    """Advance ``state`` by one substep in place and return it."""
    cfg = state.config
    p = state.particles
    g = state.grid
    fp, fi, fr = _force_arrays(state)
    has_ground = cfg.ground_height is not None
    status, idx = kernels.substep_kernel(
        p.x, p.v, p.F, p.C, p.mass, p.volume0, p.mu, p.lam,
        p.object_index, int(p.object_index.max()) + 1, float(cfg.damping),
        g.mass, g.momentum, g.touched, g.active,
        g.resolution, g.dx, g.origin, float(cfg.dt_substep), np.asarray(cfg.gravity, dtype=np.float64),
        int(cfg.boundary_cells), cfg.boundary == "slip", has_ground, _up_vector(cfg.gravity),
        float(cfg.ground_height) if has_ground else 0.0, g.collider,
        fp, fi, fr, np.zeros(len(p.x), np.bool_),
    )  # fmt: skip
    if status == kernels.CFL:
        speed = float(np.linalg.norm(p.v[idx]))
        raise SimulationError(
            f"CFL violation at particle {idx}: |v| * dt = {speed * cfg.dt_substep:.3g} >= dx = {g.dx:.3g} "
            f"(substep {state.substep_count})",
            particle=int(idx),
        )
    if status == kernels.OUT_OF_DOMAIN:
        raise SimulationError(f"particle {idx} left the grid domain at substep {state.substep_count}", particle=int(idx))
    if status == kernels.INVERTED:
        raise SimulationError(
            f"deformation gradient of particle {idx} inverted (det F <= 0) at substep {state.substep_count}",
            particle=int(idx),
        )
    state.substep_count += 1
    return state


def advance_frame(state, on_frame=None):
    """Run ``substeps_per_frame`` substeps, bump the frame index and record a snapshot."""
    for _ in range(state.config.substeps_per_frame):
        substep(state)
    state.frame += 1
    state.last_snapshot = state.snapshot()
    if on_frame is not None:
        on_frame(state.last_snapshot)
    return state


def simulate(state, frames=None, on_frame=None):
    """Advance ``frames`` frames (default ``config.frames``); returns the list of snapshots."""
    frames = state.config.frames if frames is None else frames
    out = []
    for _ in range(frames):
        advance_frame(state, on_frame)
        out.append(state.last_snapshot)
    return out

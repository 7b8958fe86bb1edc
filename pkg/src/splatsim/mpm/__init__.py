"""MLS-MPM elastic simulation of driving particles."""
from .kernels import corotated_energy_density, kirchhoff_stress, polar_rotation
from .solver import (
    FrameSnapshot,
    MpmGrid,
    MpmParticles,
    RigidPlan,
    ScheduledForce,
    SimState,
    advance_frame,
    compute_domain,
    handle_rigid,
    initialize,
    mark_colliders,
    occupancy_volume,
    set_threads,
    simulate,
    substep,
)

__all__ = [
    "FrameSnapshot",
    "MpmGrid",
    "MpmParticles",
    "RigidPlan",
    "ScheduledForce",
    "SimState",
    "advance_frame",
    "compute_domain",
    "corotated_energy_density",
    "handle_rigid",
    "initialize",
    "kirchhoff_stress",
    "mark_colliders",
    "occupancy_volume",
    "polar_rotation",
    "set_threads",
    "simulate",
    "substep",
]

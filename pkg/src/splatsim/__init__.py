"""Physics-driven animation of Gaussian-splat scenes.

Material properties are perceived per object, expanded into per-particle
fields, sampled into driving particles, simulated with MLS-MPM and carried
back onto the Gaussians for rendering.
"""
import os as _os

__version__ = "0.1.0"

# The bundled TBB is often too old for numba and only produces a warning;
# prefer OpenMP unless the user chose a threading layer.
if "NUMBA_THREADING_LAYER" not in _os.environ and "NUMBA_THREADING_LAYER_PRIORITY" not in _os.environ:
    import numba as _numba

    _numba.config.THREADING_LAYER_PRIORITY = ["omp", "tbb", "workqueue"]

from .errors import (  # noqa: E402
    BindingError,
    PerceptionError,
    PlyParseError,
    SceneIOError,
    SimulationError,
    SplatSimError,
    ValidationError,
)
from .gaussians import CameraSpec, GaussianScene, GaussianSplat  # noqa: E402
from .materials import MaterialProperties, PropertyField, mpdp_field  # noqa: E402
from .sampling import PgasParams, pgas_sample  # noqa: E402
from .scene_io import SimConfig, load_config, load_manifest, load_splat_ply  # noqa: E402

__all__ = [
    "BindingError",
    "CameraSpec",
    "GaussianScene",
    "GaussianSplat",
    "MaterialProperties",
    "PerceptionError",
    "PgasParams",
    "PlyParseError",
    "PropertyField",
    "SceneIOError",
    "SimConfig",
    "SimulationError",
    "SplatSimError",
    "ValidationError",
    "load_config",
    "load_manifest",
    "load_splat_ply",
    "mpdp_field",
    "pgas_sample",
]

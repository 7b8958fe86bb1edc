"""Simulation config and object manifest records (JSON on disk).

See ``docs/formats.md`` for the full schema and defaults.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import SceneIOError, ValidationError
from ..materials import MaterialProperties
from ..perception.types import ProviderConfig
from ..sampling import PgasParams

FORCE_KINDS = ("impulse", "constant")
BOUNDARY_MODES = ("sticky", "slip")
RIGID_MODES = ("collider", "stiff")
BINDING_MODES = ("rigid", "stretch")
SH_ROTATION_MODES = ("exact", "truncate")


@dataclass
class ForceSpec:
    """External force acting on an object.

    ``magnitude`` is in N for ``constant`` forces (active over
    ``[start_time, start_time + duration)``) and in N*s for ``impulse``
    forces (delivered once, at the first substep reaching ``start_time``).
    ``radius`` is the application radius in world units; ``None`` means
    ``SimConfig.force_radius_cells * dx``.
    """

    kind: str
    application_point: tuple
    direction: tuple
    magnitude: float
    start_time: float = 0.0
    duration: float = 0.0
    radius: Optional[float] = None

    def __post_init__(self):
        if self.kind not in FORCE_KINDS:
            raise ValidationError(f"force kind must be one of {FORCE_KINDS}, got {self.kind!r}", field="kind")
        self.application_point = tuple(float(v) for v in self.application_point)
        self.direction = tuple(float(v) for v in self.direction)
        if len(self.application_point) != 3:
            raise ValidationError("application_point needs 3 components", field="application_point")
        if len(self.direction) != 3 or abs(math.sqrt(sum(d * d for d in self.direction)) - 1.0) > 1e-6:
            raise ValidationError("direction must be a unit vector (within 1e-6)", field="direction")
        if not self.magnitude >= 0:
            raise ValidationError("magnitude must be >= 0", field="magnitude")
        if self.start_time < 0:
            raise ValidationError("start_time must be >= 0", field="start_time")
        if self.kind == "constant" and not self.duration > 0:
            raise ValidationError("duration must be > 0 for constant forces", field="duration")
        if self.duration < 0:
            raise ValidationError("duration must be >= 0", field="duration")
        if self.radius is not None and not self.radius > 0:
            raise ValidationError("radius must be > 0", field="radius")

    @property
    def vector(self):
        return self.magnitude * np.asarray(self.direction)


@dataclass
class ObjectManifest:
    object_id: int
    tag: str
    canonical_image: Optional[str] = None
    property_override: Optional[MaterialProperties] = None
    force_specs: list = field(default_factory=list)


@dataclass
class CameraConfig:
    """Camera placement for rendered frames; ``eye``/``target`` None -> auto-fit to the scene."""

    eye: Optional[tuple] = None
    target: Optional[tuple] = None
    up: tuple = (0.0, 0.0, 1.0)
    fov_y_deg: float = 45.0


@dataclass
class SimConfig:
    grid_resolution: int = 64
    substeps_per_frame: int = 768
    dt_substep: float = 4.34e-5
    frames: int = 24
    gravity: tuple = (0.0, 0.0, -9.8)
    ground_height: Optional[float] = None
    boundary: str = "sticky"
    boundary_cells: int = 2
    damping: float = 0.9995
    force_radius_cells: float = 2.0
    domain_min: Optional[tuple] = None
    domain_size: Optional[float] = None
    domain_padding: float = 2.0
    rigid_mode: str = "collider"
    stiff_min_modulus: float = 1e9
    binding_neighbors: int = 8
    binding_bandwidth: Optional[float] = None
    binding_mode: str = "rigid"
    sh_rotation: str = "exact"
    mpdp_model: str = "builtin"
    mpdp_spread: float = 0.2
    base_radius: Optional[float] = None
    pgas: PgasParams = field(default_factory=PgasParams)
    width: int = 320
    height: int = 240
    background: tuple = (1.0, 1.0, 1.0)
    camera: CameraConfig = field(default_factory=CameraConfig)
    provider: ProviderConfig = field(default_factory=ProviderConfig)
    catalog: Optional[str] = None
    rng_seed: int = 0

    def __post_init__(self):
        self.gravity = tuple(float(g) for g in self.gravity)
        self.background = tuple(float(b) for b in self.background)
        if isinstance(self.pgas, dict):
            self.pgas = _build(PgasParams, self.pgas, "pgas")
        if isinstance(self.camera, dict):
            self.camera = _build(CameraConfig, self.camera, "camera")
        if isinstance(self.provider, dict):
            self.provider = _build(ProviderConfig, self.provider, "provider")
        checks = [
            ("grid_resolution", self.grid_resolution >= 8, "must be >= 8"),
            ("substeps_per_frame", self.substeps_per_frame >= 1, "must be >= 1"),
            ("dt_substep", self.dt_substep > 0, "must be > 0"),
            ("frames", self.frames >= 0, "must be >= 0"),
            ("gravity", len(self.gravity) == 3, "needs 3 components"),
            ("boundary", self.boundary in BOUNDARY_MODES, f"must be one of {BOUNDARY_MODES}"),
            ("boundary_cells", self.boundary_cells >= 0, "must be >= 0"),
            ("damping", 0 < self.damping <= 1, "must lie in (0, 1]"),
            ("force_radius_cells", self.force_radius_cells > 0, "must be > 0"),
            ("domain_padding", self.domain_padding >= 1, "must be >= 1"),
            ("domain_size", self.domain_size is None or self.domain_size > 0, "must be > 0"),
            ("rigid_mode", self.rigid_mode in RIGID_MODES, f"must be one of {RIGID_MODES}"),
            ("binding_neighbors", self.binding_neighbors >= 1, "must be >= 1"),
            ("binding_bandwidth", self.binding_bandwidth is None or self.binding_bandwidth > 0, "must be > 0"),
            ("binding_mode", self.binding_mode in BINDING_MODES, f"must be one of {BINDING_MODES}"),
            ("sh_rotation", self.sh_rotation in SH_ROTATION_MODES, f"must be one of {SH_ROTATION_MODES}"),
            ("mpdp_spread", 0 <= self.mpdp_spread < 1, "must lie in [0, 1)"),
            ("base_radius", self.base_radius is None or self.base_radius > 0, "must be > 0"),
            ("width", self.width > 0, "must be > 0"),
            ("height", self.height > 0, "must be > 0"),
            ("background", len(self.background) == 3, "needs 3 components"),
        ]
        for name, ok, msg in checks:
            if not ok:
                raise ValidationError(f"config field {name!r} {msg}", field=name)

    @property
    def frame_duration(self):
        return self.substeps_per_frame * self.dt_substep

    def to_dict(self):
        return dataclasses.asdict(self)

    def config_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ValidationError(f"{where} must be a JSON object", field=where)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        warnings.warn(f"ignoring unknown {where} keys: {', '.join(unknown)}", stacklevel=3)
    try:
        return cls(**{k: v for k, v in data.items() if k in names})
    except TypeError as exc:
        raise ValidationError(f"{where}: {exc}", field=where) from exc


def _read_json(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise SceneIOError(f"cannot read {path}: {exc}") from exc
    if not text.strip():
        return {}
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from exc


def config_from_dict(data):
    return _build(SimConfig, data, "config")


def load_config(path):
    """Read a JSON config file; empty file or ``{}`` gives all defaults."""
    return config_from_dict(_read_json(path))


def properties_from_dict(data, where="property_override"):
    return _build(MaterialProperties, data, where)


def manifest_from_dict(data, object_ids=None):
    entries = data.get("objects", []) if isinstance(data, dict) else data
    if not isinstance(entries, list):
        raise ValidationError("manifest must hold a list of objects", field="objects")
    known = None if object_ids is None else {int(i) for i in object_ids}
    out = []
    seen = set()
    for i, entry in enumerate(entries):
        where = f"objects[{i}]"
        if not isinstance(entry, dict) or "object_id" not in entry:
            raise ValidationError(f"{where}: object_id is required", field="object_id")
        entry = dict(entry)
        oid = int(entry["object_id"])
        if known is not None and oid not in known:
            raise ValidationError(f"{where}: object_id {oid} is not present in the scene", field="object_id")
        if oid in seen:
            raise ValidationError(f"{where}: duplicate object_id {oid}", field="object_id")
        seen.add(oid)
        override = entry.get("property_override")
        if override is not None:
            entry["property_override"] = properties_from_dict(override, f"{where}.property_override")
        forces = entry.get("force_specs", entry.pop("forces", []))
        entry["force_specs"] = [_build(ForceSpec, f, f"{where}.force_specs[{j}]") for j, f in enumerate(forces)]
        entry.setdefault("tag", "")
        out.append(_build(ObjectManifest, entry, where))
    return out


def load_manifest(path, object_ids=None):
    """Read a JSON manifest; ``object_ids`` (e.g. from the scene) enables the presence check."""
    return manifest_from_dict(_read_json(path), object_ids)

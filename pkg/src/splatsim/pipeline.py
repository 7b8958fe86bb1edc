"""End-to-end orchestration: perception, property fields, sampling, simulation, binding, rendering.

Every command writes ``<out>/report.json`` whether it succeeds or not. All
report fields except ``timings`` are a deterministic function of the inputs,
the seed and the thread count.
"""
from __future__ import annotations

import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import asdict, dataclass, replace
from typing import Optional

import numpy as np

from . import __version__
from .binding import apply_binding, build_binding, fit_rigid
from .errors import PerceptionError, SceneIOError, SimulationError, ValidationError
from .gaussians import CameraSpec
from .materials import FieldModel, PropertyField, make_field_model, mpdp_field
from .mpm import advance_frame, compute_domain, handle_rigid, initialize, mark_colliders, set_threads
from .perception import load_catalog, make_provider, perceive
from .renderer import render
from .sampling import pgas_sample
from .scene_io import FRAME_PATTERN, SimConfig, load_config, load_manifest, load_splat_ply, save_frame, save_points_ply

log = logging.getLogger(__name__)

REPORT_FORMAT = 1
REPORT_NAME = "report.json"
PROVIDER_MODES = ("offline", "remote")
CACHE_ENV = "SPLATSIM_CACHE_DIR"


@dataclass
class PipelineRun:
    """Inputs and switches of one command invocation.

    ``seed`` overrides both ``rng_seed`` and ``pgas.rng_seed`` of the
    config; ``frames`` overrides ``config.frames``; ``threads`` defaults to
    every available core.
    """

    scene: str
    out: str
    manifest: Optional[str] = None
    config: Optional[str] = None
    provider: str = "offline"
    seed: Optional[int] = None
    threads: Optional[int] = None
    frames: Optional[int] = None
    dump_particles: bool = False
    use_cache: bool = True

    def check(self, need_manifest=False):
        """Create the output directory, then validate switches and input paths.

        The directory comes first so a failure report can always be written.
        """
        try:
            os.makedirs(self.out, exist_ok=True)
        except OSError as exc:
            raise SceneIOError(f"cannot create output directory {self.out}: {exc}") from exc
        if self.provider not in PROVIDER_MODES:
            raise ValidationError(f"provider must be one of {PROVIDER_MODES}", field="provider")
        if self.threads is not None and self.threads < 1:
            raise ValidationError("threads must be >= 1", field="threads")
        if self.frames is not None and self.frames < 0:
            raise ValidationError("frames must be >= 0", field="frames")
        if need_manifest and not self.manifest:
            raise ValidationError("this command needs --manifest", field="manifest")
        for name in ("scene", "manifest", "config"):
            path = getattr(self, name)
            if path is not None and not os.path.isfile(path):
                raise SceneIOError(f"{name} file not found: {path}")


class RunReport:
    """Machine-readable record of one run, built up stage by stage."""

    def __init__(self, command, run):
        self.run = run
        self.current_stage = "setup"
        self.current_object = None
        self.data = {
            "format": REPORT_FORMAT,
            "version": __version__,
            "command": command,
            "status": "running",
            "exit_code": None,
            "failure": None,
            "inputs": {"scene": run.scene, "manifest": run.manifest, "config": run.config},
            "provider": run.provider,
            "seed": run.seed,
            "threads": None,
            "config_hash": None,
            "config": None,
            "scene": None,
            "objects": [],
            "simulation": None,
            "frames": [],
            "timings": {},
        }

    @contextmanager
    def stage(self, name, object_id=None):
        """Time a stage; on an exception the stage and object stay recorded as current."""
        self.current_stage, self.current_object = name, object_id
        t0 = time.perf_counter()
        try:
            yield
        finally:
            timings = self.data["timings"]
            timings[name] = timings.get(name, 0.0) + time.perf_counter() - t0
        self.current_object = None

    def fail(self, exc):
        code = getattr(exc, "exit_code", 1)
        self.data["status"] = "failed"
        self.data["exit_code"] = code
        self.data["failure"] = {
            "stage": self.current_stage,
            "object_id": self.current_object,
            "error": type(exc).__name__,
            "message": str(exc),
        }

    def succeed(self):
        self.data["status"] = "ok"
        self.data["exit_code"] = 0

    def write(self):
        path = os.path.join(self.run.out, REPORT_NAME)
        tmp = f"{path}.tmp{os.getpid()}"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(self.data, fh, indent=2, sort_keys=True, default=_jsonable)
            fh.write("\n")
        os.replace(tmp, path)
        return path


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, (np.ndarray, tuple, set)):
        return list(obj.tolist() if isinstance(obj, np.ndarray) else sorted(obj) if isinstance(obj, set) else obj)
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


def read_report(out):
    with open(os.path.join(out, REPORT_NAME), "r", encoding="utf-8") as fh:
        return json.load(fh)


# ----------------------------------------------------------------------------
# shared stages


@dataclass
class _Inputs:
    config: SimConfig
    scene: object
    manifest: list


def _load_inputs(run, report, need_manifest):
    with report.stage("load"):
        cfg = load_config(run.config) if run.config else SimConfig()
        if run.seed is not None:
            cfg = replace(cfg, rng_seed=int(run.seed), pgas=replace(cfg.pgas, rng_seed=int(run.seed)))
        if run.frames is not None:
            cfg = replace(cfg, frames=int(run.frames))
        report.data["config"] = cfg.to_dict()
        report.data["config_hash"] = cfg.config_hash()
        report.data["seed"] = cfg.rng_seed
        scene = load_splat_ply(run.scene)
        report.data["scene"] = {
            "splats": len(scene),
            "sh_degree": scene.sh_degree,
            "objects": [int(o) for o in scene.object_id_list()],
        }
        manifest = []
        if run.manifest:
            manifest = load_manifest(run.manifest, object_ids=scene.object_id_list())
            base = os.path.dirname(os.path.abspath(run.manifest))
            for entry in manifest:
                if entry.canonical_image:
                    path = entry.canonical_image
                    if not os.path.isabs(path):
                        path = os.path.join(base, path)
                    if not os.path.isfile(path):
                        raise SceneIOError(f"object {entry.object_id}: canonical image not found: {path}")
                    entry.canonical_image = path
        elif need_manifest:
            raise ValidationError("this command needs --manifest", field="manifest")
    report.data["threads"] = set_threads(run.threads)
    return _Inputs(cfg, scene, sorted(manifest, key=lambda e: e.object_id))


def _object_record(report, oid):
    for rec in report.data["objects"]:
        if rec["object_id"] == oid:
            return rec
    rec = {"object_id": oid}
    report.data["objects"].append(rec)
    report.data["objects"].sort(key=lambda r: r["object_id"])
    return rec


def _cache_dir(run):
    if not run.use_cache or run.provider == "offline":
        # catalog lookups are deterministic and free; caching them would
        # only make the report depend on previous runs
        return None
    return os.environ.get(CACHE_ENV) or os.path.join(run.out, "cache")


def _make_provider(run, cfg):
    if run.provider == "remote":
        if not os.environ.get(cfg.provider.api_key_env):
            raise PerceptionError(f"environment variable {cfg.provider.api_key_env} holds no API key", stage="provider")
        try:
            return make_provider("remote", cfg.provider)
        except ValidationError as exc:
            raise PerceptionError(str(exc), stage="provider") from exc
    return make_provider("offline", catalog=load_catalog(cfg.catalog))


def _perceive_all(run, inputs, report):
    """Perception result per manifest object, run concurrently in object-id order."""
    cfg = inputs.config
    with report.stage("perceive"):
        provider = _make_provider(run, cfg)
        cache = _cache_dir(run)
        k = cfg.provider.candidate_count

        def one(entry):
            return perceive(entry.canonical_image, entry.tag, provider, entry.property_override, cache, k)

        results = {}
        entries = inputs.manifest
        workers = max(1, min(len(entries), report.data["threads"] or 1))
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [(e, pool.submit(one, e)) for e in entries]
            for entry, fut in futures:
                report.current_object = entry.object_id
                results[entry.object_id] = fut.result()
                log.info("object %d: %s", entry.object_id, results[entry.object_id].properties.material_name)
    for entry in entries:
        res = results[entry.object_id]
        rec = _object_record(report, entry.object_id)
        rec["tag"] = entry.tag
        rec["properties"] = asdict(res.properties)
        rec["perception"] = {
            "source": res.source,
            "caption": res.caption,
            "selected": res.selected.name if res.selected else None,
            "candidates": [asdict(c) for c in res.candidates],
            "provider_calls": res.provider_calls,
        }
    return results


class _GivenMultipliers(FieldModel):
    """Multipliers already computed for exactly these particles."""

    def __init__(self, table, provenance):
        self.table = table
        self.provenance = provenance

    def multipliers(self, positions):
        return self.table


def _field_model(cfg, oid):
    spec = cfg.mpdp_model
    if spec not in ("uniform", "builtin"):
        spec = spec.replace("{object_id}", str(oid))
    return make_field_model(spec, cfg.mpdp_spread)


def base_radius(cfg, domain_size):
    """Sampling radius: ``config.base_radius`` or half a grid cell."""
    if cfg.base_radius is not None:
        return float(cfg.base_radius)
    return 0.5 * domain_size / cfg.grid_resolution


@dataclass
class _Driving:
    positions: np.ndarray
    object_ids: np.ndarray
    source_index: np.ndarray
    radii: np.ndarray
    field: Optional[PropertyField]
    colliders: set
    static: set
    domain: tuple


def _sample_all(inputs, perceived, report):
    """Property fields and driving particles for every deformable object."""
    cfg = inputs.config
    scene = inputs.scene
    props = {oid: res.properties for oid, res in perceived.items()}
    plan = handle_rigid(props, cfg)
    static = {int(o) for o in scene.object_id_list()} - set(props)
    simulated = [oid for oid in sorted(plan.properties) if oid not in plan.colliders]
    in_domain = np.isin(scene.object_ids, simulated + sorted(plan.colliders))
    if in_domain.any():
        domain = compute_domain(scene.centers[in_domain], cfg)
    else:
        domain = compute_domain(scene.centers, cfg)
    radius = base_radius(cfg, domain[1])
    params = replace(cfg.pgas, base_radius=radius)
    parts = []
    for oid in sorted(set(props) | static):
        rec = _object_record(report, oid)
        rec["gaussians"] = int(np.count_nonzero(scene.object_ids == oid))
        rec["treatment"] = "static" if oid in static else "collider" if oid in plan.colliders else "simulated"
        if oid in plan.properties:
            rec["simulated_properties"] = asdict(plan.properties[oid])
    for oid in simulated:
        mean = plan.properties[oid]
        sel = np.flatnonzero(scene.object_ids == oid)
        pts = scene.centers[sel]
        with report.stage("mpdp", oid):
            full = mpdp_field(pts, mean, _field_model(cfg, oid))
        with report.stage("pgas", oid):
            samples = pgas_sample(pts, full.young_modulus, params)
        idx = samples.indices
        with report.stage("mpdp", oid):
            given = np.stack(
                [full.density[idx] / mean.density, full.young_modulus[idx] / mean.young_modulus,
                 full.poisson_ratio[idx] / mean.poisson_ratio if mean.poisson_ratio > 0 else np.ones(len(idx))],
                axis=1,
            )  # fmt: skip
            field = mpdp_field(samples.positions, mean, _GivenMultipliers(given, full.provenance))
        parts.append((oid, sel[idx], samples, field))
        rec = _object_record(report, oid)
        rec["driving_particles"] = len(samples)
        rec["mean_radius"] = float(samples.radii.mean())
        rec["field"] = {
            "provenance": field.provenance,
            "young_modulus_min": float(field.young_modulus.min()),
            "young_modulus_max": float(field.young_modulus.max()),
            "young_modulus_mean": float(field.young_modulus.mean()),
        }
    if parts:
        positions = np.concatenate([p[2].positions for p in parts])
        oids = np.concatenate([np.full(len(p[2]), p[0], np.int64) for p in parts])
        source = np.concatenate([p[1] for p in parts])
        radii = np.concatenate([p[2].radii for p in parts])
        field = PropertyField.concatenate([p[3] for p in parts])
    else:
        positions, oids, source, radii, field = np.zeros((0, 3)), np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0), None
    report.data["sampling"] = {
        "base_radius": radius,
        "domain_origin": [float(v) for v in domain[0]],
        "domain_size": float(domain[1]),
        "total_particles": int(len(positions)),
    }
    return _Driving(positions, oids, source, radii, field, set(plan.colliders), static, domain)


def _save_driving(path, drv):
    if len(drv.positions) == 0:
        raise ValidationError("no deformable object to sample", field="objects")
    save_points_ply(
        path,
        drv.positions,
        object_id=drv.object_ids.astype(np.int32),
        gaussian_index=drv.source_index.astype(np.int32),
        radius=drv.radii,
        density=drv.field.density,
        young_modulus=drv.field.young_modulus,
        poisson_ratio=drv.field.poisson_ratio,
    )


def make_camera(cfg, scene):
    """Camera from ``config.camera``; a missing eye or target is fitted to the scene bounds."""
    cam = cfg.camera
    up = np.asarray(cam.up, dtype=np.float64)
    up = up / np.linalg.norm(up)
    if cam.eye is not None and cam.target is not None:
        return CameraSpec.look_at(cam.eye, cam.target, up, cfg.width, cfg.height, cam.fov_y_deg)
    lo, hi = scene.bounds
    center = 0.5 * (lo + hi)
    radius = 0.5 * float(np.linalg.norm(hi - lo)) or 1.0
    side = np.array([0.0, -1.0, 0.0]) if abs(up[1]) < 0.9 else np.array([0.0, 0.0, 1.0])
    side = side - (side @ up) * up
    view = side / np.linalg.norm(side) + 0.35 * up
    view /= np.linalg.norm(view)
    half_y = np.radians(cam.fov_y_deg) / 2.0
    half = min(half_y, np.arctan(np.tan(half_y) * cfg.width / cfg.height))
    dist = 1.05 * radius / np.sin(half)
    target = center if cam.target is None else np.asarray(cam.target, dtype=np.float64)
    eye = target + view * dist if cam.eye is None else np.asarray(cam.eye, dtype=np.float64)
    return CameraSpec.look_at(eye, target, up, cfg.width, cfg.height, cam.fov_y_deg)


def _frames_dir(run):
    path = os.path.join(run.out, "frames")
    os.makedirs(path, exist_ok=True)
    return path


# ----------------------------------------------------------------------------
# commands


def _execute(command, run, body, need_manifest):
    report = RunReport(command, run)
    t0 = time.perf_counter()
    try:
        run.check(need_manifest)
        body(run, report)
        report.succeed()
    except Exception as exc:
        report.fail(exc)
        raise
    finally:
        report.data["timings"]["total"] = time.perf_counter() - t0
        if os.path.isdir(run.out):
            report.write()
    return report.data


def _simulate(run, report):
    inputs = _load_inputs(run, report, need_manifest=True)
    cfg = inputs.config
    scene = inputs.scene
    perceived = _perceive_all(run, inputs, report)
    drv = _sample_all(inputs, perceived, report)
    if run.dump_particles and len(drv.positions):
        _save_driving(os.path.join(run.out, "driving_particles.ply"), drv)
    state = None
    binding = None
    if len(drv.positions):
        forces = [(e.object_id, f) for e in inputs.manifest if e.object_id not in drv.colliders | drv.static
                  for f in e.force_specs]  # fmt: skip
        with report.stage("initialize"):
            volume_points = {oid: scene.centers[scene.object_ids == oid] for oid in np.unique(drv.object_ids)}
            state = initialize(drv.positions, drv.field, cfg, drv.object_ids, volume_points, forces, drv.domain)
            for oid in sorted(drv.colliders):
                report.current_object = oid
                nodes = mark_colliders(state.grid, scene.centers[scene.object_ids == oid])
                _object_record(report, oid)["collider_nodes"] = nodes
        with report.stage("bind"):
            if cfg.binding_bandwidth is not None:
                width = cfg.binding_bandwidth
            else:
                width = {int(o): float(drv.radii[drv.object_ids == o].mean()) for o in np.unique(drv.object_ids)}
            binding = build_binding(
                scene.centers, drv.positions, cfg.binding_neighbors, width, scene.object_ids, drv.object_ids,
                drv.colliders | drv.static,
            )  # fmt: skip
        g = state.grid
        report.data["simulation"] = {
            "particles": len(state.particles),
            "grid_resolution": g.resolution,
            "dx": g.dx,
            "domain_origin": [float(v) for v in g.origin],
            "domain_size": g.extent,
            "collider_nodes": int(g.collider.sum()),
            "frames_completed": 0,
            "substeps": 0,
            "time": 0.0,
        }
    else:
        report.data["simulation"] = {"particles": 0, "frames_completed": 0, "substeps": 0, "time": 0.0}
    with report.stage("render"):
        camera = make_camera(cfg, scene)
    frames_dir = _frames_dir(run)
    for f in range(cfg.frames):
        current = scene
        if state is not None:
            with report.stage("advance"):
                try:
                    advance_frame(state)
                except SimulationError as exc:
                    if exc.particle is not None:
                        report.current_object = int(state.particles.object_id[exc.particle])
                    raise
            with report.stage("bind"):
                fits = fit_rigid(binding, state.particles.x)
                current = apply_binding(scene, binding, fits, cfg.binding_mode, state.particles.F, cfg.sh_rotation)
        with report.stage("render"):
            image = render(current, camera, cfg.background)
        with report.stage("save"):
            name = FRAME_PATTERN.format(f)
            save_frame(image, os.path.join(frames_dir, name))
            if run.dump_particles and state is not None:
                pdir = os.path.join(run.out, "particles")
                os.makedirs(pdir, exist_ok=True)
                p = state.particles
                save_points_ply(
                    os.path.join(pdir, f"particles_{f:05d}.ply"), p.x, object_id=p.object_id.astype(np.int32),
                    vx=p.v[:, 0], vy=p.v[:, 1], vz=p.v[:, 2], det_F=np.linalg.det(p.F),
                )  # fmt: skip
        report.data["frames"].append(os.path.join("frames", name))
        sim = report.data["simulation"]
        sim["frames_completed"] = f + 1
        if state is not None:
            sim["substeps"] = state.substep_count
            sim["time"] = state.time
        log.info("frame %d/%d written", f + 1, cfg.frames)


def _perceive_cmd(run, report):
    inputs = _load_inputs(run, report, need_manifest=True)
    perceived = _perceive_all(run, inputs, report)
    pdir = os.path.join(run.out, "properties")
    os.makedirs(pdir, exist_ok=True)
    with report.stage("save"):
        for entry in inputs.manifest:
            report.current_object = entry.object_id
            data = perceived[entry.object_id].to_dict()
            data.update(object_id=entry.object_id, tag=entry.tag)
            path = os.path.join(pdir, f"object_{entry.object_id:04d}.json")
            with open(path, "w", encoding="utf-8") as fh:
                json.dump(data, fh, indent=2, sort_keys=True)
                fh.write("\n")
            _object_record(report, entry.object_id)["property_file"] = os.path.join("properties", os.path.basename(path))


def _sample_cmd(run, report):
    inputs = _load_inputs(run, report, need_manifest=True)
    perceived = _perceive_all(run, inputs, report)
    drv = _sample_all(inputs, perceived, report)
    with report.stage("save"):
        _save_driving(os.path.join(run.out, "driving_particles.ply"), drv)


def _render_cmd(run, report):
    inputs = _load_inputs(run, report, need_manifest=False)
    cfg = inputs.config
    with report.stage("render"):
        image = render(inputs.scene, make_camera(cfg, inputs.scene), cfg.background)
    with report.stage("save"):
        name = FRAME_PATTERN.format(0)
        save_frame(image, os.path.join(_frames_dir(run), name))
        report.data["frames"].append(os.path.join("frames", name))


def cmd_simulate(run):
    """Full pipeline: frames in ``<out>/frames`` and ``<out>/report.json``. Returns the report."""
    return _execute("simulate", run, _simulate, need_manifest=True)


def cmd_perceive(run):
    """Per-object property files ``<out>/properties/object_<id>.json``."""
    return _execute("perceive", run, _perceive_cmd, need_manifest=True)


def cmd_sample(run):
    """Driving particles of every deformable object in ``<out>/driving_particles.ply``."""
    return _execute("sample", run, _sample_cmd, need_manifest=True)


def cmd_render(run):
    """Static frame of the undeformed scene in ``<out>/frames/frame_00000.png``."""
    return _execute("render", run, _render_cmd, need_manifest=False)


COMMANDS = {"simulate": cmd_simulate, "perceive": cmd_perceive, "sample": cmd_sample, "render": cmd_render}

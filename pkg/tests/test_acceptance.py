"""One test per acceptance criterion, each reporting a PASS/FAIL line.

Tolerances are pinned here; the lines are repeated in the pytest terminal
summary under "acceptance criteria".
"""
import math
import time
from contextlib import contextmanager

import numpy as np
import pytest

import oracles
from conftest import record_criterion, write_json
from splatsim.binding import apply_binding, build_binding, fit_rigid
from splatsim.gaussians import SH_C0, CameraSpec, GaussianScene, eval_sh
from splatsim.materials import GeometricFieldModel, MaterialProperties, UniformFieldModel, FileFieldModel
from splatsim.materials import lame_from_young_poisson, mpdp_field, unit_mean
from splatsim.mpm import initialize, substep
from splatsim.pipeline import PipelineRun, cmd_simulate, read_report
from splatsim.renderer import render
from splatsim.sampling import PgasParams, adapt_radius, estimate_curvature, pgas_sample
from splatsim.scene_io import ForceSpec, SimConfig, save_splat_ply
from splatsim.synthetic import block_scene, concat, lattice

BALLISTIC_TOL = 1e-3
BALLISTIC_SECONDS = 60.0
MOMENTUM_TOL = 1e-6
MASS_TOL = 1e-9
REST_TOL = 1e-9
FREQ_RATIO = 2.0
FREQ_TOL = 0.15
GAP_MIN = 0.999
RADIUS_TOL = 1e-12
LAME_TOL = 1e-12
BINDING_TOL = 1e-9
COMPOSITE_TOL = 1e-6
MEAN_TOL = 1e-9
THROUGHPUT_SECONDS = 300.0


@contextmanager
def criterion(number, title):
    detail = {}
    try:
        yield detail
    except BaseException:
        record_criterion(number, title, False, detail)
        raise
    record_criterion(number, title, True, detail)


def test_criterion_01_config_fidelity():
    with criterion(1, "default config: 64^3 grid, 768 substeps/frame, dt 4.34e-5 s") as d:
        cfg = SimConfig()
        d.update(grid=cfg.grid_resolution, substeps=cfg.substeps_per_frame, dt=cfg.dt_substep)
        assert cfg.grid_resolution == 64
        assert cfg.substeps_per_frame == 768
        assert cfg.dt_substep == 4.34e-5


def test_criterion_02_ballistic():
    with criterion(2, "free-fall COM drop matches g T^2 / 2 over 0.5 s") as d:
        cfg = SimConfig(domain_min=(0, 0, 0), domain_size=2.0)
        x = lattice((0.9, 0.9, 1.6), (1.1, 1.1, 1.8), 17)
        state = initialize(x, mpdp_field(x, MaterialProperties(1000.0, 1e5, 0.3)), cfg)
        steps = int(round(0.5 / cfg.dt_substep))
        z0 = state.center_of_mass()[2]
        t0 = time.perf_counter()
        for _ in range(steps):
            substep(state)
        elapsed = time.perf_counter() - t0
        expected = oracles.free_fall_drop(9.8, steps * cfg.dt_substep)
        err = abs((z0 - state.center_of_mass()[2]) / expected - 1.0)
        d.update(particles=len(x), substeps=steps, rel_err=f"{err:.2e}", seconds=f"{elapsed:.1f}")
        assert len(x) >= 4900
        assert err < BALLISTIC_TOL
        assert elapsed < BALLISTIC_SECONDS


def test_criterion_03_conservation():
    with criterion(3, "momentum drift < 1e-6 per substep, grid mass match < 1e-9 over 1k substeps") as d:
        cfg = SimConfig(grid_resolution=32, gravity=(0, 0, 0), domain_min=(0, 0, 0), domain_size=1.0)
        rng = np.random.default_rng(0)
        x = lattice((0.4,) * 3, (0.6,) * 3, 12) + rng.uniform(-0.002, 0.002, (1728, 3))
        state = initialize(x, mpdp_field(x, MaterialProperties(1000.0, 2e4, 0.3)), cfg)
        r = x - x.mean(axis=0)
        state.particles.v[:] = np.array([0.3, -0.2, 0.1]) + np.cross([0, 0, 4.0], r) + 3.0 * r * [1, -1, 0.5]
        P0 = state.momentum()
        P = P0
        drift = mass_err = 0.0
        for _ in range(1000):
            substep(state)
            Pn = state.momentum()
            drift = max(drift, float(np.linalg.norm(Pn - P) / np.linalg.norm(P0)))
            mass_err = max(mass_err, abs(state.grid_mass() - state.total_mass()) / state.total_mass())
            P = Pn
        strain = float(np.abs(np.linalg.det(state.particles.F) - 1).max())
        d.update(momentum_drift=f"{drift:.1e}", mass_err=f"{mass_err:.1e}", max_volume_change=f"{strain:.2f}")
        assert strain > 0.01  # the blob really deformed
        assert drift < MOMENTUM_TOL
        assert mass_err < MASS_TOL


def test_criterion_04_rest_stability():
    with criterion(4, "stress-free rest state moves < 1e-9 over 100 substeps") as d:
        cfg = SimConfig(grid_resolution=32, gravity=(0, 0, 0), domain_min=(0, 0, 0), domain_size=1.0)
        rng = np.random.default_rng(1)
        x = lattice((0.35,) * 3, (0.65,) * 3, 12) + rng.uniform(-0.003, 0.003, (1728, 3))
        state = initialize(x, mpdp_field(x, MaterialProperties(1000.0, 1e6, 0.4)), cfg)
        x0 = state.particles.x.copy()
        for _ in range(100):
            substep(state)
        moved = float(np.abs(state.particles.x - x0).max())
        d.update(max_displacement=f"{moved:.1e}")
        assert moved < REST_TOL


def _ping(E, steps=12000):
    """Lateral COM trace of a beam clamped in the floor wall after a tip impulse."""
    size, res = 0.64, 32
    dx = size / res
    cfg = SimConfig(grid_resolution=res, gravity=(0, 0, 0), damping=1.0, domain_min=(0, 0, 0), domain_size=size)
    h, L, s = 0.08, 0.32, dx / 2
    lo = np.array([0.32 - h / 2 + s / 2, 0.32 - h / 2 + s / 2, dx * 0.5 + s / 2])
    hi = np.array([0.32 + h / 2 - s / 2, 0.32 + h / 2 - s / 2, dx * 0.5 + L - s / 2])
    x = lattice(lo, hi, np.round((hi - lo) / s).astype(int) + 1)
    tip = ForceSpec("impulse", (0.32, 0.32, float(x[:, 2].max())), (1, 0, 0), 0.002, radius=0.06)
    state = initialize(x, mpdp_field(x, MaterialProperties(1000.0, E, 0.3)), cfg, forces=[(0, tip)])
    trace = np.empty(steps)
    for i in range(steps):
        substep(state)
        trace[i] = state.particles.x[:, 0].mean()
    return oracles.dominant_frequency(trace, cfg.dt_substep)


def test_criterion_05_stiffness_frequency_law():
    with criterion(5, "clamped beam: frequency(4E) / frequency(E) = 2 +- 15%") as d:
        f1 = _ping(4e6)
        f2 = _ping(16e6)
        ratio = f2 / f1
        d.update(f_E=f"{f1:.2f} Hz", f_4E=f"{f2:.2f} Hz", ratio=f"{ratio:.3f}")
        assert abs(ratio - FREQ_RATIO) <= FREQ_TOL * FREQ_RATIO


def test_criterion_06_pgas_properties():
    with criterion(6, "PGAS over 1000 clouds: spacing, E-monotone count, determinism; radius examples") as d:
        worst_gap = math.inf
        for seed in range(1000):
            rng = np.random.default_rng(seed)
            n = int(rng.integers(20, 150))
            pts = rng.uniform(size=(n, 3))
            E = 1e6 * 10 ** rng.uniform(-4, 1, n)
            params = PgasParams(base_radius=float(rng.uniform(0.05, 0.3)), rng_seed=seed)
            s = pgas_sample(pts, E, params)
            if len(s) > 1:
                worst_gap = min(worst_gap, oracles.min_scaled_gap(pts[s.indices], s.radii))
            softer = pgas_sample(pts, E * float(rng.uniform(1e-3, 1.0)), params)
            assert len(softer) >= len(s), f"seed {seed}"
            again = pgas_sample(pts, E, params)
            assert np.array_equal(again.indices, s.indices), f"seed {seed}"
        p = PgasParams(base_radius=1.0)
        r_flat = adapt_radius(1e3, 0.0, p)
        d.update(min_scaled_gap=f"{worst_gap:.4f}", radius_example=r_flat)
        assert worst_gap >= GAP_MIN
        assert abs(r_flat - 0.1) <= RADIUS_TOL
        assert abs(adapt_radius(1e6, 0.0, p) - 1.0) <= RADIUS_TOL
        assert abs(adapt_radius(1e3, 1 / 3, p) - math.sqrt(0.001)) <= RADIUS_TOL


def test_criterion_07_curvature_oracles():
    with criterion(7, "curvature: plane < 1e-6, tetrahedron 1/3 +- 1e-9, isotropic 1/3 +- 0.05") as d:
        rng = np.random.default_rng(7)
        plane = np.c_[rng.uniform(size=(400, 2)), np.zeros(400)] @ oracles.axis_angle_matrix([1, -1, 2], 0.9).T
        glob = PgasParams(curvature_mode="global")
        k_plane = max(estimate_curvature(plane, glob).raw.max(), estimate_curvature(plane).raw.max())
        k_tet = estimate_curvature(oracles.regular_tetrahedron(), glob).raw[0]
        k_iso = estimate_curvature(rng.normal(size=(10_000, 3)), glob).raw[0]
        d.update(plane=f"{k_plane:.1e}", tetrahedron=f"{k_tet:.12f}", isotropic=f"{k_iso:.4f}")
        assert k_plane < 1e-6
        assert abs(k_tet - 1 / 3) <= 1e-9
        assert abs(k_iso - 1 / 3) <= 0.05


def test_criterion_08_lame_conversion():
    with criterion(8, "E=2.6, nu=0.3 -> mu=1.0, lambda=1.5 within 1e-12") as d:
        p = lame_from_young_poisson(2.6, 0.3)
        d.update(mu=repr(p.mu), lam=repr(p.lam))
        assert abs(p.mu - 1.0) <= LAME_TOL
        assert abs(p.lam - 1.5) <= LAME_TOL


def test_criterion_09_binding_exactness():
    with criterion(9, "100 global rigid motions reproduced within 1e-9, covariances SPD") as d:
        rng = np.random.default_rng(9)
        n = 300
        scene = GaussianScene(rng.uniform(0, 1, (n, 3)), rng.normal(size=(n, 4)), np.exp(rng.uniform(-4, -2, (n, 3))),
                              rng.uniform(0.1, 0.9, n), rng.normal(size=(n, 4, 3)))  # fmt: skip
        rest = rng.uniform(-0.05, 1.05, (500, 3))
        binding = build_binding(scene.centers, rest, k=8, bandwidth=0.05)
        covs = scene.covariances()
        worst_c = worst_s = 0.0
        min_eig = math.inf
        for _ in range(100):
            R, t = oracles.random_rotation(rng), rng.normal(size=3) * 5
            moved = apply_binding(scene, binding, fit_rigid(binding, rest @ R.T + t))
            worst_c = max(worst_c, float(np.abs(moved.centers - (scene.centers @ R.T + t)).max()))
            mc = moved.covariances()
            worst_s = max(worst_s, float(np.abs(mc - R @ covs @ R.T).max()))
            min_eig = min(min_eig, float(np.linalg.eigvalsh(mc).min()))
        d.update(center_err=f"{worst_c:.1e}", cov_err=f"{worst_s:.1e}", min_eig=f"{min_eig:.1e}")
        assert worst_c <= BINDING_TOL
        assert worst_s <= BINDING_TOL
        assert min_eig > 0


def test_criterion_10_renderer_oracles():
    with criterion(10, "renderer: background, exact SH colour, two-splat composite, permutation bit-identity") as d:
        cam = CameraSpec(40.0, 40.0, 16, 12, 32, 24, np.eye(4))
        bg = np.array([0.2, 0.4, 0.6])
        empty = GaussianScene(np.zeros((0, 3)), np.zeros((0, 4)), np.zeros((0, 3)), np.zeros(0), np.zeros((0, 1, 3)))
        assert (render(empty, cam, bg).pixels == bg).all()
        sh = np.random.default_rng(10).normal(scale=0.2, size=(1, 4, 3))
        one = GaussianScene([[0.0, 0, 2.0]], [[1.0, 0, 0, 0]], [[0.05] * 3], [1.0], sh)
        want = np.clip(eval_sh(sh[0], np.array([0.0, 0.0, 1.0])), 0, 1)
        assert render(one, cam, bg).pixels[12, 16].tolist() == want.tolist()
        A, B = np.array([0.9, 0.1, 0.3]), np.array([0.2, 0.7, 0.5])
        two_sh = np.stack([(B - 0.5) / SH_C0, (A - 0.5) / SH_C0])[:, None, :]
        two = GaussianScene([[0, 0, 3.0], [0, 0, 2.0]], np.tile([1.0, 0, 0, 0], (2, 1)), np.full((2, 3), 0.05),
                            [1.0, 0.5], two_sh)  # fmt: skip
        err = float(np.abs(render(two, cam, bg).pixels[12, 16] - oracles.composite_front_to_back([A, B], [0.5, 1.0], bg)).max())
        rng = np.random.default_rng(11)
        m = 200
        many = GaussianScene(np.c_[rng.uniform(-0.5, 0.5, (m, 2)), rng.uniform(1.5, 3, m)], rng.normal(size=(m, 4)),
                             np.exp(rng.uniform(-4, -2, (m, 3))), rng.uniform(0.05, 1, m), rng.normal(size=(m, 9, 3)))  # fmt: skip
        base = render(many, cam, bg).pixels
        identical = all(np.array_equal(render(many.subset(rng.permutation(m)), cam, bg).pixels, base) for _ in range(5))
        d.update(composite_err=f"{err:.1e}", permutation_identical=identical)
        assert err <= COMPOSITE_TOL
        assert identical


def test_criterion_11_mpdp_contract():
    with criterion(11, "MPDP: means within 1e-9 for any model, scaling by s is element-wise exact") as d:
        rng = np.random.default_rng(12)
        pts = rng.uniform(size=(3000, 3)) * [1, 1, 0.2]
        pts = pts[(pts[:, 0] < 0.4) | (pts[:, 1] < 0.4)]
        mean = MaterialProperties(1100.0, 5.5e6, 0.47)
        models = [UniformFieldModel(), GeometricFieldModel(0.2), GeometricFieldModel(0.9),
                  FileFieldModel(rng.uniform(0.01, 10, (len(pts), 3)))]  # fmt: skip
        worst = 0.0
        for model in models:
            f = mpdp_field(pts, mean, model)
            for got, want in ((f.density, mean.density), (f.young_modulus, mean.young_modulus),
                              (f.poisson_ratio, mean.poisson_ratio)):  # fmt: skip
                worst = max(worst, abs(got.mean() - want) / want)
            mult = unit_mean(model.multipliers(pts)[:, 1])
            for s in (2.0, 0.37, 1e3, 7.123):
                scaled = mpdp_field(pts, mean.scaled(young_modulus=s), model).young_modulus
                assert np.array_equal(scaled, mult * (mean.young_modulus * s))
        d.update(mean_rel_err=f"{worst:.1e}")
        assert worst <= MEAN_TOL


def test_criterion_12_offline_determinism(scene_files):
    with criterion(12, "two offline simulate runs: byte-identical frames, reports equal modulo timings") as d:
        reports, frames = [], []
        for name in ("a", "b"):
            out = scene_files["dir"] / name
            cmd_simulate(PipelineRun(scene_files["scene"], str(out), scene_files["manifest"], scene_files["config"],
                                     seed=5, threads=1))  # fmt: skip
            rep = read_report(out)
            rep.pop("timings")
            reports.append(rep)
            frames.append([(out / p).read_bytes() for p in rep["frames"]])
        d.update(frames=len(frames[0]))
        assert len(frames[0]) == 3
        assert frames[0] == frames[1]
        assert reports[0] == reports[1]


def test_criterion_13_desk_scale_throughput(tmp_path):
    with criterion(13, "10k particles, 64^3 grid, 24 x 96 substeps, 320x240 frames in < 300 s") as d:
        scene = concat([
            block_scene((0, 0, 0.15), (0.3, 0.3, 0.3), (22, 22, 21), object_id=0),
            block_scene((0, 0, -0.02), (0.6, 0.6, 0.04), (24, 24, 2), color=(0.5, 0.45, 0.4), object_id=1),
        ])  # fmt: skip
        save_splat_ply(scene, tmp_path / "scene.ply")
        manifest = {"objects": [
            {"object_id": 0, "tag": "rubber", "force_specs": [
                {"kind": "impulse", "application_point": [0, 0, 0.3], "direction": [1, 0, 0], "magnitude": 0.05}]},
            {"object_id": 1, "tag": "wooden table"},
        ]}  # fmt: skip
        config = {"substeps_per_frame": 96, "frames": 24, "grid_resolution": 64, "width": 320, "height": 240}
        run = PipelineRun(str(tmp_path / "scene.ply"), str(tmp_path / "out"), write_json(tmp_path / "m.json", manifest),
                          write_json(tmp_path / "c.json", config))  # fmt: skip
        t0 = time.perf_counter()
        rep = cmd_simulate(run)
        elapsed = time.perf_counter() - t0
        particles = rep["simulation"]["particles"]
        d.update(particles=particles, frames=len(rep["frames"]), seconds=f"{elapsed:.1f}")
        assert particles >= 10_000
        assert rep["simulation"]["grid_resolution"] == 64 and rep["simulation"]["substeps"] == 24 * 96
        assert len(rep["frames"]) == 24
        assert elapsed < THROUGHPUT_SECONDS

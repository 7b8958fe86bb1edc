import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from splatsim.errors import SceneIOError, ValidationError
from splatsim.materials import (
    FileFieldModel,
    GeometricFieldModel,
    MaterialProperties,
    PropertyField,
    UniformFieldModel,
    lame_from_young_poisson,
    load_field_model,
    make_field_model,
    mpdp_field,
    save_field_model,
)

RUBBER = MaterialProperties(1100.0, 2e6, 0.45, material_name="rubber")


def _l_shape(rng, n=2000):
    pts = rng.uniform(size=(n * 2, 3)) * [1.0, 1.0, 0.2]
    keep = (pts[:, 0] < 0.4) | (pts[:, 1] < 0.4)
    return pts[keep][:n]


def test_lame_examples():
    p = lame_from_young_poisson(1.0, 0.0)
    assert (p.mu, p.lam) == (0.5, 0.0)
    p = lame_from_young_poisson(2.6, 0.3)
    mu, lam = oracles.lame_exact("2.6", "0.3")
    assert (mu, lam) == (1, 1.5)
    assert p.mu == pytest.approx(float(mu), rel=1e-15)
    assert p.lam == pytest.approx(float(lam), rel=1e-15)


def test_lame_diverges_toward_incompressible():
    assert lame_from_young_poisson(1.0, 0.499).lam > lame_from_young_poisson(1.0, 0.49).lam > 0
    with pytest.raises(ValidationError):
        lame_from_young_poisson(1.0, 0.5)
    with pytest.raises(ValidationError):
        lame_from_young_poisson(-1.0, 0.3)


@given(E=st.floats(1e-3, 1e12), nu=st.floats(0, 0.499))
def test_lame_matches_exact_rational(E, nu):
    p = lame_from_young_poisson(E, nu)
    mu, lam = oracles.lame_exact(E, nu)
    assert p.mu == pytest.approx(float(mu), rel=1e-12)
    assert p.lam == pytest.approx(float(lam), rel=1e-12, abs=1e-300)
    assert p.mu > 0 and p.lam >= 0


def test_lame_is_elementwise():
    p = lame_from_young_poisson([1.0, 2.6], [0.0, 0.3])
    np.testing.assert_allclose(p.mu, [0.5, 1.0])
    np.testing.assert_allclose(p.lam, [0.0, 1.5])


def test_material_properties_validation():
    with pytest.raises(ValidationError):
        MaterialProperties(0.0, 1e6, 0.3)
    with pytest.raises(ValidationError):
        MaterialProperties(1.0, 0.0, 0.3)
    with pytest.raises(ValidationError):
        MaterialProperties(1.0, 1e6, 0.5)
    assert RUBBER.scaled(young_modulus=2).young_modulus == 4e6


def test_uniform_model_is_exactly_the_mean(rng):
    f = mpdp_field(rng.uniform(size=(50, 3)), RUBBER, UniformFieldModel())
    assert f.provenance == "uniform"
    assert (f.density == 1100.0).all() and (f.young_modulus == 2e6).all() and (f.poisson_ratio == 0.45).all()


def _models(rng, n):
    return [UniformFieldModel(), GeometricFieldModel(spread=0.2), GeometricFieldModel(spread=0.9),
            FileFieldModel(rng.uniform(0.1, 5.0, size=(n, 3)))]  # fmt: skip


def test_any_model_preserves_the_mean(rng):
    pts = _l_shape(rng, 700)
    for model in _models(rng, len(pts)):
        f = mpdp_field(pts, RUBBER, model)
        for got, want in ((f.density, 1100.0), (f.young_modulus, 2e6), (f.poisson_ratio, 0.45)):
            assert abs(got.mean() - want) <= 1e-9 * want
        assert f.poisson_ratio.max() <= 0.49 + 1e-15 and f.poisson_ratio.min() >= 0
        assert f.density.min() > 0 and f.young_modulus.min() > 0


def test_scaling_mean_scales_field_exactly(rng):
    pts = _l_shape(rng, 400)
    model = GeometricFieldModel()
    base = mpdp_field(pts, RUBBER, model)
    for s in (2.0, 0.125, 1024.0):
        f = mpdp_field(pts, RUBBER.scaled(young_modulus=s), model)
        np.testing.assert_array_equal(f.young_modulus, base.young_modulus * s)
    # other factors differ only by the rounding of the two products
    f = mpdp_field(pts, RUBBER.scaled(young_modulus=3.7), model)
    np.testing.assert_allclose(f.young_modulus, base.young_modulus * 3.7, rtol=5e-16)


def test_builtin_model_on_l_shape_varies_within_spread(rng):
    pts = _l_shape(rng)
    for spread in (0.2, 0.3):
        E = mpdp_field(pts, RUBBER, GeometricFieldModel(spread=spread)).young_modulus
        cov = E.std() / E.mean()
        assert 0.02 < cov <= spread
    f = mpdp_field(pts, RUBBER, GeometricFieldModel())
    assert f.provenance == "mpdp_builtin"
    # stiffer toward the interior of the arm junction than at the far tips
    core = np.linalg.norm(pts - pts.mean(axis=0), axis=1)
    assert f.young_modulus[core < np.quantile(core, 0.1)].mean() > f.young_modulus[core > np.quantile(core, 0.9)].mean()


def test_field_is_deterministic(rng):
    pts = _l_shape(rng, 300)
    a = mpdp_field(pts, RUBBER, GeometricFieldModel())
    b = mpdp_field(pts.copy(), RUBBER, GeometricFieldModel())
    np.testing.assert_array_equal(a.young_modulus, b.young_modulus)


def test_rigid_objects_get_uniform_field(rng):
    steel = MaterialProperties(7800, 2e11, 0.3, rigid=True)
    f = mpdp_field(rng.uniform(size=(20, 3)), steel, GeometricFieldModel())
    assert f.provenance == "uniform" and (f.young_modulus == 2e11).all()


def test_field_errors():
    with pytest.raises(ValidationError):
        mpdp_field(np.zeros((0, 3)), RUBBER)
    with pytest.raises(ValidationError):
        mpdp_field(np.zeros((4, 3)), RUBBER, FileFieldModel(np.ones((5, 3))))
    with pytest.raises(ValidationError):
        FileFieldModel(-np.ones((5, 3)))
    with pytest.raises(ValidationError):
        GeometricFieldModel(spread=1.0)


def test_concatenate_fields():
    a = PropertyField(np.ones(2), np.ones(2), np.zeros(2), "uniform")
    b = PropertyField(np.ones(3), np.ones(3), np.zeros(3), "mpdp_builtin")
    assert len(PropertyField.concatenate([a, b])) == 5
    assert PropertyField.concatenate([a, b]).provenance == "mixed"


def _write_rows(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "rho_mult", "E_mult", "nu_mult"])
        w.writerows(rows)


def test_file_of_ones_equals_uniform(tmp_path, rng):
    pts = rng.uniform(size=(30, 3))
    path = tmp_path / "ones.csv"
    _write_rows(path, [[i, 1.0, 1.0, 1.0] for i in range(30)])
    f = mpdp_field(pts, RUBBER, load_field_model(path))
    u = mpdp_field(pts, RUBBER, UniformFieldModel())
    np.testing.assert_array_equal(f.young_modulus, u.young_modulus)
    assert f.provenance == "mpdp_file"


def test_file_with_mean_two_is_renormalised(tmp_path, rng):
    mult = 2.0 * rng.uniform(0.5, 1.5, size=(40, 3))
    mult /= mult.mean(axis=0) / 2.0
    path = tmp_path / "m.csv"
    save_field_model(path, mult)
    f = mpdp_field(rng.uniform(size=(40, 3)), RUBBER, load_field_model(path))
    assert f.young_modulus.mean() == pytest.approx(2e6, rel=1e-12)
    np.testing.assert_allclose(f.young_modulus, 2e6 * mult[:, 1] / 2.0, rtol=1e-12)


def test_shuffled_rows_give_identical_field(tmp_path, rng):
    mult = rng.uniform(0.5, 1.5, size=(25, 3))
    rows = [[i, *(repr(float(v)) for v in mult[i])] for i in range(25)]
    _write_rows(tmp_path / "a.csv", rows)
    _write_rows(tmp_path / "b.csv", [rows[i] for i in rng.permutation(25)])
    pts = rng.uniform(size=(25, 3))
    a = mpdp_field(pts, RUBBER, load_field_model(tmp_path / "a.csv"))
    b = mpdp_field(pts, RUBBER, load_field_model(tmp_path / "b.csv"))
    np.testing.assert_array_equal(a.young_modulus, b.young_modulus)
    np.testing.assert_array_equal(a.poisson_ratio, b.poisson_ratio)


def test_field_file_errors(tmp_path):
    path = tmp_path / "bad.csv"
    _write_rows(path, [[0, 1.0, -1.0, 1.0]])
    with pytest.raises(ValidationError, match="negative"):
        load_field_model(path)
    _write_rows(path, [[0, 1, 1, 1], [2, 1, 1, 1]])
    with pytest.raises(ValidationError):
        load_field_model(path)
    path.write_text("i,a,b,c\n0,1,1,1\n")
    with pytest.raises(ValidationError):
        load_field_model(path)
    with pytest.raises(SceneIOError):
        load_field_model(tmp_path / "missing.csv")
    assert isinstance(make_field_model("uniform"), UniformFieldModel)
    assert make_field_model("builtin", 0.1).spread == 0.1

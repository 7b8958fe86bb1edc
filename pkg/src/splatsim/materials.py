"""Material records, elastic constants and per-particle property fields.

A property field is a unit-mean multiplier field (one multiplier per particle
and per property) scaled element-wise by the object's mean properties. The
multiplier field comes from a :class:`FieldModel`:

* :class:`UniformFieldModel` - all ones.
* :class:`GeometricFieldModel` - smooth function of local geometry.
* :class:`FileFieldModel` - replays multipliers produced elsewhere (CSV).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import SceneIOError, ValidationError

NU_MAX_FIELD = 0.49
PROVENANCES = ("uniform", "mpdp_builtin", "mpdp_file")


@dataclass
class MaterialProperties:
    density: float
    young_modulus: float
    poisson_ratio: float
    rigid: bool = False
    material_name: str = ""

    def __post_init__(self):
        self.density = float(self.density)
        self.young_modulus = float(self.young_modulus)
        self.poisson_ratio = float(self.poisson_ratio)
        self.rigid = bool(self.rigid)
        if not self.density > 0:
            raise ValidationError("density must be > 0", field="density")
        if not self.young_modulus > 0:
            raise ValidationError("young_modulus must be > 0", field="young_modulus")
        if not 0 <= self.poisson_ratio < 0.5:
            raise ValidationError("poisson_ratio must satisfy 0 <= nu < 0.5", field="poisson_ratio")

    def scaled(self, density=1.0, young_modulus=1.0):
        return MaterialProperties(
            self.density * density, self.young_modulus * young_modulus, self.poisson_ratio, self.rigid, self.material_name
        )


@dataclass
class LameParameters:
    mu: np.ndarray
    lam: np.ndarray


def lame_from_young_poisson(E, nu):
    """Lame constants ``mu = E/(2(1+nu))``, ``lam = E nu/((1+nu)(1-2nu))``.

    Works element-wise on arrays.
    """
    E = np.asarray(E, dtype=np.float64)
    nu = np.asarray(nu, dtype=np.float64)
    if np.any(nu >= 0.5):
        raise ValidationError("poisson ratio >= 0.5 is the incompressible limit", field="poisson_ratio")
    if np.any(nu < 0) or np.any(E <= 0):
        raise ValidationError("need E > 0 and nu >= 0", field="young_modulus")
    mu = E / (2.0 * (1.0 + nu))
    lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    if mu.ndim == 0:
        return LameParameters(float(mu), float(lam))
    return LameParameters(mu, lam)


@dataclass
class PropertyField:
    density: np.ndarray
    young_modulus: np.ndarray
    poisson_ratio: np.ndarray
    provenance: str = "uniform"

    def __len__(self):
        return len(self.density)

    def lame(self):
        return lame_from_young_poisson(self.young_modulus, self.poisson_ratio)

    @classmethod
    def concatenate(cls, fields):
        fields = list(fields)
        return cls(
            np.concatenate([f.density for f in fields]),
            np.concatenate([f.young_modulus for f in fields]),
            np.concatenate([f.poisson_ratio for f in fields]),
            fields[0].provenance if len({f.provenance for f in fields}) == 1 else "mixed",
        )


def unit_mean(m):
    """Rescale positive multipliers so their arithmetic mean is exactly 1 (to rounding)."""
    m = np.asarray(m, dtype=np.float64)
    m = m / m.mean()
    # one refinement pass absorbs the rounding left by the division
    return m / m.mean()


def _cap_unit_mean(m, cap, iters=200):
    """Unit-mean multipliers with every entry <= ``cap`` (cap >= 1).

    Excess above the cap is redistributed proportionally over uncapped
    entries until nothing exceeds it.
    """
    m = unit_mean(m)
    if cap <= 1.0:
        return np.ones_like(m)
    for _ in range(iters):
        over = m > cap
        if not over.any():
            break
        m = np.where(over, cap, m)
        free = ~over & (m < cap)
        deficit = len(m) - m.sum()
        if not free.any():
            break
        m[free] *= 1.0 + deficit / m[free].sum()
    m = np.minimum(m, cap)
    # exact mean fix-up on the entries with headroom
    free = m < cap
    if free.any():
        m[free] += (len(m) - m.sum()) / free.sum()
    return m


class FieldModel:
    """Produces ``(N, 3)`` positive multipliers (rho, E, nu) for particle positions."""

    provenance = "uniform"

    def multipliers(self, positions):
        raise NotImplementedError


class UniformFieldModel(FieldModel):
    provenance = "uniform"

    def multipliers(self, positions):
        return np.ones((len(positions), 3))


class GeometricFieldModel(FieldModel):
    """Smooth multipliers from normalised local geometry.

    Features per particle: local surface variation, height along ``up`` and
    distance to the centroid, each standardised over the object. Stiffness
    rises toward the core and drops at extremities and curved regions;
    density and Poisson ratio vary with a quarter of the spread. Multipliers
    are ``1 + spread * u`` with ``|u| <= 1`` and ``mean(u) = 0``, so the
    coefficient of variation of E never exceeds ``spread``.
    """

    provenance = "mpdp_builtin"

    def __init__(self, spread=0.2, neighbors=16, up=(0.0, 0.0, 1.0)):
        if not 0 <= spread < 1:
            raise ValidationError("spread must lie in [0, 1)", field="spread")
        self.spread = float(spread)
        self.neighbors = int(neighbors)
        self.up = np.asarray(up, dtype=np.float64) / np.linalg.norm(up)

    def features(self, positions):
        pts = np.asarray(positions, dtype=np.float64)
        n = len(pts)
        centered = pts - pts.mean(axis=0)
        dist = np.linalg.norm(centered, axis=1)
        height = centered @ self.up
        if n >= 4:
            k = min(self.neighbors, n)
            _, nbr = cKDTree(pts).query(pts, k=k)
            hood = pts[nbr] - pts[nbr].mean(axis=1, keepdims=True)
            evals = np.linalg.eigvalsh(np.einsum("nki,nkj->nij", hood, hood))
            tot = evals.sum(axis=1)
            curv = np.where(tot > 0, evals[:, 0] / np.where(tot > 0, tot, 1.0), 0.0)
        else:
            curv = np.zeros(n)

        def standardize(f):
            s = f.std()
            return (f - f.mean()) / s if s > 0 else np.zeros_like(f)

        return standardize(curv), standardize(height), standardize(dist)

    @staticmethod
    def _bounded(g):
        u = np.tanh(g)
        u = u - u.mean()
        peak = np.abs(u).max()
        return u / peak if peak > 0 else u

    def multipliers(self, positions):
        curv, height, dist = self.features(positions)
        stiff = self._bounded(-0.8 * dist - 0.6 * curv)
        dense = self._bounded(-0.5 * height - 0.3 * dist)
        ratio = self._bounded(0.5 * curv - 0.3 * dist)
        s = self.spread
        return np.stack([1 + 0.25 * s * dense, 1 + s * stiff, 1 + 0.25 * s * ratio], axis=1)


class FileFieldModel(FieldModel):
    """Replays per-particle multipliers keyed by particle index."""

    provenance = "mpdp_file"

    def __init__(self, table):
        table = np.asarray(table, dtype=np.float64)
        if table.ndim != 2 or table.shape[1] != 3:
            raise ValidationError("field table must be (N, 3)", field="multipliers")
        if np.any(table < 0) or not np.all(np.isfinite(table)):
            raise ValidationError("multipliers must be finite and non-negative", field="multipliers")
        if np.any(table.sum(axis=0) == 0):
            raise ValidationError("a multiplier column is all zero", field="multipliers")
        self.table = table / table.mean(axis=0)

    def multipliers(self, positions):
        if len(positions) != len(self.table):
            raise ValidationError(
                f"field model has {len(self.table)} rows but there are {len(positions)} particles", field="index"
            )
        return self.table.copy()


def load_field_model(path):
    """Read a ``index,rho_mult,E_mult,nu_mult`` CSV into a :class:`FileFieldModel`."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            expected = ["index", "rho_mult", "E_mult", "nu_mult"]
            if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != expected:
                raise ValidationError(f"field model header must be {','.join(expected)}", field="header")
            rows = {}
            for line, row in enumerate(reader, start=2):
                try:
                    idx = int(row["index"])
                    vals = [float(row[k]) for k in expected[1:]]
                except (TypeError, ValueError):
                    raise ValidationError(f"line {line}: malformed row", field="row") from None
                if any(v < 0 for v in vals):
                    raise ValidationError(f"line {line}: negative multiplier", field="multiplier")
                if idx in rows:
                    raise ValidationError(f"line {line}: duplicate index {idx}", field="index")
                rows[idx] = vals
    except OSError as exc:
        raise SceneIOError(f"cannot read field model {path}: {exc}") from exc
    n = len(rows)
    if sorted(rows) != list(range(n)):
        raise ValidationError("field model indices must cover 0..N-1", field="index")
    return FileFieldModel(np.array([rows[i] for i in range(n)]))


def save_field_model(path, multipliers):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "rho_mult", "E_mult", "nu_mult"])
        for i, row in enumerate(np.asarray(multipliers)):
            w.writerow([i] + [repr(float(v)) for v in row])


def make_field_model(spec, spread=0.2):
    """Field model from a config string: ``uniform``, ``builtin`` or a CSV path."""
    if spec == "uniform":
        return UniformFieldModel()
    if spec == "builtin":
        return GeometricFieldModel(spread=spread)
    return load_field_model(spec)


def mpdp_field(positions, mean, model=None):
    """Per-particle properties = unit-mean multipliers * object mean.

    Poisson-ratio multipliers are capped so no particle exceeds 0.49 while
    the mean stays exact. Rigid objects always get a uniform field.
    """
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    n = len(positions)
    if n == 0:
        raise ValidationError("cannot build a property field for zero particles", field="positions")
    if model is None or mean.rigid:
        model = UniformFieldModel()
    m = np.asarray(model.multipliers(positions), dtype=np.float64)
    if m.shape != (n, 3) or np.any(m <= 0) or not np.all(np.isfinite(m)):
        raise ValidationError("field model must return positive finite (N, 3) multipliers", field="multipliers")
    rho_m = unit_mean(m[:, 0])
    E_m = unit_mean(m[:, 1])
    if mean.poisson_ratio > 0:
        nu_m = _cap_unit_mean(m[:, 2], NU_MAX_FIELD / mean.poisson_ratio)
    else:
        nu_m = np.ones(n)
    return PropertyField(
        density=rho_m * mean.density,
        young_modulus=E_m * mean.young_modulus,
        poisson_ratio=nu_m * mean.poisson_ratio,
        provenance=model.provenance,
    )

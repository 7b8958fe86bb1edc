"""Parsing physical values out of provider replies."""
from __future__ import annotations

import json
import re

from ..errors import ValidationError

PRESSURE_UNITS = {"pa": 1.0, "kpa": 1e3, "mpa": 1e6, "gpa": 1e9, "n/m2": 1.0, "n/m^2": 1.0}
DENSITY_UNITS = {"kg/m3": 1.0, "kg/m^3": 1.0, "g/cm3": 1e3, "g/cm^3": 1e3, "g/cc": 1e3, "g/ml": 1e3}
PROPERTY_NAMES = ("density", "young_modulus", "poisson_ratio")
_ALIASES = {
    "density": "density",
    "rho": "density",
    "ρ": "density",
    "young_modulus": "young_modulus",
    "youngs_modulus": "young_modulus",
    "young's_modulus": "young_modulus",
    "e": "young_modulus",
    "elastic_modulus": "young_modulus",
    "stiffness": "young_modulus",
    "poisson_ratio": "poisson_ratio",
    "poissons_ratio": "poisson_ratio",
    "poisson's_ratio": "poisson_ratio",
    "nu": "poisson_ratio",
    "ν": "poisson_ratio",
}

_NUMBER = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_QUANTITY = re.compile(rf"^\s*({_NUMBER})\s*(?:[x×*]\s*10\s*\^\s*([-+]?\d+))?\s*(.*?)\s*$")
_FENCE = re.compile(r"```(?:json|JSON)?\s*\n?(.*?)```", re.DOTALL)


def _canon_unit(unit):
    return unit.strip().lower().replace("³", "3").replace("²", "2").replace(" ", "")


def parse_quantity(value, kind):
    """Convert ``value`` (number or text such as ``"1 MPa"``) to SI.

    ``kind`` is one of ``density`` (kg/m^3), ``young_modulus`` (Pa) or
    ``poisson_ratio`` (dimensionless). Bare numbers are taken as SI.
    """
    if isinstance(value, bool):
        raise ValidationError(f"{kind}: expected a number, got {value!r}", field=kind)
    if isinstance(value, (int, float)):
        return float(value)
    m = _QUANTITY.match(str(value))
    if not m:
        raise ValidationError(f"{kind}: cannot parse {value!r}", field=kind)
    number = float(m.group(1))
    if m.group(2):
        number *= 10.0 ** int(m.group(2))
    unit = _canon_unit(m.group(3))
    if not unit:
        return number
    table = {"density": DENSITY_UNITS, "young_modulus": PRESSURE_UNITS}.get(kind, {})
    if unit not in table:
        raise ValidationError(f"{kind}: unknown unit {m.group(3)!r}", field=kind)
    return number * table[unit]


def _canon_key(key):
    k = str(key).strip().lower().replace(" ", "_").replace("-", "_")
    return _ALIASES.get(k)


def fenced_blocks(text):
    """Contents of the fenced code blocks in ``text`` (in order)."""
    return [b.strip() for b in _FENCE.findall(text or "")]


def parse_json_block(text):
    """First fenced block that parses as JSON; a bare JSON reply is accepted too."""
    for block in fenced_blocks(text) + [str(text or "").strip()]:
        try:
            return json.loads(block)
        except (json.JSONDecodeError, TypeError):
            continue
    return None


_LINE = re.compile(r"([A-Za-zρν_' -]+?)\s*[:=]\s*([^,;\n]+)")


def parse_properties(text):
    """Extract ``{density, young_modulus, poisson_ratio}`` (SI) from a reply.

    A fenced JSON object is preferred; otherwise ``name = value unit``
    statements in free text are scanned. Missing keys are simply absent;
    malformed values raise :class:`ValidationError` naming the property.
    """
    data = parse_json_block(text)
    raw = {}
    if isinstance(data, dict):
        for k, v in data.items():
            name = _canon_key(k)
            if name is not None and name not in raw:
                raw[name] = v
    else:
        for key, val in _LINE.findall(text or ""):
            name = _canon_key(key.split()[-1] if key.split() else key) or _canon_key(key)
            if name is not None and name not in raw:
                raw[name] = val.strip().strip("\"'")
    return {name: parse_quantity(v, name) for name, v in raw.items()}


def check_bounds(props):
    """Names of properties outside ``rho > 0``, ``E > 0``, ``0 <= nu < 0.5``."""
    bad = []
    if not props.get("density", 1.0) > 0:
        bad.append("density")
    if not props.get("young_modulus", 1.0) > 0:
        bad.append("young_modulus")
    nu = props.get("poisson_ratio", 0.25)
    if not 0.0 <= nu < 0.5:
        bad.append("poisson_ratio")
    return bad

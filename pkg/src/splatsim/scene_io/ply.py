"""Binary little-endian splat PLY reader/writer.

On disk the de-facto 3DGS layout is used: log-scales, opacity logits and
unnormalised quaternions. In memory everything is linear (see
:class:`splatsim.gaussians.GaussianScene`).
"""
from __future__ import annotations

import os

import numpy as np

from ..errors import PlyParseError, SceneIOError, ValidationError
from ..gaussians import GaussianScene, sh_degree_from_count

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


def _parse_header(fh):
    """Return (vertex_count, [(name, dtype)], extra-element byte sizes)."""
    first = fh.readline()
    if first.strip() != b"ply":
        raise PlyParseError(f"line 1: expected 'ply' magic, got {first[:40]!r}")
    elements = []
    fmt = None
    lineno = 1
    while True:
        raw = fh.readline()
        lineno += 1
        if not raw:
            raise PlyParseError(f"line {lineno}: unexpected end of file before end_header")
        try:
            line = raw.decode("ascii").strip()
        except UnicodeDecodeError:
            raise PlyParseError(f"line {lineno}: header is not ASCII") from None
        if not line or line.startswith("comment") or line.startswith("obj_info"):
            continue
        tokens = line.split()
        if tokens[0] == "end_header":
            break
        if tokens[0] == "format":
            if len(tokens) != 3:
                raise PlyParseError(f"line {lineno}: malformed format line {line!r}")
            fmt = tokens[1]
        elif tokens[0] == "element":
            if len(tokens) != 3 or not tokens[2].isdigit():
                raise PlyParseError(f"line {lineno}: malformed element line {line!r}")
            elements.append((tokens[1], int(tokens[2]), []))
        elif tokens[0] == "property":
            if not elements:
                raise PlyParseError(f"line {lineno}: property before any element: {line!r}")
            if len(tokens) != 3 or tokens[1] not in _PLY_TYPES:
                raise PlyParseError(f"line {lineno}: unsupported property line {line!r}")
            elements[-1][2].append((tokens[2], "<" + _PLY_TYPES[tokens[1]]))
        else:
            raise PlyParseError(f"line {lineno}: unknown header keyword in {line!r}")
    if fmt != "binary_little_endian":
        raise PlyParseError(f"line 2: only binary_little_endian PLY is supported, got {fmt!r}")
    vertex = [e for e in elements if e[0] == "vertex"]
    if not vertex:
        raise PlyParseError("header declares no vertex element")
    if elements[0][0] != "vertex":
        raise PlyParseError("vertex element must come first")
    return vertex[0][1], vertex[0][2]


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _logit(p):
    return np.log(p) - np.log1p(-p)


def read_ply_vertices(path):
    """Raw structured vertex array of a binary PLY file."""
    try:
        with open(path, "rb") as fh:
            count, props = _parse_header(fh)
            dtype = np.dtype(props)
            data = fh.read(count * dtype.itemsize)
    except FileNotFoundError:
        raise SceneIOError(f"no such PLY file: {path}") from None
    if len(data) < count * dtype.itemsize:
        raise PlyParseError(f"vertex data truncated: expected {count} records of {dtype.itemsize} bytes")
    return np.frombuffer(data, dtype=dtype, count=count)


def load_splat_ply(path):
    """Load a splat PLY into a :class:`GaussianScene` (linear scales, opacity in (0,1))."""
    v = read_ply_vertices(path)
    names = v.dtype.names
    required = ["x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity",
                "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
    missing = [n for n in required if n not in names]
    if missing:
        raise PlyParseError(f"PLY lacks required properties: {', '.join(missing)}")
    if len(v) == 0:
        raise PlyParseError("PLY contains no splats")
    rest = sorted((n for n in names if n.startswith("f_rest_")), key=lambda s: int(s[7:]))
    n_rest = len(rest)
    if n_rest % 3:
        raise PlyParseError(f"f_rest count {n_rest} is not divisible by 3")
    degree = sh_degree_from_count(1 + n_rest // 3)
    k = (degree + 1) ** 2

    def col(name):
        return v[name].astype(np.float64)

    fields = [col(n) for n in required] + [col(n) for n in rest]
    stacked = np.stack(fields, axis=1)
    bad = ~np.isfinite(stacked).all(axis=1)
    if bad.any():
        idx = int(np.flatnonzero(bad)[0])
        raise PlyParseError(f"non-finite value in splat {idx}")

    centers = np.stack([col("x"), col("y"), col("z")], axis=1)
    sh = np.zeros((len(v), k, 3))
    sh[:, 0, :] = np.stack([col(f"f_dc_{c}") for c in range(3)], axis=1)
    if n_rest:
        extra = np.stack([col(n) for n in rest], axis=1).reshape(len(v), 3, k - 1)
        sh[:, 1:, :] = extra.transpose(0, 2, 1)
    rot = np.stack([col(f"rot_{i}") for i in range(4)], axis=1)
    norms = np.linalg.norm(rot, axis=1)
    if np.any(norms == 0):
        raise PlyParseError(f"zero quaternion in splat {int(np.flatnonzero(norms == 0)[0])}")
    scales = np.exp(np.stack([col(f"scale_{i}") for i in range(3)], axis=1))
    opacity = _sigmoid(col("opacity"))
    ids = v["object_id"].astype(np.int64) if "object_id" in names else np.zeros(len(v), dtype=np.int64)
    return GaussianScene(centers, rot / norms[:, None], scales, opacity, sh, ids)


def save_splat_ply(scene, path, extra=None):
    """Write ``scene`` in the splat PLY layout (float32, object_id as uint).

    ``extra`` optionally maps additional per-vertex float property names to
    arrays, appended after the standard fields.
    """
    n = len(scene)
    if n == 0:
        raise ValidationError("cannot write an empty scene", field="splats")
    k = scene.sh.shape[1]
    props = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
    props += [(f"f_dc_{c}", "<f4") for c in range(3)]
    props += [(f"f_rest_{i}", "<f4") for i in range(3 * (k - 1))]
    props += [("opacity", "<f4")]
    props += [(f"scale_{i}", "<f4") for i in range(3)]
    props += [(f"rot_{i}", "<f4") for i in range(4)]
    props += [("object_id", "<u4")]
    extra = extra or {}
    props += [(name, "<f4") for name in extra]
    arr = np.zeros(n, dtype=np.dtype(props))
    for i, axis in enumerate("xyz"):
        arr[axis] = scene.centers[:, i]
    for c in range(3):
        arr[f"f_dc_{c}"] = scene.sh[:, 0, c]
    if k > 1:
        rest = scene.sh[:, 1:, :].transpose(0, 2, 1).reshape(n, -1)
        for i in range(rest.shape[1]):
            arr[f"f_rest_{i}"] = rest[:, i]
    arr["opacity"] = _logit(np.clip(scene.opacities, 1e-7, 1 - 1e-7))
    log_scales = np.log(scene.scales)
    for i in range(3):
        arr[f"scale_{i}"] = log_scales[:, i]
    for i in range(4):
        arr[f"rot_{i}"] = scene.rotations[:, i]
    arr["object_id"] = scene.object_ids.astype(np.uint32)
    for name, values in extra.items():
        arr[name] = np.asarray(values)
    _write_ply(path, arr)


def save_points_ply(path, positions, **fields):
    """Minimal point PLY (x, y, z plus optional float/int fields) for inspection dumps."""
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    props = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
    for name, values in fields.items():
        values = np.asarray(values)
        props.append((name, "<i4" if np.issubdtype(values.dtype, np.integer) else "<f4"))
    arr = np.zeros(len(positions), dtype=np.dtype(props))
    for i, axis in enumerate("xyz"):
        arr[axis] = positions[:, i]
    for name, values in fields.items():
        arr[name] = values
    _write_ply(path, arr)


_TYPE_NAMES = {"<f4": "float", "<f8": "double", "<u4": "uint", "<i4": "int", "|u1": "uchar"}


def _write_ply(path, arr):
    lines = ["ply", "format binary_little_endian 1.0", f"element vertex {len(arr)}"]
    for name in arr.dtype.names:
        lines.append(f"property {_TYPE_NAMES[arr.dtype[name].str]} {name}")
    lines.append("end_header")
    header = ("\n".join(lines) + "\n").encode("ascii")
    tmp = f"{path}.tmp{os.getpid()}"
    try:
        with open(tmp, "wb") as fh:
            fh.write(header)
            fh.write(arr.tobytes())
        os.replace(tmp, path)
    except OSError as exc:
        raise SceneIOError(f"cannot write {path}: {exc}") from exc

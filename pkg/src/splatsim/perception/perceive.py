"""Full property-perception chain with an on-disk result cache.

Cache layout: ``<cache_dir>/<key[:2]>/<key>.json`` where ``key`` is the
SHA-256 of the image bytes' digest, the tag, the provider identity, the
candidate count and the prompt version. Files are written to a temporary
name and renamed into place.
"""
from __future__ import annotations

import hashlib
import io
import json
import os
import warnings
from dataclasses import asdict, dataclass, field
from typing import Optional

from ..errors import PerceptionError, SceneIOError, ValidationError
from ..materials import MaterialProperties
from .types import PROMPT_VERSION, MaterialCandidate

try:
    from PIL import Image as _PILImage
except ImportError:  # pragma: no cover
    _PILImage = None

CACHE_FORMAT = 1


@dataclass
class PerceptionResult:
    properties: MaterialProperties
    caption: str = ""
    candidates: list = field(default_factory=list)
    selected: Optional[MaterialCandidate] = None
    source: str = "provider"
    provider_calls: int = 0

    def to_dict(self):
        return {
            "properties": asdict(self.properties),
            "caption": self.caption,
            "candidates": [asdict(c) for c in self.candidates],
            "selected": asdict(self.selected) if self.selected else None,
            "source": self.source,
            "provider_calls": self.provider_calls,
        }


def read_image(image):
    """Image bytes from bytes, a path, or None; checks that the data decodes."""
    if image is None:
        return None
    if isinstance(image, (bytes, bytearray)):
        data = bytes(image)
    else:
        try:
            with open(image, "rb") as fh:
                data = fh.read()
        except OSError as exc:
            raise SceneIOError(f"cannot read image {image}: {exc}") from exc
    if _PILImage is not None:
        try:
            with _PILImage.open(io.BytesIO(data)) as im:
                im.verify()
        except Exception as exc:  # Pillow raises a variety of types here
            raise PerceptionError(f"image is not decodable: {exc}", stage="describe") from None
    return data


def cache_key(image, tag, provider, k):
    blob = {
        "image": hashlib.sha256(image).hexdigest() if image is not None else None,
        "tag": tag,
        "provider": provider.identity(),
        "k": k,
        "prompts": PROMPT_VERSION,
    }
    return hashlib.sha256(json.dumps(blob, sort_keys=True).encode()).hexdigest()


def _cache_path(cache_dir, key):
    return os.path.join(cache_dir, key[:2], f"{key}.json")


def _load_cached(path):
    if not os.path.exists(path):
        return None
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        if data.get("format") != CACHE_FORMAT:
            raise ValueError("unknown cache format")
        return PerceptionResult(
            properties=MaterialProperties(**data["properties"]),
            caption=data["caption"],
            candidates=[MaterialCandidate(**c) for c in data["candidates"]],
            selected=MaterialCandidate(**data["selected"]) if data["selected"] else None,
            source="cache",
            provider_calls=0,
        )
    except (OSError, ValueError, KeyError, TypeError) as exc:
        warnings.warn(f"ignoring unreadable perception cache entry {path}: {exc}", stacklevel=3)
        return None


def _store(path, result):
    os.makedirs(os.path.dirname(path), exist_ok=True)
    data = result.to_dict()
    data["format"] = CACHE_FORMAT
    tmp = f"{path}.tmp{os.getpid()}"
    try:
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(data, fh, indent=2, sort_keys=True)
        os.replace(tmp, path)
    except OSError as exc:
        warnings.warn(f"cannot write perception cache entry {path}: {exc}", stacklevel=3)


def _stage(name, fn, *args):
    try:
        return fn(*args)
    except PerceptionError:
        raise
    except ValidationError as exc:
        raise PerceptionError(str(exc), stage=name) from exc


def perceive(image, tag, provider, override=None, cache_dir=None, k=5):
    """Run describe -> propose -> select -> estimate for one object.

    ``override`` short-circuits everything (no provider call, no cache).
    With ``cache_dir`` set, a previous result for the same inputs is reused.
    """
    if override is not None:
        return PerceptionResult(properties=override, caption=tag or "", source="override")
    image = read_image(image)
    path = None
    if cache_dir is not None:
        path = _cache_path(cache_dir, cache_key(image, tag, provider, k))
        hit = _load_cached(path)
        if hit is not None:
            return hit
    before = provider.calls
    caption = _stage("describe", provider.describe, image, tag)
    if not str(caption).strip():
        raise PerceptionError("empty description", stage="describe")
    candidates = _stage("propose", provider.propose, image, caption, k)
    if not candidates:
        raise PerceptionError("no material candidates", stage="propose")
    selected = _stage("select", provider.select, image, caption, candidates)
    props = _stage("estimate", provider.estimate, image, caption, selected)
    # local validation regardless of what the provider produced
    props = MaterialProperties(props.density, props.young_modulus, props.poisson_ratio, selected.rigid, selected.name)
    result = PerceptionResult(props, caption, list(candidates), selected, "provider", provider.calls - before)
    if path is not None:
        _store(path, result)
    return result


def perceive_object(image, tag, provider, override=None, cache_dir=None, k=5):
    """Material properties for one object (see :func:`perceive`)."""
    return perceive(image, tag, provider, override, cache_dir, k).properties

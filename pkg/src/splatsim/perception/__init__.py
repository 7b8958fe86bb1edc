"""Material-property perception: describe, propose, select, estimate."""
from .perceive import PerceptionResult, cache_key, perceive, perceive_object, read_image
from .providers import OfflineProvider, Provider, RemoteProvider, make_provider, select_by_overlap
from .types import (
    MaterialCandidate,
    MaterialCatalog,
    ProviderConfig,
    load_catalog,
    load_prompt,
    overlap_score,
)
from .units import parse_properties, parse_quantity

__all__ = [
    "MaterialCandidate",
    "MaterialCatalog",
    "OfflineProvider",
    "PerceptionResult",
    "Provider",
    "ProviderConfig",
    "RemoteProvider",
    "cache_key",
    "load_catalog",
    "load_prompt",
    "make_provider",
    "overlap_score",
    "parse_properties",
    "parse_quantity",
    "perceive",
    "perceive_object",
    "read_image",
    "select_by_overlap",
]

"""Records shared by the perception providers, and the material catalog."""
from __future__ import annotations

import csv
import hashlib
import re
from dataclasses import asdict, dataclass
from importlib import resources
from typing import Optional

from ..errors import SceneIOError, ValidationError
from ..materials import MaterialProperties

CATALOG_COLUMNS = ["name", "rho_min", "rho_max", "E_min", "E_max", "nu_min", "nu_max", "rigid"]
PROMPT_VERSION = "v1"


@dataclass
class MaterialCandidate:
    name: str
    rigid: bool
    confidence: float = 1.0

    def __post_init__(self):
        self.name = str(self.name).strip()
        if not self.name:
            raise ValidationError("material candidate needs a name", field="name")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValidationError("confidence must lie in [0, 1]", field="confidence")
        self.rigid = bool(self.rigid)


@dataclass
class ProviderConfig:
    """Connection settings for the remote chat-completion provider.

    ``api_key_env`` names the environment variable holding the key (the key
    itself is never stored). ``backoff_base`` seconds doubles per retry.
    """

    base_url: Optional[str] = None
    model_name: str = ""
    api_key_env: str = "SPLATSIM_API_KEY"
    timeout: float = 60.0
    max_retries: int = 3
    candidate_count: int = 5
    backoff_base: float = 1.0

    def __post_init__(self):
        if not self.timeout > 0:
            raise ValidationError("provider timeout must be > 0", field="timeout")
        if self.candidate_count < 1:
            raise ValidationError("candidate_count must be >= 1", field="candidate_count")
        if self.max_retries < 0:
            raise ValidationError("max_retries must be >= 0", field="max_retries")
        if self.backoff_base < 0:
            raise ValidationError("backoff_base must be >= 0", field="backoff_base")

    def to_dict(self):
        return asdict(self)


_TOKEN = re.compile(r"[a-z0-9]+")


def tokens(text):
    return _TOKEN.findall(str(text).lower())


def tokens_match(a, b):
    """Equal tokens, or one a prefix of the other with at least 3 shared letters ("wood"/"wooden")."""
    if a == b:
        return True
    short, long_ = (a, b) if len(a) <= len(b) else (b, a)
    return len(short) >= 3 and long_.startswith(short)


def overlap_score(text, name):
    """Number of ``name`` tokens matched by some token of ``text``."""
    words = tokens(text)
    return sum(any(tokens_match(t, w) for w in words) for t in tokens(name))


@dataclass
class CatalogEntry:
    name: str
    density: tuple
    young_modulus: tuple
    poisson_ratio: tuple
    rigid: bool

    def midpoint(self):
        return MaterialProperties(
            density=0.5 * sum(self.density),
            young_modulus=0.5 * sum(self.young_modulus),
            poisson_ratio=0.5 * sum(self.poisson_ratio),
            rigid=self.rigid,
            material_name=self.name,
        )


class MaterialCatalog:
    """Case-insensitive map from material name to property ranges."""

    def __init__(self, entries):
        self.entries = {}
        for e in entries:
            key = e.name.lower()
            if key in self.entries:
                raise ValidationError(f"duplicate catalog entry {e.name!r}", field="name")
            self.entries[key] = e
        self.digest = hashlib.sha256(repr(sorted((k, asdict(v)) for k, v in self.entries.items())).encode()).hexdigest()

    def __len__(self):
        return len(self.entries)

    def __contains__(self, name):
        return str(name).lower() in self.entries

    def __getitem__(self, name):
        try:
            return self.entries[str(name).lower()]
        except KeyError:
            raise ValidationError(f"unknown material {name!r}", field="material") from None

    def match(self, tag):
        """Catalog entry named by ``tag``, or None.

        An exact (case-insensitive) name wins; otherwise the entry whose
        name tokens are all matched by the tag's tokens, preferring more
        tokens, then the longer name, then alphabetical order.
        """
        key = str(tag).strip().lower()
        if key in self.entries:
            return self.entries[key]
        best = None
        for name, entry in self.entries.items():
            n_tok = len(tokens(name))
            if n_tok == 0 or overlap_score(tag, name) < n_tok:
                continue
            rank = (-n_tok, -len(name), name)
            if best is None or rank < best[0]:
                best = (rank, entry)
        return None if best is None else best[1]


def _parse_bool(text, line):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "y"):
        return True
    if t in ("0", "false", "no", "n"):
        return False
    raise ValidationError(f"catalog line {line}: rigid must be true/false, got {text!r}", field="rigid")


def _read_catalog(fh, source):
    reader = csv.DictReader(fh)
    header = [h.strip() for h in (reader.fieldnames or [])]
    if header != CATALOG_COLUMNS:
        raise ValidationError(f"{source}: catalog header must be {','.join(CATALOG_COLUMNS)}", field="header")
    entries = []
    for line, row in enumerate(reader, start=2):
        try:
            vals = [float(row[c]) for c in CATALOG_COLUMNS[1:7]]
        except (TypeError, ValueError):
            raise ValidationError(f"{source} line {line}: malformed numeric field", field="row") from None
        rho, E, nu = (vals[0], vals[1]), (vals[2], vals[3]), (vals[4], vals[5])
        if not (0 < rho[0] <= rho[1]) or not (0 < E[0] <= E[1]) or not (0 <= nu[0] <= nu[1] < 0.5):
            raise ValidationError(f"{source} line {line}: property range out of bounds", field="range")
        entries.append(CatalogEntry(row["name"].strip(), rho, E, nu, _parse_bool(row["rigid"], line)))
    return MaterialCatalog(entries)


def load_catalog(path=None):
    """Read a catalog CSV; ``None`` loads the bundled catalog."""
    if path is None:
        with resources.files(__package__).joinpath("data/catalog.csv").open("r", encoding="utf-8") as fh:
            return _read_catalog(fh, "bundled catalog")
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            return _read_catalog(fh, str(path))
    except OSError as exc:
        raise SceneIOError(f"cannot read catalog {path}: {exc}") from exc


def load_prompt(name):
    """Prompt template text (``prompts/<name>_<version>.txt``)."""
    return resources.files(__package__).joinpath(f"prompts/{name}_{PROMPT_VERSION}.txt").read_text(encoding="utf-8")

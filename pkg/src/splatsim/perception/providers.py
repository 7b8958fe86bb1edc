"""Property-perception providers: a deterministic catalog and a remote chat model."""
from __future__ import annotations

import base64
import os
import time

import httpx

from ..errors import PerceptionError, ValidationError
from ..materials import MaterialProperties
from .types import MaterialCandidate, ProviderConfig, load_catalog, load_prompt, overlap_score
from .units import PROPERTY_NAMES, check_bounds, parse_json_block, parse_properties


def select_by_overlap(caption, candidates):
    """Candidate whose name shares most tokens with ``caption``.

    Ties go to higher confidence, then to the alphabetically first name.
    """
    if not candidates:
        raise ValidationError("no candidates to select from", field="candidates")
    return min(candidates, key=lambda c: (-overlap_score(caption, c.name), -c.confidence, c.name.lower()))


class Provider:
    """Interface of the four perception stages.

    ``calls`` counts requests sent to an external service.
    """

    kind = "base"

    def __init__(self):
        self.calls = 0

    def describe(self, image, tag):
        raise NotImplementedError

    def propose(self, image, caption, k):
        raise NotImplementedError

    def select(self, image, caption, candidates):
        raise NotImplementedError

    def estimate(self, image, caption, candidate):
        raise NotImplementedError

    def identity(self):
        """JSON-serialisable description used in cache keys."""
        return {"kind": self.kind}


class OfflineProvider(Provider):
    """Catalog lookup standing in for the vision-language model (no network)."""

    kind = "offline"

    def __init__(self, catalog=None):
        super().__init__()
        self.catalog = catalog if catalog is not None else load_catalog()

    def describe(self, image, tag):
        if not str(tag or "").strip():
            raise PerceptionError("offline provider needs a nonempty tag", stage="describe")
        return tag

    def propose(self, image, caption, k):
        entry = self.catalog.match(caption)
        if entry is None:
            raise PerceptionError(f"unknown material for tag {caption!r}", stage="propose")
        return [MaterialCandidate(entry.name, entry.rigid, 1.0)]

    def select(self, image, caption, candidates):
        return select_by_overlap(caption, candidates)

    def estimate(self, image, caption, candidate):
        if candidate.name not in self.catalog:
            raise PerceptionError(f"unknown material {candidate.name!r}", stage="estimate")
        props = self.catalog[candidate.name].midpoint()
        props.rigid = candidate.rigid
        return props

    def identity(self):
        return {"kind": self.kind, "catalog": self.catalog.digest}


def _image_url(image):
    mime = "image/jpeg" if image[:3] == b"\xff\xd8\xff" else "image/png"
    return f"data:{mime};base64,{base64.b64encode(image).decode('ascii')}"


def _candidates_from(data, k):
    items = data.get("materials") if isinstance(data, dict) else data
    if not isinstance(items, list):
        return []
    out = {}
    for item in items:
        if not isinstance(item, dict) or not isinstance(item.get("rigid"), bool):
            continue
        name = item.get("name")
        conf = item.get("confidence", 0.0)
        if not isinstance(name, str) or not name.strip() or isinstance(conf, bool):
            continue
        try:
            conf = min(max(float(conf), 0.0), 1.0)
        except (TypeError, ValueError):
            continue
        cand = MaterialCandidate(name, item["rigid"], conf)
        key = cand.name.lower()
        if key not in out or out[key].confidence < conf:
            out[key] = cand
    ranked = sorted(out.values(), key=lambda c: (-c.confidence, c.name.lower()))
    return ranked[:k]


class RemoteProvider(Provider):
    """Chat-completion endpoint with image attachments.

    Requests go to ``{base_url}/chat/completions``; the reply text is
    ``choices[0].message.content``. Timeouts, connection errors, HTTP 429 and
    5xx responses and empty replies are retried with exponential backoff.
    """

    kind = "remote"

    def __init__(self, config, transport=None, sleep=time.sleep):
        super().__init__()
        if not config.base_url:
            raise ValidationError("remote provider needs provider.base_url", field="base_url")
        if not config.model_name:
            raise ValidationError("remote provider needs provider.model_name", field="model_name")
        self.config = config
        self._sleep = sleep
        self._client = httpx.Client(transport=transport, timeout=config.timeout)

    def close(self):
        self._client.close()

    def identity(self):
        c = self.config
        return {"kind": self.kind, "base_url": c.base_url, "model_name": c.model_name, "k": c.candidate_count}

    def _headers(self):
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.config.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def chat(self, stage, prompt, image=None):
        """Send one prompt (plus optional image bytes) and return the reply text."""
        content = [{"type": "text", "text": prompt}]
        if image is not None:
            content.append({"type": "image_url", "image_url": {"url": _image_url(image)}})
        payload = {"model": self.config.model_name, "messages": [{"role": "user", "content": content}], "temperature": 0}
        url = self.config.base_url.rstrip("/") + "/chat/completions"
        last = "no attempt made"
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                self._sleep(self.config.backoff_base * 2 ** (attempt - 1))
            self.calls += 1
            try:
                resp = self._client.post(url, json=payload, headers=self._headers())
            except httpx.TimeoutException:
                last = "request timed out"
                continue
            except httpx.TransportError as exc:
                last = f"transport error: {exc}"
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last = f"HTTP {resp.status_code}"
                continue
            if resp.status_code >= 400:
                raise PerceptionError(f"HTTP {resp.status_code}: {resp.text[:200]}", stage=stage)
            try:
                text = resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError):
                raise PerceptionError("malformed chat-completion response", stage=stage) from None
            if isinstance(text, list):
                text = "".join(part.get("text", "") for part in text if isinstance(part, dict))
            if isinstance(text, str) and text.strip():
                return text
            last = "empty reply"
        raise PerceptionError(f"no usable reply after {self.config.max_retries + 1} attempts ({last})", stage=stage)

    def describe(self, image, tag):
        if image is None:
            raise PerceptionError("remote provider needs a canonical image", stage="describe")
        return self.chat("describe", load_prompt("describe"), image)

    def propose(self, image, caption, k):
        prompt = load_prompt("propose").format(caption=caption, k=k)
        cands = _candidates_from(parse_json_block(self.chat("propose", prompt, image)), k)
        if not cands:
            prompt = load_prompt("propose_strict").format(caption=caption, k=k)
            cands = _candidates_from(parse_json_block(self.chat("propose", prompt, image)), k)
        if not cands:
            raise PerceptionError("reply did not contain any valid material candidate", stage="propose")
        return cands

    def select(self, image, caption, candidates):
        if len(candidates) == 1:
            return candidates[0]
        listing = "\n".join(f"- {c.name}" for c in candidates)
        reply = parse_json_block(self.chat("select", load_prompt("select").format(caption=caption, candidates=listing), image))
        name = reply.get("name") if isinstance(reply, dict) else None
        for c in candidates:
            if isinstance(name, str) and c.name.lower() == name.strip().lower():
                return c
        # an unusable ranking reply falls back to the offline rule
        return select_by_overlap(caption, candidates)

    def _estimate_once(self, prompt, image):
        try:
            props = parse_properties(self.chat("estimate", prompt, image))
        except ValidationError as exc:
            return {}, [exc.field or "value"]
        problems = [n for n in PROPERTY_NAMES if n not in props] + check_bounds(props)
        return props, problems

    def estimate(self, image, caption, candidate):
        prompt = load_prompt("estimate").format(caption=caption, material=candidate.name)
        props, problems = self._estimate_once(prompt, image)
        if problems:
            strict = load_prompt("estimate_strict").format(caption=caption, material=candidate.name, problem=", ".join(problems))
            props, problems = self._estimate_once(strict, image)
        if problems:
            raise PerceptionError(f"missing or out-of-range property: {', '.join(problems)}", stage="estimate")
        return MaterialProperties(
            props["density"], props["young_modulus"], props["poisson_ratio"], candidate.rigid, candidate.name
        )


def make_provider(kind, config=None, catalog=None, transport=None):
    if kind == "offline":
        return OfflineProvider(catalog)
    if kind == "remote":
        return RemoteProvider(config or ProviderConfig(), transport=transport)
    raise ValidationError(f"unknown provider {kind!r}", field="provider")


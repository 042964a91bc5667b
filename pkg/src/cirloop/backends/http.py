"""Clients for OpenAI-compatible ``/chat/completions`` and ``/embeddings`` servers."""

from __future__ import annotations

import base64
import binascii
import hashlib
import json
import logging
import mimetypes
import os
import re
import time
from pathlib import Path
from typing import Any, Callable

import httpx
import numpy as np

from ..core import BackendError, Pathway
from . import prompts
from .base import (BackendProfile, Caption, ImageHandle, Reflection, SATISFIED,
                   VerifierLogits)

log = logging.getLogger(__name__)

RETRYABLE_STATUS = {408, 409, 425, 429, 500, 502, 503, 504}
FALLBACK_LOGIT = 10.0
_DATA_URI = re.compile(r"^data:(?P<mime>[\w/+.-]+);base64,(?P<data>.*)$", re.S)
_YES_NO = re.compile(r"^\W*(yes|no)\b", re.I)


class ChatClient:
    """POSTs JSON with bounded exponential-backoff retries.

    At most ``1 + max_retries`` requests are sent per logical call. ``requests``
    counts every attempt.
    """

    def __init__(self, profile: BackendProfile, transport: httpx.BaseTransport | None = None,
                 sleep: Callable[[float], None] = time.sleep, backoff_base: float = 0.5,
                 backoff_cap: float = 8.0):
        self.profile = profile
        self.endpoint = profile.endpoint.rstrip("/")
        self._sleep = sleep
        self._backoff_base = backoff_base
        self._backoff_cap = backoff_cap
        self.requests = 0
        headers = {"Content-Type": "application/json"}
        if profile.api_key_env:
            key = os.environ.get(profile.api_key_env)
            if key:
                headers["Authorization"] = f"Bearer {key}"
            else:
                log.warning("environment variable %s is not set; sending no credentials", profile.api_key_env)
        self._client = httpx.Client(timeout=profile.timeout_ms / 1000.0, headers=headers, transport=transport)

    def close(self):
        self._client.close()

    def post(self, path: str, payload: dict[str, Any]) -> dict[str, Any]:
        url = f"{self.endpoint}/{path.lstrip('/')}"
        role = self.profile.role.value
        last = "no attempt made"
        for attempt in range(self.profile.max_retries + 1):
            if attempt:
                self._sleep(min(self._backoff_cap, self._backoff_base * 2 ** (attempt - 1)))
            self.requests += 1
            try:
                resp = self._client.post(url, json=payload)
            except httpx.TransportError as exc:
                last = f"{type(exc).__name__}: {exc}"
                continue
            if resp.status_code in RETRYABLE_STATUS:
                last = f"HTTP {resp.status_code}"
                continue
            if resp.status_code >= 400:
                raise BackendError("BACKEND_UNAVAILABLE", role, f"HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                return resp.json()
            except json.JSONDecodeError:
                raise BackendError("EMPTY_RESPONSE", role, "response body is not JSON") from None
        raise BackendError("BACKEND_UNAVAILABLE", role,
                           f"{self.profile.max_retries + 1} attempts failed, last: {last}")

    def chat(self, content: list[dict[str, Any]], **extra) -> dict[str, Any]:
        payload = {
            "model": self.profile.model_name or "default",
            "messages": [{"role": "user", "content": content}],
            "temperature": 0,
        }
        payload.update(extra)
        return self.post("chat/completions", payload)


def text_part(text: str) -> dict[str, Any]:
    return {"type": "text", "text": text}


def image_part(image: ImageHandle) -> dict[str, Any]:
    loc = image.locator
    if loc.startswith(("http://", "https://", "data:")):
        url = loc
    else:
        path = Path(loc)
        try:
            raw = path.read_bytes()
        except OSError as exc:
            raise BackendError("LOOKUP_MISS", loc, f"cannot read image: {exc}") from None
        mime = mimetypes.guess_type(path.name)[0] or "image/png"
        url = f"data:{mime};base64,{base64.b64encode(raw).decode('ascii')}"
    return {"type": "image_url", "image_url": {"url": url}}


def _first_choice(resp: dict[str, Any], role: str) -> dict[str, Any]:
    try:
        return resp["choices"][0]
    except (KeyError, IndexError, TypeError):
        raise BackendError("EMPTY_RESPONSE", role, "response has no choices") from None


def message_text(resp: dict[str, Any], role: str) -> str:
    content = (_first_choice(resp, role).get("message") or {}).get("content")
    if isinstance(content, list):
        content = "".join(p.get("text", "") for p in content if isinstance(p, dict) and p.get("type") == "text")
    if not isinstance(content, str) or not content.strip():
        raise BackendError("EMPTY_RESPONSE", role, "response has no text content")
    return content.strip()


class HttpCaptioner:
    def __init__(self, client: ChatClient, prompt_dir=None):
        self.client = client
        self.prompt_dir = prompt_dir

    def caption(self, image: ImageHandle) -> Caption:
        prompt = prompts.render("captioner", self.prompt_dir)
        resp = self.client.chat([text_part(prompt), image_part(image)])
        return Caption(message_text(resp, "CAPTIONER"))


class HttpTextEditor:
    def __init__(self, client: ChatClient, prompt_dir=None):
        self.client = client
        self.prompt_dir = prompt_dir

    def edit_caption(self, c_ref: Caption, instruction: str) -> Caption:
        prompt = prompts.render("editor_text", self.prompt_dir,
                                reference_caption=c_ref.text, modification=instruction)
        return Caption(message_text(self.client.chat([text_part(prompt)]), "EDITOR_TEXT"))


def _extract_image_url(resp: dict[str, Any]) -> str | None:
    message = _first_choice(resp, "EDITOR_IMAGE").get("message") or {}
    parts = []
    if isinstance(message.get("content"), list):
        parts.extend(message["content"])
    if isinstance(message.get("images"), list):
        parts.extend(message["images"])
    for part in parts:
        if isinstance(part, dict) and part.get("type") == "image_url":
            url = (part.get("image_url") or {}).get("url")
            if url:
                return url
    return None


class HttpImageEditor:
    """Saves the generated image under ``artifact_dir`` and returns its path."""

    def __init__(self, client: ChatClient, artifact_dir: str | Path, prompt_dir=None):
        self.client = client
        self.artifact_dir = Path(artifact_dir)
        self.prompt_dir = prompt_dir

    def edit_image(self, i_ref: ImageHandle, instruction: str, iteration: int) -> ImageHandle:
        prompt = prompts.render("editor_image", self.prompt_dir, modification=instruction)
        resp = self.client.chat([text_part(prompt), image_part(i_ref)], modalities=["image", "text"])
        url = _extract_image_url(resp)
        if url is None:
            raise BackendError("EMPTY_RESPONSE", "EDITOR_IMAGE", "response carries no image payload")
        m = _DATA_URI.match(url)
        if m is None:
            return ImageHandle(url, iteration)
        try:
            raw = base64.b64decode(m["data"], validate=False)
        except binascii.Error:
            raise BackendError("EMPTY_RESPONSE", "EDITOR_IMAGE", "image payload is not base64") from None
        if not raw:
            raise BackendError("EMPTY_RESPONSE", "EDITOR_IMAGE", "image payload is empty")
        ext = mimetypes.guess_extension(m["mime"]) or ".png"
        self.artifact_dir.mkdir(parents=True, exist_ok=True)
        path = self.artifact_dir / f"{hashlib.sha256(raw).hexdigest()[:20]}{ext}"
        path.write_bytes(raw)
        return ImageHandle(str(path), iteration)


def logits_from_top_logprobs(choice: dict[str, Any]) -> VerifierLogits | None:
    """Read yes/no log-probabilities of the first generated token.

    Tokens are matched case-insensitively after stripping whitespace. When only
    one of the two answers is listed, the other is bounded above by the
    smallest listed log-probability. Returns None when neither appears.
    """
    try:
        first = choice["logprobs"]["content"][0]
    except (KeyError, IndexError, TypeError):
        return None
    listed: list[tuple[str, float]] = []
    if "token" in first and "logprob" in first:
        listed.append((first["token"], first["logprob"]))
    for alt in first.get("top_logprobs") or []:
        listed.append((alt.get("token", ""), alt.get("logprob")))
    best: dict[str, float] = {}
    floor = None
    for token, lp in listed:
        if lp is None:
            continue
        lp = float(lp)
        floor = lp if floor is None else min(floor, lp)
        key = token.strip().lower()
        if key in ("yes", "no"):
            best[key] = max(lp, best.get(key, -np.inf))
    if not best:
        return None
    return VerifierLogits(best.get("yes", floor), best.get("no", floor))


def logits_from_answer_text(text: str) -> VerifierLogits:
    m = _YES_NO.match(text)
    if m is None:
        raise BackendError("VERIFY_UNPARSEABLE", "VERIFIER", f"answer {text[:60]!r} is neither yes nor no")
    if m.group(1).lower() == "yes":
        return VerifierLogits(FALLBACK_LOGIT, -FALLBACK_LOGIT)
    return VerifierLogits(-FALLBACK_LOGIT, FALLBACK_LOGIT)


class HttpVerifier:
    def __init__(self, client: ChatClient, prompt_dir=None, top_logprobs: int = 5):
        self.client = client
        self.prompt_dir = prompt_dir
        self.top_logprobs = max(5, top_logprobs)

    def verify(self, i_ref: ImageHandle, t_mod: str, candidate: ImageHandle) -> VerifierLogits:
        prompt = prompts.render("verifier", self.prompt_dir, modification=t_mod)
        resp = self.client.chat(
            [text_part(prompt), image_part(i_ref), image_part(candidate)],
            logprobs=True, top_logprobs=self.top_logprobs, max_tokens=1,
        )
        logits = logits_from_top_logprobs(_first_choice(resp, "VERIFIER"))
        if logits is not None:
            return logits
        log.debug("verifier response carries no usable logprobs; parsing answer text")
        return logits_from_answer_text(message_text(resp, "VERIFIER"))


def parse_reflection(text: str) -> Reflection:
    """Parse ``{"verdict": "satisfied"|"unmet", "suggestion": ...}``; code fences
    and prose around the object are tolerated."""
    start = text.find("{")
    if start < 0:
        raise BackendError("UNPARSEABLE_REFLECTION", "REFINER", "no JSON object in response")
    try:
        obj, _ = json.JSONDecoder().raw_decode(text[start:])
    except json.JSONDecodeError as exc:
        raise BackendError("UNPARSEABLE_REFLECTION", "REFINER", str(exc)) from None
    if not isinstance(obj, dict) or "verdict" not in obj:
        raise BackendError("UNPARSEABLE_REFLECTION", "verdict", "missing verdict field")
    verdict = str(obj["verdict"]).strip().lower()
    if verdict == "satisfied":
        return SATISFIED
    if verdict != "unmet":
        raise BackendError("UNPARSEABLE_REFLECTION", "verdict", f"unknown verdict {obj['verdict']!r}")
    suggestion = obj.get("suggestion")
    if not isinstance(suggestion, str) or not suggestion.strip():
        raise BackendError("UNPARSEABLE_REFLECTION", "suggestion", "unmet verdict needs a suggestion")
    return Reflection.suggest(suggestion)


class HttpRefiner:
    def __init__(self, client: ChatClient, prompt_dir=None):
        self.client = client
        self.prompt_dir = prompt_dir

    def reflect(self, c_ref: Caption, t_mod: str, pseudo_target: Caption, pathway: Pathway) -> Reflection:
        name = "refiner_t2i" if pathway is Pathway.T2I else "refiner_i2i"
        prompt = prompts.render(name, self.prompt_dir, reference_caption=c_ref.text,
                                modification=t_mod, pseudo_target_caption=pseudo_target.text)
        resp = self.client.chat([text_part(prompt)], response_format={"type": "json_object"})
        return parse_reflection(message_text(resp, "REFINER"))


def _embedding(resp: dict[str, Any], role: str) -> np.ndarray:
    try:
        vec = resp["data"][0]["embedding"]
    except (KeyError, IndexError, TypeError):
        raise BackendError("EMPTY_RESPONSE", role, "response has no embedding") from None
    return np.asarray(vec, dtype=np.float64)


class HttpTextEncoder:
    def __init__(self, client: ChatClient):
        self.client = client

    def encode_text(self, text: Caption) -> np.ndarray:
        payload = {"model": self.client.profile.model_name or "default", "input": text.text}
        return _embedding(self.client.post("embeddings", payload), "ENCODER_TEXT")


class HttpImageEncoder:
    """Sends the image as a data URI (or URL) in the ``input`` field."""

    def __init__(self, client: ChatClient):
        self.client = client

    def encode_image(self, image: ImageHandle) -> np.ndarray:
        url = image_part(image)["image_url"]["url"]
        payload = {"model": self.client.profile.model_name or "default", "input": [url]}
        return _embedding(self.client.post("embeddings", payload), "ENCODER_IMAGE")

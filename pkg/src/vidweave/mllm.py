"""Multimodal chat clients: request/response model, HTTP dialects, retries.

Requests are immutable and canonically serializable, so a logged transcript
reproduces what was sent byte for byte, and a stable fingerprint identifies a
request across processes (used both for response caching and for the scripted
mock). Two HTTP dialects are provided (an OpenAI-style chat-completions API
and a Gemini-style generateContent API) plus a scripted mock for offline runs.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import threading
import time
from collections import deque
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Protocol

import httpx

from .video import FrameRef

ROLES = ("system", "user", "assistant")


class MllmError(Exception):
    """Base class for chat client failures."""


class TransientBackendError(MllmError):
    """Retryable failure: rate limit, server error, or timeout."""


class AuthenticationError(MllmError):
    """Non-retryable: bad or missing credentials."""


class PayloadTooLargeError(MllmError):
    """Non-retryable: the backend refused the request size."""


class RetriesExhaustedError(MllmError):
    """All attempts failed with transient errors."""


class NoScriptedResponseError(MllmError):
    """Strict scripted mock saw a fingerprint it has no answer for."""


@dataclass(frozen=True)
class ContentPart:
    """One text or image part; exactly one payload field is set."""

    kind: str
    text: str | None = None
    image: bytes | None = None
    frame: FrameRef | None = None

    def __post_init__(self) -> None:
        if self.kind == "text":
            if self.text is None or self.image is not None:
                raise ValueError("text part must carry text and no image")
        elif self.kind == "image":
            if self.image is None or self.text is not None:
                raise ValueError("image part must carry image bytes and no text")
        else:
            raise ValueError("part kind must be 'text' or 'image'")


def text_part(text: str) -> ContentPart:
    return ContentPart(kind="text", text=text)


def image_part(image: bytes, frame: FrameRef | None = None) -> ContentPart:
    return ContentPart(kind="image", image=image, frame=frame)


@dataclass(frozen=True)
class Message:
    role: str
    parts: tuple[ContentPart, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "parts", tuple(self.parts))
        if self.role not in ROLES:
            raise ValueError("role must be one of %s" % (ROLES,))
        if not self.parts:
            raise ValueError("message must have at least one part")


@dataclass(frozen=True)
class ChatRequest:
    model_id: str
    messages: tuple[Message, ...]
    temperature: float | None = None
    top_p: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "messages", tuple(self.messages))
        if not any(m.role == "user" for m in self.messages):
            raise ValueError("request must contain at least one user message")

    def image_parts(self) -> list[ContentPart]:
        return [p for m in self.messages for p in m.parts if p.kind == "image"]


@dataclass(frozen=True)
class ChatResponse:
    text: str
    finish_reason: str = "stop"
    usage: Mapping[str, int] | None = None
    latency_s: float = 0.0
    attempt_count: int = 1

    def __post_init__(self) -> None:
        if not self.text and self.finish_reason == "stop":
            raise ValueError("empty response text requires a non-normal finish_reason")


def _part_to_dict(part: ContentPart) -> dict[str, Any]:
    if part.kind == "text":
        return {"kind": "text", "text": part.text}
    data: dict[str, Any] = {
        "kind": "image",
        "image_b64": base64.b64encode(part.image or b"").decode("ascii"),
    }
    if part.frame is not None:
        data["frame"] = {
            "video_id": part.frame.video_id,
            "index": part.frame.index,
            "timestamp": part.frame.timestamp,
        }
    return data


def _part_from_dict(data: Mapping[str, Any]) -> ContentPart:
    if data["kind"] == "text":
        return text_part(data["text"])
    frame = None
    if "frame" in data:
        frame = FrameRef(
            video_id=data["frame"]["video_id"],
            index=data["frame"]["index"],
            timestamp=data["frame"]["timestamp"],
        )
    return image_part(base64.b64decode(data["image_b64"]), frame=frame)


def request_to_dict(request: ChatRequest) -> dict[str, Any]:
    data: dict[str, Any] = {
        "model_id": request.model_id,
        "messages": [
            {"role": m.role, "parts": [_part_to_dict(p) for p in m.parts]}
            for m in request.messages
        ],
    }
    if request.temperature is not None:
        data["temperature"] = request.temperature
    if request.top_p is not None:
        data["top_p"] = request.top_p
    return data


def request_from_dict(data: Mapping[str, Any]) -> ChatRequest:
    return ChatRequest(
        model_id=data["model_id"],
        messages=tuple(
            Message(
                role=m["role"],
                parts=tuple(_part_from_dict(p) for p in m["parts"]),
            )
            for m in data["messages"]
        ),
        temperature=data.get("temperature"),
        top_p=data.get("top_p"),
    )


def serialize_request(request: ChatRequest) -> str:
    """Canonical JSON form: sorted keys, compact separators, ASCII-safe."""
    return json.dumps(
        request_to_dict(request), sort_keys=True, separators=(",", ":"),
        ensure_ascii=True,
    )


def response_to_dict(response: ChatResponse) -> dict[str, Any]:
    return {
        "text": response.text,
        "finish_reason": response.finish_reason,
        "usage": dict(response.usage) if response.usage is not None else None,
        "latency_s": response.latency_s,
        "attempt_count": response.attempt_count,
    }


def response_from_dict(data: Mapping[str, Any]) -> ChatResponse:
    return ChatResponse(
        text=data["text"],
        finish_reason=data.get("finish_reason", "stop"),
        usage=data.get("usage"),
        latency_s=data.get("latency_s", 0.0),
        attempt_count=data.get("attempt_count", 1),
    )


def fingerprint(request: ChatRequest) -> str:
    """Stable digest of the request's semantic content.

    Covers model, roles, verbatim text, image byte digests, and sampling
    fields; ignores transport-level detail such as frame provenance labels.
    """
    reduced = {
        "model_id": request.model_id,
        "temperature": request.temperature,
        "top_p": request.top_p,
        "messages": [
            {
                "role": m.role,
                "parts": [
                    {"kind": "text", "text": p.text}
                    if p.kind == "text"
                    else {
                        "kind": "image",
                        "digest": hashlib.sha256(p.image or b"").hexdigest(),
                    }
                    for p in m.parts
                ],
            }
            for m in request.messages
        ],
    }
    canonical = json.dumps(
        reduced, sort_keys=True, separators=(",", ":"), ensure_ascii=True
    )
    return hashlib.sha256(canonical.encode("ascii")).hexdigest()


class ChatBackend(Protocol):
    def complete(self, request: ChatRequest) -> ChatResponse:
        """Run one attempt; raise an MllmError subclass on failure."""
        ...


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    base_delay_s: float = 1.0
    multiplier: float = 2.0

    def delay_before(self, next_attempt: int) -> float:
        # Delay before attempt n (n >= 2): base * multiplier^(n-2).
        return self.base_delay_s * self.multiplier ** (next_attempt - 2)


def send(
    request: ChatRequest,
    backend: ChatBackend,
    retry_policy: RetryPolicy | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> ChatResponse:
    """Send with retry on transient failures; other errors pass through.

    The returned response carries the attempt count and the latency of the
    successful attempt.
    """
    policy = retry_policy or RetryPolicy()
    last_error: TransientBackendError | None = None
    for attempt in range(1, policy.max_attempts + 1):
        if attempt > 1:
            sleep(policy.delay_before(attempt))
        started = time.perf_counter()
        try:
            response = backend.complete(request)
        except TransientBackendError as exc:
            last_error = exc
            continue
        return replace(
            response,
            attempt_count=attempt,
            latency_s=time.perf_counter() - started,
        )
    raise RetriesExhaustedError(
        "gave up after %d attempts: %s" % (policy.max_attempts, last_error)
    ) from last_error


class ScriptedMockBackend:
    """Deterministic offline backend.

    Responses are keyed by request fingerprint; unknown fingerprints fall
    back to an ordered queue when one is provided, otherwise they raise.
    The call log supports call-count assertions in resume tests.
    """

    def __init__(
        self,
        responses: Mapping[str, str] | None = None,
        fallbacks: Iterable[str] = (),
    ) -> None:
        self._responses = dict(responses or {})
        self._fallbacks = deque(fallbacks)
        self._lock = threading.Lock()
        self.calls: list[str] = []

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedMockBackend":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            responses=data.get("responses", {}),
            fallbacks=data.get("fallbacks", []),
        )

    @property
    def call_count(self) -> int:
        with self._lock:
            return len(self.calls)

    def complete(self, request: ChatRequest) -> ChatResponse:
        digest = fingerprint(request)
        with self._lock:
            self.calls.append(digest)
            if digest in self._responses:
                return ChatResponse(text=self._responses[digest])
            if self._fallbacks:
                return ChatResponse(text=self._fallbacks.popleft())
        raise NoScriptedResponseError("no scripted response for %s" % digest)


def _data_uri(image: bytes) -> str:
    return "data:image/jpeg;base64," + base64.b64encode(image).decode("ascii")


def _classify_status(status: int, detail: str) -> MllmError:
    if status in (401, 403):
        return AuthenticationError("authentication failed (%d): %s" % (status, detail))
    if status == 413:
        return PayloadTooLargeError("payload too large: %s" % detail)
    if status == 429 or status >= 500:
        return TransientBackendError("backend returned %d: %s" % (status, detail))
    return MllmError("backend returned %d: %s" % (status, detail))


def _api_key(api_key_env: str | None) -> str | None:
    if not api_key_env:
        return None
    value = os.environ.get(api_key_env)
    if not value:
        raise AuthenticationError(
            "API key environment variable %s is not set" % api_key_env
        )
    return value


class OpenAIChatBackend:
    """OpenAI-compatible /chat/completions dialect (covers local servers)."""

    def __init__(
        self,
        base_url: str,
        api_key_env: str | None = None,
        timeout_s: float = 120.0,
        transport: httpx.BaseTransport | None = None,
    ) -> None:
        self._base_url = base_url.rstrip("/")
        self._api_key_env = api_key_env
        self._client = httpx.Client(timeout=timeout_s, transport=transport)

    def _payload(self, request: ChatRequest) -> dict[str, Any]:
        messages = []
        for message in request.messages:
            content: list[dict[str, Any]] = []
            for part in message.parts:
                if part.kind == "text":
                    content.append({"type": "text", "text": part.text})
                else:
                    content.append(
                        {
                            "type": "image_url",
                            "image_url": {"url": _data_uri(part.image or b"")},
                        }
                    )
            messages.append({"role": message.role, "content": content})
        payload: dict[str, Any] = {"model": request.model_id, "messages": messages}
        if request.temperature is not None:
            payload["temperature"] = request.temperature
        if request.top_p is not None:
            payload["top_p"] = request.top_p
        return payload

    def complete(self, request: ChatRequest) -> ChatResponse:
        headers = {}
        key = _api_key(self._api_key_env)
        if key:
            headers["Authorization"] = "Bearer " + key
        try:
            response = self._client.post(
                self._base_url + "/chat/completions",
                json=self._payload(request),
                headers=headers,
            )
        except httpx.TimeoutException as exc:
            raise TransientBackendError("request timed out: %s" % exc) from exc
        except httpx.HTTPError as exc:
            raise TransientBackendError("transport failure: %s" % exc) from exc
        if response.status_code != 200:
            raise _classify_status(response.status_code, response.text[:200])
        data = response.json()
        try:
            choice = data["choices"][0]
            text = choice["message"]["content"] or ""
            finish = choice.get("finish_reason") or "stop"
        except (KeyError, IndexError, TypeError) as exc:
            raise MllmError("malformed completion response: %s" % exc) from exc
        return ChatResponse(text=text, finish_reason=finish, usage=data.get("usage"))


class GeminiChatBackend:
    """Gemini-style models/{model}:generateContent dialect."""

    def __init__(
        self,
        base_url: str,
        api_key_env: str | None = None,
        timeout_s: float = 120.0,
        transport: httpx.BaseTransport | None = None,
    ) -> None:
        self._base_url = base_url.rstrip("/")
        self._api_key_env = api_key_env
        self._client = httpx.Client(timeout=timeout_s, transport=transport)

    def _payload(self, request: ChatRequest) -> dict[str, Any]:
        contents = []
        system_texts: list[str] = []
        for message in request.messages:
            if message.role == "system":
                for part in message.parts:
                    if part.kind != "text":
                        raise MllmError("system messages must be text-only")
                    system_texts.append(part.text or "")
                continue
            parts: list[dict[str, Any]] = []
            for part in message.parts:
                if part.kind == "text":
                    parts.append({"text": part.text})
                else:
                    parts.append(
                        {
                            "inline_data": {
                                "mime_type": "image/jpeg",
                                "data": base64.b64encode(part.image or b"").decode(
                                    "ascii"
                                ),
                            }
                        }
                    )
            role = "model" if message.role == "assistant" else "user"
            contents.append({"role": role, "parts": parts})
        payload: dict[str, Any] = {"contents": contents}
        if system_texts:
            payload["systemInstruction"] = {
                "parts": [{"text": t} for t in system_texts]
            }
        generation: dict[str, Any] = {}
        if request.temperature is not None:
            generation["temperature"] = request.temperature
        if request.top_p is not None:
            generation["topP"] = request.top_p
        if generation:
            payload["generationConfig"] = generation
        return payload

    def complete(self, request: ChatRequest) -> ChatResponse:
        headers = {}
        key = _api_key(self._api_key_env)
        if key:
            headers["x-goog-api-key"] = key
        url = "%s/models/%s:generateContent" % (self._base_url, request.model_id)
        try:
            response = self._client.post(
                url, json=self._payload(request), headers=headers
            )
        except httpx.TimeoutException as exc:
            raise TransientBackendError("request timed out: %s" % exc) from exc
        except httpx.HTTPError as exc:
            raise TransientBackendError("transport failure: %s" % exc) from exc
        if response.status_code != 200:
            raise _classify_status(response.status_code, response.text[:200])
        data = response.json()
        try:
            candidate = data["candidates"][0]
            parts = candidate["content"]["parts"]
            text = "".join(p.get("text", "") for p in parts)
            finish = candidate.get("finishReason", "stop").lower()
        except (KeyError, IndexError, TypeError) as exc:
            raise MllmError("malformed generateContent response: %s" % exc) from exc
        finish = {"max_tokens": "length"}.get(finish, finish)
        return ChatResponse(
            text=text, finish_reason=finish, usage=data.get("usageMetadata")
        )


def backend_from_config(
    config: Mapping[str, Any], transport: httpx.BaseTransport | None = None
) -> ChatBackend:
    """Build a backend from {dialect, base_url, api_key_env, timeout_s, ...}."""
    dialect = config.get("dialect")
    if dialect == "mock":
        return ScriptedMockBackend.from_file(config["script_path"])
    if dialect not in ("openai", "gemini"):
        raise MllmError("unknown backend dialect: %r" % dialect)
    kwargs = dict(
        base_url=config["base_url"],
        api_key_env=config.get("api_key_env"),
        timeout_s=float(config.get("timeout_s", 120.0)),
        transport=transport,
    )
    if dialect == "openai":
        return OpenAIChatBackend(**kwargs)
    return GeminiChatBackend(**kwargs)


class MllmClient:
    """Shareable client: one backend, a retry policy, bounded concurrency."""

    def __init__(
        self,
        backend: ChatBackend,
        retry_policy: RetryPolicy | None = None,
        max_concurrency: int = 4,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        self.backend = backend
        self.retry_policy = retry_policy or RetryPolicy()
        self._sleep = sleep
        self._semaphore = threading.BoundedSemaphore(max_concurrency)

    def send(self, request: ChatRequest) -> ChatResponse:
        with self._semaphore:
            return send(request, self.backend, self.retry_policy, sleep=self._sleep)

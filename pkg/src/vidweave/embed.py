"""Joint image-text embeddings and deterministic top-k cosine retrieval.

Embeddings power two things: building a rough key-video by ranking sampled
frames against the first-stage reasoning text, and exporting feature vectors
to CSV for external visualization. Backends are pluggable; the hash backend
derives a seeded pseudo-random unit vector from the input digest so the whole
pipeline runs offline and reproducibly.
"""

from __future__ import annotations

import base64
import csv
import hashlib
import math
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import httpx

from .video import Frame, KeyVideoSpec


class EmbedError(Exception):
    """Raised for backend failures, dimension mismatches, and bad inputs."""


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]
    normalized: bool

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", tuple(self.values))
        if not self.values:
            raise ValueError("embedding vector must not be empty")
        if self.normalized and abs(_l2_norm(self.values) - 1.0) > 1e-6:
            raise ValueError("vector marked normalized but L2 norm is not 1")

    @property
    def dim(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class BackendManifest:
    name: str
    dim: int
    max_concurrency: int = 1

    @classmethod
    def from_dict(cls, data: dict) -> "BackendManifest":
        return cls(
            name=str(data["name"]),
            dim=int(data["dim"]),
            max_concurrency=int(data.get("max_concurrency", 1)),
        )


class EmbeddingBackend(Protocol):
    def manifest(self) -> BackendManifest: ...

    def raw_embed(self, kind: str, payload: bytes) -> list[float]:
        """Embed a payload ("text": utf-8 bytes, "image": JPEG bytes)."""
        ...


def _l2_norm(values: Sequence[float]) -> float:
    return math.sqrt(math.fsum(v * v for v in values))


def _normalize(values: Sequence[float]) -> tuple[float, ...]:
    norm = _l2_norm(values)
    if norm == 0.0:
        raise EmbedError("cannot normalize a zero vector")
    return tuple(v / norm for v in values)


class HashEmbeddingBackend:
    """Deterministic offline backend: input digest seeds a Gaussian vector."""

    def __init__(self, dim: int = 8, name: str = "hash-mock") -> None:
        if dim < 1:
            raise ValueError("dim must be positive")
        self._dim = dim
        self._name = name

    def manifest(self) -> BackendManifest:
        return BackendManifest(name=self._name, dim=self._dim, max_concurrency=64)

    def raw_embed(self, kind: str, payload: bytes) -> list[float]:
        digest = hashlib.sha256(kind.encode("ascii") + b"\0" + payload).digest()
        rng = random.Random(int.from_bytes(digest, "big"))
        return [rng.gauss(0.0, 1.0) for _ in range(self._dim)]


class RemoteEmbeddingBackend:
    """HTTP backend: POST {"kind","payload"} to an endpoint, get {"vector"}."""

    def __init__(
        self,
        endpoint: str,
        dim: int,
        name: str = "remote",
        max_concurrency: int = 1,
        timeout_s: float = 30.0,
        transport: httpx.BaseTransport | None = None,
    ) -> None:
        self._endpoint = endpoint
        self._manifest = BackendManifest(name, dim, max_concurrency)
        self._client = httpx.Client(timeout=timeout_s, transport=transport)

    def manifest(self) -> BackendManifest:
        return self._manifest

    def raw_embed(self, kind: str, payload: bytes) -> list[float]:
        if kind == "text":
            wire_payload = payload.decode("utf-8")
        else:
            wire_payload = base64.b64encode(payload).decode("ascii")
        try:
            response = self._client.post(
                self._endpoint, json={"kind": kind, "payload": wire_payload}
            )
            response.raise_for_status()
        except httpx.HTTPError as exc:
            raise EmbedError("embedding backend unreachable: %s" % exc) from exc
        data = response.json()
        vector = data.get("vector") if isinstance(data, dict) else None
        if not isinstance(vector, list):
            raise EmbedError("malformed embedding response: missing vector")
        return [float(v) for v in vector]


def _embed(kind: str, payload: bytes, backend: EmbeddingBackend) -> EmbeddingVector:
    values = backend.raw_embed(kind, payload)
    declared = backend.manifest().dim
    if len(values) != declared:
        raise EmbedError(
            "backend returned dim %d but manifest declares %d"
            % (len(values), declared)
        )
    return EmbeddingVector(values=_normalize(values), normalized=True)


def embed_text(text: str, backend: EmbeddingBackend) -> EmbeddingVector:
    if not text:
        raise EmbedError("empty text")
    return _embed("text", text.encode("utf-8"), backend)


def embed_image(image: bytes, backend: EmbeddingBackend) -> EmbeddingVector:
    if not image:
        raise EmbedError("empty image")
    return _embed("image", image, backend)


def cosine_similarity(a: Sequence[float], b: Sequence[float]) -> float:
    if len(a) != len(b):
        raise EmbedError("dimension mismatch: %d vs %d" % (len(a), len(b)))
    dot = math.fsum(x * y for x, y in zip(a, b))
    norm_a, norm_b = _l2_norm(a), _l2_norm(b)
    if norm_a == 0.0 or norm_b == 0.0:
        raise EmbedError("cosine undefined for zero vectors")
    return dot / (norm_a * norm_b)


def retrieve_top_k(
    query: EmbeddingVector, candidates: Sequence[EmbeddingVector], k: int
) -> list[int]:
    """Indices of the k most cosine-similar candidates, best first.

    Exact ties go to the lower index, so results are reproducible.
    """
    if k < 1 or k > len(candidates):
        raise EmbedError("k out of range: %d for %d candidates" % (k, len(candidates)))
    for candidate in candidates:
        if candidate.dim != query.dim:
            raise EmbedError(
                "dimension mismatch: query %d vs candidate %d"
                % (query.dim, candidate.dim)
            )
    similarities = [
        cosine_similarity(query.values, c.values) for c in candidates
    ]
    order = sorted(range(len(candidates)), key=lambda i: (-similarities[i], i))
    return order[:k]


def build_rough_key_video(
    initial_reasoning: str,
    frames: Sequence[Frame],
    backend: EmbeddingBackend,
    k: int = 4,
) -> KeyVideoSpec:
    """Rank frames against the reasoning text and keep the top k, in
    temporal order."""
    if not frames:
        raise EmbedError("no frames to retrieve from")
    query = embed_text(initial_reasoning, backend)
    candidates = [embed_image(image, backend) for _, image in frames]
    top = retrieve_top_k(query, candidates, k)
    indices = sorted(frames[i][0].index for i in top)
    return KeyVideoSpec(
        video_id=frames[0][0].video_id, frame_indices=tuple(indices)
    )


def export_embeddings(
    items: Iterable[tuple[str, str, EmbeddingVector]], path: str | Path
) -> None:
    """Write (id, kind, vector) rows as CSV with header id,kind,d0..d{n-1}."""
    items = list(items)
    dim = None
    for item_id, kind, vector in items:
        if kind not in ("text", "frame"):
            raise EmbedError("kind must be 'text' or 'frame', got %r" % kind)
        if dim is None:
            dim = vector.dim
        elif vector.dim != dim:
            raise EmbedError(
                "mixed dimensions in export: %d vs %d" % (vector.dim, dim)
            )
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        header = ["id", "kind"] + ["d%d" % i for i in range(dim or 0)]
        writer.writerow(header)
        for item_id, kind, vector in items:
            writer.writerow([item_id, kind] + [repr(v) for v in vector.values])

"""Benchmark construction: key-frame recognition and the review workflow.

Building a benchmark item runs in three steps: an MLLM proposes which sampled
frames support the question's reasoning, the frames and proposal land in a
review workspace on disk, and three reviewers score the assembled key-video
per round until it is retained. The workspace is the unit the review HTTP
service and the exporter operate on.
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .dataset import SCHEMA_VERSION, Sample, sample_to_record
from .mllm import ChatRequest, Message, MllmClient, image_part, text_part
from .strategies import PromptTemplate, render_options
from .video import Frame


class BenchError(Exception):
    """Raised for bad inputs to the build or review operations."""


class UnknownSampleError(BenchError):
    """Raised when a sample id has no item in the workspace."""


class ReviewStateError(BenchError):
    """Raised for submissions that violate the review state machine."""


class ExportError(BenchError):
    """Raised when a workspace is not exportable."""


RETAINED = "Retained"
REVISE = "Revise"

DEFAULT_THRESHOLD = 80


# ------------------------------------------------------------------ guideline


@dataclass(frozen=True)
class GuidelineBand:
    low: int
    high: int
    description: str

    @property
    def label(self) -> str:
        return "%d-%d" % (self.low, self.high)

    def to_dict(self) -> dict[str, Any]:
        return {"range": self.label, "description": self.description}


def review_guideline() -> tuple[GuidelineBand, ...]:
    """Five scoring bands reviewers see next to the score inputs."""
    return (
        GuidelineBand(
            0, 60,
            "The selected frames have little connection to the question;"
            " the answer cannot be grounded in them.",
        ),
        GuidelineBand(
            60, 70,
            "A few frames relate to the question, but evidence needed by the"
            " reasoning is missing or buried among unrelated frames.",
        ),
        GuidelineBand(
            70, 80,
            "Most frames are on point; small gaps remain or some frames add"
            " nothing.",
        ),
        GuidelineBand(
            80, 90,
            "The frames support the full reasoning chain with at most minor"
            " redundancy.",
        ),
        GuidelineBand(
            90, 100,
            "Every frame carries evidence the reasoning uses and nothing"
            " essential is absent.",
        ),
    )


# ---------------------------------------------------------------- recognition


@dataclass(frozen=True)
class KeyFrameProposal:
    sample_id: str
    proposed_indices: tuple[int, ...]
    raw_model_text: str
    proposer_model_id: str
    warnings: tuple[str, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "sample_id": self.sample_id,
            "proposed_indices": list(self.proposed_indices),
            "raw_model_text": self.raw_model_text,
            "proposer_model_id": self.proposer_model_id,
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "KeyFrameProposal":
        return cls(
            sample_id=data["sample_id"],
            proposed_indices=tuple(data["proposed_indices"]),
            raw_model_text=data["raw_model_text"],
            proposer_model_id=data["proposer_model_id"],
            warnings=tuple(data.get("warnings", ())),
        )


def _format_seconds(t: float) -> str:
    return str(int(t)) if float(t).is_integer() else repr(float(t))


def build_recognition_request(
    sample: Sample,
    frames: Sequence[Frame],
    template: PromptTemplate,
    model_id: str,
) -> ChatRequest:
    """Prompt layout: every sampled frame labeled with index and timestamp,
    then question, options, the reasoning steps, and the correct answer."""
    if not frames:
        raise BenchError("no frames to propose from")
    if not sample.gold_reasoning:
        raise BenchError("sample %s has no gold reasoning" % sample.id)
    if not sample.gold_answer:
        raise BenchError("sample %s has no gold answer" % sample.id)
    parts = []
    for ref, image in frames:
        parts.append(
            text_part(
                "Frame %d (t=%ss):" % (ref.index, _format_seconds(ref.timestamp))
            )
        )
        parts.append(image_part(image, frame=ref))
    parts.append(text_part("Question: %s" % sample.question))
    parts.append(text_part("Options:\n%s" % render_options(sample.options)))
    parts.append(text_part("Reasoning steps:\n%s" % sample.gold_reasoning))
    parts.append(text_part("Answer: %s" % sample.gold_answer))
    return ChatRequest(
        model_id=model_id,
        messages=(
            Message(role="system", parts=(text_part(template.body),)),
            Message(role="user", parts=tuple(parts)),
        ),
    )


def parse_frame_indices(
    text: str, valid_indices: Iterable[int]
) -> tuple[tuple[int, ...], tuple[str, ...]]:
    """Pull integer indices out of model text, in order of appearance.

    Out-of-range values are dropped with a warning each; the survivors are
    deduplicated and sorted. No parseable integer at all, or nothing left
    after the range filter, is an error.
    """
    valid = set(valid_indices)
    found = [int(m) for m in re.findall(r"\d+", text)]
    if not found:
        raise BenchError("no frame indices in model response: %r" % text)
    warnings = []
    kept = []
    for index in found:
        if index in valid:
            kept.append(index)
        else:
            warnings.append("dropped %d" % index)
    if not kept:
        raise BenchError(
            "all proposed frame indices out of range: %r" % text
        )
    return tuple(sorted(set(kept))), tuple(warnings)


def recognize_key_frames(
    sample: Sample,
    frames: Sequence[Frame],
    client: MllmClient,
    template: PromptTemplate,
    model_id: str,
) -> KeyFrameProposal:
    request = build_recognition_request(sample, frames, template, model_id)
    response = client.send(request)
    indices, warnings = parse_frame_indices(
        response.text, (ref.index for ref, _ in frames)
    )
    return KeyFrameProposal(
        sample_id=sample.id,
        proposed_indices=indices,
        raw_model_text=response.text,
        proposer_model_id=model_id,
        warnings=warnings,
    )


# --------------------------------------------------------------------- policy


def review_policy(scores: Sequence[int], threshold: int = DEFAULT_THRESHOLD) -> str:
    """Retained iff every score strictly exceeds the threshold.

    A score equal to the threshold triggers revision; the boundary is
    deliberately strict.
    """
    if len(scores) != 3:
        raise BenchError("expected exactly three scores, got %d" % len(scores))
    for score in scores:
        if isinstance(score, bool) or not isinstance(score, int):
            raise BenchError("score must be an integer: %r" % (score,))
        if not 0 <= score <= 100:
            raise BenchError("score out of range: %d" % score)
    return RETAINED if min(scores) > threshold else REVISE


def compute_build_key(
    sample: Sample,
    frames: Sequence[Frame],
    proposer_model_id: str,
    template_version: str,
) -> str:
    """Content address of one build input; unchanged inputs rebuild to the
    same key, which makes rebuilds no-ops."""
    digest = hashlib.sha256()
    record = json.dumps(
        sample_to_record(sample), sort_keys=True, separators=(",", ":"),
        ensure_ascii=True,
    )
    digest.update(record.encode("ascii"))
    for ref, image in frames:
        digest.update(b"\0frame\0")
        digest.update(str(ref.index).encode("ascii"))
        digest.update(b"\0")
        digest.update(hashlib.sha256(image).digest())
    digest.update(b"\0" + proposer_model_id.encode("utf-8"))
    digest.update(b"\0" + template_version.encode("utf-8"))
    return digest.hexdigest()


# ------------------------------------------------------------------ workspace

STATUS_PENDING = "pending"
STATUS_REVISE = "revise"
STATUS_RETAINED = "retained"

_MANIFEST = "manifest.json"
_SAFE_ID = re.compile(r"[A-Za-z0-9._-]+\Z")


def _write_json(path: Path, payload: Mapping[str, Any]) -> None:
    # atomic replace so readers never see a torn item file
    tmp = path.with_suffix(".tmp")
    tmp.write_text(
        json.dumps(payload, ensure_ascii=False, indent=2) + "\n",
        encoding="utf-8",
    )
    tmp.replace(path)


class ReviewWorkspace:
    """On-disk review state: one JSON file per item plus its frame images.

    Layout:
        manifest.json
        items/{sample_id}.json
        frames/{sample_id}/frame_0000.jpg ...

    Writes are serialized per sample; reads go straight to disk. Item files
    are replaced atomically, so concurrent readers see either the previous
    or the new state, never a partial one.
    """

    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)
        manifest_path = self.root / _MANIFEST
        if not manifest_path.is_file():
            raise BenchError("not a review workspace: %s" % self.root)
        self.manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    @classmethod
    def create(
        cls,
        root: str | Path,
        threshold: int = DEFAULT_THRESHOLD,
        fps: float = 1.0,
    ) -> "ReviewWorkspace":
        root = Path(root)
        (root / "items").mkdir(parents=True, exist_ok=True)
        (root / "frames").mkdir(parents=True, exist_ok=True)
        _write_json(
            root / _MANIFEST,
            {
                "schema_version": SCHEMA_VERSION,
                "threshold": threshold,
                "fps": fps,
            },
        )
        return cls(root)

    @property
    def threshold(self) -> int:
        return int(self.manifest.get("threshold", DEFAULT_THRESHOLD))

    @property
    def fps(self) -> float:
        return float(self.manifest.get("fps", 1.0))

    def _lock_for(self, sample_id: str) -> threading.Lock:
        with self._locks_guard:
            return self._locks.setdefault(sample_id, threading.Lock())

    def _item_path(self, sample_id: str) -> Path:
        # ids become file names, so anything path-like is rejected outright
        if not _SAFE_ID.match(sample_id):
            raise UnknownSampleError("unknown sample: %s" % sample_id)
        return self.root / "items" / ("%s.json" % sample_id)

    def frames_dir(self, sample_id: str) -> Path:
        if not _SAFE_ID.match(sample_id):
            raise UnknownSampleError("unknown sample: %s" % sample_id)
        return self.root / "frames" / sample_id

    # -- build side

    def add_item(
        self,
        sample: Sample,
        frames: Sequence[Frame],
        proposal: KeyFrameProposal,
        build_key: str = "",
    ) -> None:
        if proposal.sample_id != sample.id:
            raise BenchError(
                "proposal %s does not belong to sample %s"
                % (proposal.sample_id, sample.id)
            )
        frames_dir = self.frames_dir(sample.id)
        frames_dir.mkdir(parents=True, exist_ok=True)
        for ref, image in frames:
            (frames_dir / ("frame_%04d.jpg" % ref.index)).write_bytes(image)
        item = {
            "schema_version": SCHEMA_VERSION,
            "sample": sample_to_record(sample),
            "frame_count": len(frames),
            "proposal": proposal.to_dict(),
            "rounds": [
                {
                    "round": 1,
                    "spec": list(proposal.proposed_indices),
                    "scores": None,
                    "decision": None,
                }
            ],
            "status": STATUS_PENDING,
            "build_key": build_key,
        }
        _write_json(self._item_path(sample.id), item)

    def has_item(self, sample_id: str) -> bool:
        return self._item_path(sample_id).is_file()

    def build_key_of(self, sample_id: str) -> str:
        return str(self.get_item(sample_id).get("build_key", ""))

    # -- read side

    def item_ids(self) -> list[str]:
        items = self.root / "items"
        return sorted(p.stem for p in items.glob("*.json"))

    def get_item(self, sample_id: str) -> dict[str, Any]:
        path = self._item_path(sample_id)
        if not path.is_file():
            raise UnknownSampleError("unknown sample: %s" % sample_id)
        return json.loads(path.read_text(encoding="utf-8"))

    def pending_ids(self) -> list[str]:
        return [
            sample_id
            for sample_id in self.item_ids()
            if self.get_item(sample_id)["status"] != STATUS_RETAINED
        ]

    def retained_ids(self) -> list[str]:
        return [
            sample_id
            for sample_id in self.item_ids()
            if self.get_item(sample_id)["status"] == STATUS_RETAINED
        ]

    def frame_paths(self, sample_id: str) -> list[Path]:
        return sorted(self.frames_dir(sample_id).glob("frame_*.jpg"))

    # -- review side

    def submit_scores(
        self,
        sample_id: str,
        round_number: int,
        scores: Sequence[tuple[str, int]],
    ) -> str:
        """Record one round's score triple and compute the decision.

        The triple is atomic: all three reviewer scores arrive together, and
        the first complete submission for a round wins.
        """
        if len(scores) != 3:
            raise BenchError(
                "expected exactly three scores, got %d" % len(scores)
            )
        reviewer_ids = [reviewer for reviewer, _ in scores]
        if len(set(reviewer_ids)) != 3:
            raise BenchError("duplicate reviewer_id within a round")
        with self._lock_for(sample_id):
            item = self.get_item(sample_id)
            current = item["rounds"][-1]
            if item["status"] == STATUS_RETAINED:
                raise ReviewStateError("sample %s is already retained" % sample_id)
            if current["decision"] is not None:
                raise ReviewStateError(
                    "round %d already decided; submit a revision first"
                    % current["round"]
                )
            if round_number != current["round"]:
                raise ReviewStateError(
                    "round mismatch: submission for round %d, current round is %d"
                    % (round_number, current["round"])
                )
            decision = review_policy(
                [score for _, score in scores], self.threshold
            )
            current["scores"] = [
                {"reviewer_id": reviewer, "score": score}
                for reviewer, score in scores
            ]
            current["decision"] = decision
            item["status"] = (
                STATUS_RETAINED if decision == RETAINED else STATUS_REVISE
            )
            _write_json(self._item_path(sample_id), item)
            return decision

    def submit_revision(
        self, sample_id: str, frame_indices: Sequence[int]
    ) -> int:
        """Open the next round with a revised key-video spec.

        Only legal right after a Revise decision. Indices are normalized
        (deduplicated, sorted) and must name frames the video actually has.
        """
        with self._lock_for(sample_id):
            item = self.get_item(sample_id)
            current = item["rounds"][-1]
            if current["decision"] != REVISE:
                raise ReviewStateError(
                    "revision requires a prior revise decision on sample %s"
                    % sample_id
                )
            normalized = sorted(set(int(i) for i in frame_indices))
            if not normalized:
                raise BenchError("revision needs at least one frame index")
            frame_count = int(item["frame_count"])
            for index in normalized:
                if not 0 <= index < frame_count:
                    raise BenchError("frame index out of range: %d" % index)
            next_round = current["round"] + 1
            item["rounds"].append(
                {
                    "round": next_round,
                    "spec": normalized,
                    "scores": None,
                    "decision": None,
                }
            )
            item["status"] = STATUS_PENDING
            _write_json(self._item_path(sample_id), item)
            return next_round

    # -- aggregate side

    def benchmark_average(self) -> float | None:
        """Mean of final-round mean-scores across retained samples, one
        decimal, computed on exact integer ratios. None when nothing is
        retained yet."""
        from fractions import Fraction

        from ._util import round1

        total = 0
        retained = 0
        for sample_id in self.retained_ids():
            final = self.get_item(sample_id)["rounds"][-1]
            total += sum(entry["score"] for entry in final["scores"])
            retained += 1
        if retained == 0:
            return None
        return round1(Fraction(total, 3 * retained))

    def stats(self) -> dict[str, Any]:
        ids = self.item_ids()
        statuses = [self.get_item(sample_id)["status"] for sample_id in ids]
        return {
            "total": len(ids),
            "pending_scores": statuses.count(STATUS_PENDING),
            "awaiting_revision": statuses.count(STATUS_REVISE),
            "retained": statuses.count(STATUS_RETAINED),
            "benchmark_average": self.benchmark_average(),
        }

    def export_benchmark(self, path: str | Path) -> int:
        """Write retained items as dataset JSONL with the final key-video as
        the oracle. Refuses while any item is still undecided or in
        revision."""
        unfinished = [
            sample_id
            for sample_id in self.item_ids()
            if self.get_item(sample_id)["status"] != STATUS_RETAINED
        ]
        if unfinished:
            raise ExportError(
                "cannot export, unresolved samples: %s" % ", ".join(unfinished)
            )
        lines = []
        for sample_id in self.item_ids():
            item = self.get_item(sample_id)
            record = dict(item["sample"])
            record["oracle_key_video"] = {
                "frame_indices": list(item["rounds"][-1]["spec"])
            }
            lines.append(json.dumps(record, ensure_ascii=False))
        path = Path(path)
        path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
        return len(lines)

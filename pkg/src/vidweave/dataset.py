"""Loading, validation, and summary statistics for video-QA samples.

The on-disk format is JSONL, one sample per line (schema v1):

    {"id": ..., "video_id": ..., "question": ..., "options": [{"label","text"}...],
     "gold_answer": ..., "category": ..., "gold_reasoning"?, "oracle_key_video"?}

Unknown fields are preserved so that export(load(file)) round-trips. A sample
may load with an empty question, empty options, or empty gold answer; such
structurally incomplete samples are filtered later by remove_incomplete().
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

from ._util import round1_ratio

SCHEMA_VERSION = "1"

# Category abbreviations shipped as the default registry, in report order.
DEFAULT_CATEGORY_NAMES: tuple[str, ...] = (
    "Narra.", "Event", "Ingre.", "Causal", "Theme", "Conte.", "Influ.",
    "Role", "Inter.", "Behav.", "Emoti.", "Cook.", "Traff.", "Situa.",
)


class DatasetError(Exception):
    """Raised for dataset-level failures (unreadable file, duplicate ids)."""


class SchemaVersionError(DatasetError):
    """Raised when a loader is asked for a schema version it does not speak."""


@dataclass(frozen=True)
class CategoryRegistry:
    """Ordered set of category names; extensible only by constructing anew."""

    names: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.names:
            raise ValueError("category registry must not be empty")
        if len(set(self.names)) != len(self.names):
            raise ValueError("category names must be distinct")

    @classmethod
    def default(cls) -> "CategoryRegistry":
        return cls(names=DEFAULT_CATEGORY_NAMES)

    def __contains__(self, name: object) -> bool:
        return name in self.names

    def __iter__(self):
        return iter(self.names)

    def __len__(self) -> int:
        return len(self.names)


@dataclass(frozen=True)
class Option:
    label: str
    text: str


@dataclass(frozen=True, eq=True)
class Sample:
    """One multiple-choice video-QA item."""

    id: str
    video_id: str
    question: str
    options: tuple[Option, ...]
    gold_answer: str
    category: str
    gold_reasoning: str | None = None
    # Oracle key-video as frame indices into the 1-FPS sampled sequence.
    oracle_key_video: tuple[int, ...] | None = None
    # Unknown JSONL fields, preserved verbatim for round-tripping.
    extra: Mapping[str, Any] = field(default_factory=dict)

    def option_labels(self) -> tuple[str, ...]:
        return tuple(opt.label for opt in self.options)


@dataclass(frozen=True)
class LineError:
    line: int
    message: str


@dataclass(frozen=True)
class LoadResult:
    samples: tuple[Sample, ...]
    errors: tuple[LineError, ...]


def _expected_labels(count: int) -> tuple[str, ...]:
    return tuple(chr(ord("A") + i) for i in range(count))


def _parse_options(raw: Any) -> tuple[Option, ...]:
    if not isinstance(raw, list):
        raise ValueError("options must be a list")
    options = []
    for entry in raw:
        if not isinstance(entry, dict):
            raise ValueError("option entries must be objects")
        label = entry.get("label")
        text = entry.get("text")
        if not isinstance(label, str) or not isinstance(text, str):
            raise ValueError("option label and text must be strings")
        options.append(Option(label=label, text=text))
    labels = tuple(opt.label for opt in options)
    if options and labels != _expected_labels(len(options)):
        raise ValueError(
            "option labels must run A, B, C, ... in order, got %r" % (labels,)
        )
    return tuple(options)


def _parse_oracle_key_video(raw: Any) -> tuple[int, ...]:
    if not isinstance(raw, dict) or "frame_indices" not in raw:
        raise ValueError("oracle_key_video must be an object with frame_indices")
    indices = raw["frame_indices"]
    if not isinstance(indices, list) or not indices:
        raise ValueError("frame_indices must be a non-empty list")
    for value in indices:
        if not isinstance(value, int) or isinstance(value, bool) or value < 0:
            raise ValueError("frame indices must be non-negative integers")
    for a, b in zip(indices, indices[1:]):
        if b <= a:
            raise ValueError("frame indices must be strictly increasing")
    return tuple(indices)


_KNOWN_KEYS = frozenset(
    {"id", "video_id", "question", "options", "gold_answer", "category",
     "gold_reasoning", "oracle_key_video"}
)


def _parse_record(record: Any, registry: CategoryRegistry) -> Sample:
    if not isinstance(record, dict):
        raise ValueError("record is not a JSON object")

    sample_id = record.get("id")
    if not isinstance(sample_id, str) or not sample_id:
        raise ValueError("id must be a non-empty string")

    category = record.get("category")
    if not isinstance(category, str):
        raise ValueError("category must be a string")
    if category not in registry:
        raise ValueError("unknown category: %r" % category)

    def _str_field(key: str) -> str:
        value = record.get(key, "")
        if not isinstance(value, str):
            raise ValueError("%s must be a string" % key)
        return value

    gold_reasoning = record.get("gold_reasoning")
    if gold_reasoning is not None and not isinstance(gold_reasoning, str):
        raise ValueError("gold_reasoning must be a string")

    oracle = None
    if record.get("oracle_key_video") is not None:
        oracle = _parse_oracle_key_video(record["oracle_key_video"])

    extra = {k: v for k, v in record.items() if k not in _KNOWN_KEYS}
    return Sample(
        id=sample_id,
        video_id=_str_field("video_id"),
        question=_str_field("question"),
        options=_parse_options(record.get("options", [])),
        gold_answer=_str_field("gold_answer"),
        category=category,
        gold_reasoning=gold_reasoning,
        oracle_key_video=oracle,
        extra=extra,
    )


def load_samples(
    path: str | Path,
    schema_version: str = SCHEMA_VERSION,
    registry: CategoryRegistry | None = None,
) -> LoadResult:
    """Load a JSONL dataset, collecting per-line parse failures.

    Raises DatasetError for file-level problems (unreadable file, duplicate
    ids, unsupported schema version); individual malformed lines are returned
    in LoadResult.errors instead of aborting the load.
    """
    if schema_version != SCHEMA_VERSION:
        raise SchemaVersionError(
            "unsupported schema version %r (loader speaks %r)"
            % (schema_version, SCHEMA_VERSION)
        )
    registry = registry or CategoryRegistry.default()
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DatasetError("cannot read dataset file %s: %s" % (path, exc)) from exc

    samples: list[Sample] = []
    errors: list[LineError] = []
    # Split on \n only: text fields may legally contain   and friends,
    # which str.splitlines() would treat as record boundaries.
    for line_no, line in enumerate(text.split("\n"), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            errors.append(LineError(line_no, "invalid JSON: %s" % exc.msg))
            continue
        try:
            samples.append(_parse_record(record, registry))
        except ValueError as exc:
            errors.append(LineError(line_no, str(exc)))

    seen: dict[str, int] = {}
    duplicates = []
    for sample in samples:
        seen[sample.id] = seen.get(sample.id, 0) + 1
    duplicates = sorted(sid for sid, count in seen.items() if count > 1)
    if duplicates:
        raise DatasetError("duplicate sample ids: %s" % ", ".join(duplicates))

    return LoadResult(samples=tuple(samples), errors=tuple(errors))


def sample_to_record(sample: Sample) -> dict[str, Any]:
    record: dict[str, Any] = {
        "id": sample.id,
        "video_id": sample.video_id,
        "question": sample.question,
        "options": [{"label": o.label, "text": o.text} for o in sample.options],
        "gold_answer": sample.gold_answer,
        "category": sample.category,
    }
    if sample.gold_reasoning is not None:
        record["gold_reasoning"] = sample.gold_reasoning
    if sample.oracle_key_video is not None:
        record["oracle_key_video"] = {"frame_indices": list(sample.oracle_key_video)}
    record.update(sample.extra)
    return record


def export_samples(samples: Iterable[Sample], path: str | Path) -> None:
    """Write samples as JSONL, the inverse of load_samples for valid data."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for sample in samples:
            fh.write(json.dumps(sample_to_record(sample), ensure_ascii=False))
            fh.write("\n")


def remove_incomplete(
    samples: Iterable[Sample], video_index: set[str]
) -> tuple[list[Sample], list[tuple[Sample, str]]]:
    """Split samples into (valid, rejected-with-reason).

    A sample is rejected when its video is unknown, its question is empty,
    it has no options, or its gold answer is missing or not among the option
    labels. Total and idempotent: every input lands in exactly one list, and
    valid samples pass a second application unchanged.
    """
    valid: list[Sample] = []
    rejected: list[tuple[Sample, str]] = []
    for sample in samples:
        if sample.video_id not in video_index:
            rejected.append((sample, "unknown video"))
        elif not sample.question:
            rejected.append((sample, "missing question"))
        elif not sample.options:
            rejected.append((sample, "missing options"))
        elif not sample.gold_answer:
            rejected.append((sample, "missing answer"))
        elif sample.gold_answer not in sample.option_labels():
            rejected.append((sample, "answer not among options"))
        else:
            valid.append(sample)
    return valid, rejected


@dataclass(frozen=True)
class CategoryStats:
    video_count: int
    key_frame_count: int
    avg_frames: float


@dataclass(frozen=True)
class DatasetStats:
    per_category: dict[str, CategoryStats]
    total_videos: int
    total_key_frames: int
    overall_avg_frames: float


def dataset_stats(
    samples: Iterable[Sample], registry: CategoryRegistry | None = None
) -> DatasetStats:
    """Per-category video and key-frame counts with 1-decimal averages.

    Videos are counted distinct per category; key frames are summed over
    samples' oracle key-videos. Totals are the sums of the per-category
    values, and every average is rounded half-up to one decimal (0.0 for
    empty categories).
    """
    registry = registry or CategoryRegistry.default()
    videos: dict[str, set[str]] = {name: set() for name in registry}
    frames: dict[str, int] = {name: 0 for name in registry}
    for sample in samples:
        if sample.category not in videos:
            raise DatasetError("sample category not in registry: %r" % sample.category)
        videos[sample.category].add(sample.video_id)
        if sample.oracle_key_video is not None:
            frames[sample.category] += len(sample.oracle_key_video)

    per_category: dict[str, CategoryStats] = {}
    for name in registry:
        v, f = len(videos[name]), frames[name]
        avg = round1_ratio(f, v) if v else 0.0
        per_category[name] = CategoryStats(v, f, avg)

    total_videos = sum(s.video_count for s in per_category.values())
    total_frames = sum(s.key_frame_count for s in per_category.values())
    overall = round1_ratio(total_frames, total_videos) if total_videos else 0.0
    return DatasetStats(
        per_category=per_category,
        total_videos=total_videos,
        total_key_frames=total_frames,
        overall_avg_frames=overall,
    )

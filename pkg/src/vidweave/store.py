"""Run configuration, the on-disk run store, and the resumable runner.

A run is a grid of (sample x strategy) cells executed with bounded workers.
Each finished cell is persisted as one JSON record keyed by a content hash
of everything that determines its output, so re-invoking the same run skips
finished cells and an interrupted run resumes where it stopped.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import threading
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

import yaml
from filelock import FileLock

from .dataset import SCHEMA_VERSION, Sample, sample_to_record
from .strategies import (
    RunRecord,
    StrategyRuntime,
    StrategySpec,
    execute_strategy,
)
from .video import (
    CommandFrameDecoder,
    Frame,
    FramesDirectoryDecoder,
    VideoError,
    sample_video,
)


class ConfigError(Exception):
    """Raised for unreadable, malformed, or incomplete configuration."""


class StoreError(Exception):
    """Raised for run-store conflicts and integrity problems."""


# --------------------------------------------------------------------- config

_ENV_REF = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")


def interpolate_env(value: Any) -> Any:
    """Replace ${NAME} in every string with the environment value; a missing
    variable is an error rather than a silently empty secret."""
    if isinstance(value, str):

        def _lookup(match: re.Match) -> str:
            name = match.group(1)
            if name not in os.environ:
                raise ConfigError("environment variable not set: %s" % name)
            return os.environ[name]

        return _ENV_REF.sub(_lookup, value)
    if isinstance(value, dict):
        return {key: interpolate_env(item) for key, item in value.items()}
    if isinstance(value, list):
        return [interpolate_env(item) for item in value]
    return value


def load_config(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError("config file not found: %s" % path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError("config is not valid YAML: %s" % exc) from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    return interpolate_env(raw)


def config_digest(config: Mapping[str, Any]) -> str:
    """Hash of the fields that determine run outputs.

    Worker count and output paths are deliberately excluded: they change how
    a run executes, not what it produces. Secrets never enter the digest.
    """
    backend = dict(config.get("backend", {}))
    backend.pop("api_key_env", None)
    reduced = {
        "dataset": config.get("dataset"),
        "strategies": sorted(config.get("strategies", [])),
        "backend": backend,
        "embedding": config.get("embedding"),
        "template_version": config.get("template_version", "v1"),
        "retrieval_k": config.get("retrieval_k", 4),
        "temperature": config.get("temperature"),
        "top_p": config.get("top_p"),
        "fps": config.get("fps", 1.0),
    }
    canonical = json.dumps(
        reduced, sort_keys=True, separators=(",", ":"), ensure_ascii=True
    )
    return hashlib.sha256(canonical.encode("ascii")).hexdigest()


# --------------------------------------------------------------------- frames


class FrameProvider:
    """Loads and memoizes sampled frames per video.

    Two source layouts: a root of pre-extracted per-video frame directories,
    or a root of video files handed to an external decoder command.
    """

    def __init__(
        self,
        frames_root: str | Path | None = None,
        videos_root: str | Path | None = None,
        decoder_command: str | None = None,
        fps: float = 1.0,
    ) -> None:
        if frames_root is None and videos_root is None:
            raise ConfigError("a frames_root or videos_root is required")
        if videos_root is not None and decoder_command is None:
            raise ConfigError("videos_root requires a decoder_command")
        self.frames_root = Path(frames_root) if frames_root else None
        self.videos_root = Path(videos_root) if videos_root else None
        self.decoder_command = decoder_command
        self.fps = fps
        self._cache: dict[str, list[Frame]] = {}
        self._lock = threading.Lock()

    def known_video_ids(self) -> set[str]:
        if self.frames_root is not None:
            if not self.frames_root.is_dir():
                return set()
            return {p.name for p in self.frames_root.iterdir() if p.is_dir()}
        assert self.videos_root is not None
        if not self.videos_root.is_dir():
            return set()
        return {p.stem for p in self.videos_root.iterdir() if p.is_file()}

    def _source_for(self, video_id: str) -> tuple[str, Any]:
        if self.frames_root is not None:
            source = self.frames_root / video_id
            if not source.is_dir():
                raise VideoError("no frames directory for video %r" % video_id)
            return str(source), FramesDirectoryDecoder()
        assert self.videos_root is not None
        matches = sorted(self.videos_root.glob(video_id + ".*"))
        if not matches:
            raise VideoError("no video file for %r" % video_id)
        return str(matches[0]), CommandFrameDecoder(self.decoder_command)

    def __call__(self, video_id: str) -> list[Frame]:
        with self._lock:
            if video_id in self._cache:
                return self._cache[video_id]
        source, decoder = self._source_for(video_id)
        frames = sample_video(video_id, source, decoder, fps=self.fps)
        with self._lock:
            self._cache.setdefault(video_id, frames)
            return self._cache[video_id]


# ------------------------------------------------------------------ run store


def cell_cache_key(
    sample: Sample,
    spec: StrategySpec,
    model_id: str,
    template_version: str,
    frames: Sequence[Frame],
    retrieval_k: int = 4,
    temperature: float | None = None,
    top_p: float | None = None,
) -> str:
    """Content hash of one cell's inputs: the sample, the strategy, the
    model, template versions, sampling knobs, and the frame bytes."""
    reduced = {
        "sample": sample_to_record(sample),
        "strategy": spec.slug,
        "model_id": model_id,
        "template_version": template_version,
        "retrieval_k": retrieval_k,
        "temperature": temperature,
        "top_p": top_p,
        "frames": [
            [ref.index, hashlib.sha256(image).hexdigest()]
            for ref, image in frames
        ],
    }
    canonical = json.dumps(
        reduced, sort_keys=True, separators=(",", ":"), ensure_ascii=True
    )
    return hashlib.sha256(canonical.encode("ascii")).hexdigest()


class RunStore:
    """One directory per run: manifest.json plus one record per cell.

    Records live at records/{sample_id}__{strategy_slug}.json and carry the
    cache key they were computed under; a cell is skipped on resume only
    when its stored key matches the freshly computed one.
    """

    def __init__(self, run_dir: str | Path) -> None:
        self.run_dir = Path(run_dir)
        self.records_dir = self.run_dir / "records"
        self.manifest_path = self.run_dir / "manifest.json"

    @classmethod
    def create_or_open(
        cls, run_dir: str | Path, run_id: str, digest: str
    ) -> "RunStore":
        store = cls(run_dir)
        if store.manifest_path.is_file():
            manifest = store.manifest()
            if manifest.get("config_digest") != digest:
                raise StoreError(
                    "run %s already exists with a different configuration"
                    % run_id
                )
            return store
        store.records_dir.mkdir(parents=True, exist_ok=True)
        payload = {
            "schema_version": SCHEMA_VERSION,
            "run_id": run_id,
            "config_digest": digest,
        }
        tmp = store.manifest_path.with_suffix(".tmp")
        tmp.write_text(
            json.dumps(payload, indent=2) + "\n", encoding="utf-8"
        )
        tmp.replace(store.manifest_path)
        return store

    def manifest(self) -> dict[str, Any]:
        if not self.manifest_path.is_file():
            raise StoreError("not a run directory: %s" % self.run_dir)
        return json.loads(self.manifest_path.read_text(encoding="utf-8"))

    @property
    def run_id(self) -> str:
        return str(self.manifest().get("run_id", self.run_dir.name))

    def lock(self) -> FileLock:
        """Single-writer lock for the whole run directory."""
        return FileLock(str(self.run_dir / ".run.lock"))

    def record_path(self, sample_id: str, slug: str) -> Path:
        return self.records_dir / ("%s__%s.json" % (sample_id, slug))

    def has(self, sample_id: str, slug: str, cache_key: str) -> bool:
        """True when the cell is finished under the same inputs.

        Failed records do not count as finished: a cell that errored (say,
        a backend outage) is executed again on the next invocation rather
        than being frozen into the run.
        """
        path = self.record_path(sample_id, slug)
        if not path.is_file():
            return False
        try:
            stored = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError:
            return False
        if stored.get("cache_key") != cache_key:
            return False
        return stored.get("record", {}).get("error") is None

    def put(self, record: RunRecord, cache_key: str) -> None:
        payload = {
            "schema_version": SCHEMA_VERSION,
            "cache_key": cache_key,
            "record": record.to_dict(),
        }
        path = self.record_path(record.sample_id, record.strategy.slug)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(
            json.dumps(payload, ensure_ascii=False, indent=2) + "\n",
            encoding="utf-8",
        )
        tmp.replace(path)

    def get(self, sample_id: str, slug: str) -> RunRecord:
        path = self.record_path(sample_id, slug)
        if not path.is_file():
            raise StoreError("no record for %s under %s" % (sample_id, slug))
        stored = json.loads(path.read_text(encoding="utf-8"))
        return RunRecord.from_dict(stored["record"])

    def load_records(self) -> list[RunRecord]:
        records = []
        for path in sorted(self.records_dir.glob("*.json")):
            stored = json.loads(path.read_text(encoding="utf-8"))
            records.append(RunRecord.from_dict(stored["record"]))
        return records


# --------------------------------------------------------------------- runner


@dataclass
class RunSummary:
    executed: int = 0
    skipped: int = 0
    failed: int = 0
    cells: int = 0

    def to_dict(self) -> dict[str, int]:
        return {
            "cells": self.cells,
            "executed": self.executed,
            "skipped": self.skipped,
            "failed": self.failed,
        }


def run_cells(
    samples: Sequence[Sample],
    specs: Sequence[StrategySpec],
    runtime: StrategyRuntime,
    store: RunStore,
    workers: int = 1,
    template_version: str = "v1",
) -> RunSummary:
    """Execute every (sample x strategy) cell not already in the store.

    All specs are validated before any backend call. Cells run on a worker
    pool; each completed record is flushed to the store as it lands. On
    KeyboardInterrupt the queue is cancelled, in-flight cells are allowed to
    finish and are flushed, and the interrupt is re-raised.
    """
    for spec in specs:
        spec.validate()

    summary = RunSummary()
    todo: list[tuple[Sample, StrategySpec, str]] = []
    for sample in samples:
        frames = runtime.frames_for(sample.video_id)
        for spec in specs:
            key = cell_cache_key(
                sample,
                spec,
                runtime.model_id,
                template_version,
                frames,
                retrieval_k=runtime.retrieval_k,
                temperature=runtime.temperature,
                top_p=runtime.top_p,
            )
            summary.cells += 1
            if store.has(sample.id, spec.slug, key):
                summary.skipped += 1
            else:
                todo.append((sample, spec, key))

    def _store(record: RunRecord, key: str) -> None:
        store.put(record, key)
        summary.executed += 1
        if record.failed:
            summary.failed += 1

    pool = ThreadPoolExecutor(max_workers=max(1, workers))
    futures = {
        pool.submit(execute_strategy, sample, spec, runtime): (sample, spec, key)
        for sample, spec, key in todo
    }
    stored: set[Any] = set()
    try:
        pending = set(futures)
        while pending:
            done, pending = wait(pending, return_when=FIRST_COMPLETED)
            for future in done:
                _, _, key = futures[future]
                record = future.result()
                _store(record, key)
                stored.add(future)
        pool.shutdown(wait=True)
    except BaseException:
        # cancel what has not started, let in-flight cells finish, flush
        # whatever completed, then surface the original interrupt or error
        pool.shutdown(wait=True, cancel_futures=True)
        for future, (_, _, key) in futures.items():
            if future in stored or future.cancelled() or not future.done():
                continue
            if future.exception() is not None:
                continue
            _store(future.result(), key)
        raise
    return summary

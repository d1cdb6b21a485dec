"""HTTP JSON API over a review workspace.

Five endpoints drive the whole recheck workflow: the pending queue, one item
with its frames and guideline, score submission, revision submission, and
aggregate stats. Every response carries schema_version. The browser frontend
consumes exactly this surface and computes no decisions of its own.
"""

from __future__ import annotations

import base64
import io
from pathlib import Path
from typing import Any

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .bench import (
    BenchError,
    ReviewStateError,
    ReviewWorkspace,
    UnknownSampleError,
    review_guideline,
)
from .dataset import SCHEMA_VERSION

THUMBNAIL_EDGE = 192


class ScoreEntry(BaseModel):
    reviewer_id: str
    score: int


class ScoresBody(BaseModel):
    round: int
    scores: list[ScoreEntry]


class RevisionBody(BaseModel):
    frame_indices: list[int]


def _stamp(payload: dict[str, Any]) -> dict[str, Any]:
    payload["schema_version"] = SCHEMA_VERSION
    return payload


def _thumbnail_b64(image: bytes) -> str:
    """Downscale for the gallery; images that PIL cannot decode (synthetic
    test fixtures) are passed through untouched."""
    try:
        from PIL import Image

        with Image.open(io.BytesIO(image)) as loaded:
            loaded.thumbnail((THUMBNAIL_EDGE, THUMBNAIL_EDGE))
            out = io.BytesIO()
            loaded.convert("RGB").save(out, format="JPEG")
            return base64.b64encode(out.getvalue()).decode("ascii")
    except Exception:
        return base64.b64encode(image).decode("ascii")


def _frame_index(path: Path) -> int:
    return int(path.stem.split("_")[1])


def create_app(
    workspace: ReviewWorkspace, static_dir: str | Path | None = None
) -> FastAPI:
    app = FastAPI(title="review service", docs_url=None, redoc_url=None)

    @app.exception_handler(UnknownSampleError)
    async def _unknown(request: Request, exc: UnknownSampleError):
        return JSONResponse(
            status_code=404, content=_stamp({"error": str(exc)})
        )

    @app.exception_handler(ReviewStateError)
    async def _conflict(request: Request, exc: ReviewStateError):
        return JSONResponse(
            status_code=409, content=_stamp({"error": str(exc)})
        )

    @app.exception_handler(BenchError)
    async def _bad_request(request: Request, exc: BenchError):
        return JSONResponse(
            status_code=400, content=_stamp({"error": str(exc)})
        )

    @app.get("/review/pending")
    def pending() -> dict[str, Any]:
        items = []
        for sample_id in workspace.pending_ids():
            item = workspace.get_item(sample_id)
            items.append(
                {
                    "sample_id": sample_id,
                    "round": item["rounds"][-1]["round"],
                    "status": item["status"],
                    "question": item["sample"]["question"],
                }
            )
        return _stamp({"items": items})

    @app.get("/review/item/{sample_id}")
    def item(sample_id: str) -> dict[str, Any]:
        record = workspace.get_item(sample_id)
        fps = workspace.fps
        current = record["rounds"][-1]
        spec = set(current["spec"])
        frames = []
        by_index: dict[int, bytes] = {}
        for path in workspace.frame_paths(sample_id):
            index = _frame_index(path)
            image = path.read_bytes()
            by_index[index] = image
            frames.append(
                {
                    "index": index,
                    "timestamp": index / fps,
                    "in_key_video": index in spec,
                    "thumbnail_b64": _thumbnail_b64(image),
                }
            )
        key_video = [
            {
                "index": index,
                "timestamp": index / fps,
                "image_b64": base64.b64encode(by_index[index]).decode("ascii"),
            }
            for index in sorted(spec)
            if index in by_index
        ]
        sample = record["sample"]
        return _stamp(
            {
                "sample_id": sample_id,
                "question": sample["question"],
                "options": sample["options"],
                "gold_answer": sample["gold_answer"],
                "gold_reasoning": sample.get("gold_reasoning"),
                "guideline": [band.to_dict() for band in review_guideline()],
                "round": current["round"],
                "status": record["status"],
                "current_spec": list(current["spec"]),
                "frame_count": record["frame_count"],
                "frames": frames,
                "key_video": key_video,
                "rounds": record["rounds"],
            }
        )

    @app.post("/review/item/{sample_id}/scores")
    def scores(sample_id: str, body: ScoresBody) -> dict[str, Any]:
        decision = workspace.submit_scores(
            sample_id,
            body.round,
            [(entry.reviewer_id, entry.score) for entry in body.scores],
        )
        record = workspace.get_item(sample_id)
        return _stamp(
            {
                "sample_id": sample_id,
                "round": body.round,
                "decision": decision,
                "status": record["status"],
            }
        )

    @app.post("/review/item/{sample_id}/revision")
    def revision(sample_id: str, body: RevisionBody) -> dict[str, Any]:
        new_round = workspace.submit_revision(sample_id, body.frame_indices)
        record = workspace.get_item(sample_id)
        return _stamp(
            {
                "sample_id": sample_id,
                "round": new_round,
                "spec": list(record["rounds"][-1]["spec"]),
                "status": record["status"],
            }
        )

    @app.get("/review/stats")
    def stats() -> dict[str, Any]:
        return _stamp(workspace.stats())

    if static_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount(
            "/", StaticFiles(directory=str(static_dir), html=True), name="ui"
        )

    return app

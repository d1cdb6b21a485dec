"""Reasoning strategies: templates, the frame-text interleave, and execution.

A strategy is four choices: family (direct, cot, desp_cot, plan_and_solve),
mode (vanilla or vit), key-video source (oracle, retrieved, none), and which
frames ride along as direct video input. Vanilla strategies keep every
intermediate stage text-only; vit strategies embed the key-video frames
inside the first-stage reasoning text before the final request.

Execution produces a RunRecord holding the full request/response transcript,
so runs are replayable and every reported number is attributable to exact
prompts and template versions.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import Enum
from itertools import product
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

from .dataset import Option, Sample
from .embed import EmbeddingBackend, build_rough_key_video
from .evaluate import extract_answer
from .mllm import (
    ChatRequest,
    ChatResponse,
    Message,
    MllmClient,
    image_part,
    request_from_dict,
    request_to_dict,
    response_from_dict,
    response_to_dict,
    text_part,
)
from .video import Frame, KeyVideoSpec, assemble_key_video


class StrategyError(Exception):
    """Raised for unusable inputs during rendering or execution."""


class InvalidStrategyError(StrategyError):
    """Raised when a strategy spec violates the validity rules."""


class TemplateError(StrategyError):
    """Raised for missing templates or malformed template bodies."""


class Family(str, Enum):
    DIRECT = "direct"
    COT = "cot"
    DESP_COT = "desp_cot"
    PLAN_AND_SOLVE = "plan_and_solve"


class Mode(str, Enum):
    VANILLA = "vanilla"
    VIT = "vit"


class KeyVideoSource(str, Enum):
    ORACLE = "oracle"
    RETRIEVED = "retrieved"
    NONE = "none"


class VideoInputs(str, Enum):
    ORIGINAL_ONLY = "original_only"
    KEY_ONLY = "key_only"
    ORIGINAL_PLUS_KEY = "original_plus_key"


@dataclass(frozen=True)
class StrategySpec:
    family: Family
    mode: Mode
    key_video_source: KeyVideoSource
    video_inputs: VideoInputs

    def validation_errors(self) -> list[str]:
        errors = []
        if self.mode is Mode.VIT and self.family is Family.DIRECT:
            errors.append("vit mode requires a reasoning family, not direct")
        if self.mode is Mode.VIT and self.key_video_source is KeyVideoSource.NONE:
            errors.append("vit mode requires a key-video source")
        if (
            self.key_video_source is KeyVideoSource.NONE
            and self.video_inputs is not VideoInputs.ORIGINAL_ONLY
        ):
            errors.append(
                "without a key-video source, video inputs must be original_only"
            )
        if (
            self.video_inputs
            in (VideoInputs.KEY_ONLY, VideoInputs.ORIGINAL_PLUS_KEY)
            and self.key_video_source is KeyVideoSource.NONE
        ):
            errors.append("key-video inputs require a key-video source")
        return errors

    @property
    def is_valid(self) -> bool:
        return not self.validation_errors()

    def validate(self) -> None:
        errors = self.validation_errors()
        if errors:
            raise InvalidStrategyError("; ".join(errors))

    @property
    def slug(self) -> str:
        return ".".join(
            (
                self.family.value,
                self.mode.value,
                self.key_video_source.value,
                self.video_inputs.value,
            )
        )

    def to_dict(self) -> dict[str, str]:
        return {
            "family": self.family.value,
            "mode": self.mode.value,
            "key_video_source": self.key_video_source.value,
            "video_inputs": self.video_inputs.value,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, str]) -> "StrategySpec":
        try:
            return cls(
                family=Family(data["family"]),
                mode=Mode(data["mode"]),
                key_video_source=KeyVideoSource(data["key_video_source"]),
                video_inputs=VideoInputs(data["video_inputs"]),
            )
        except (KeyError, ValueError) as exc:
            raise InvalidStrategyError("bad strategy spec: %s" % exc) from exc

    @classmethod
    def from_slug(cls, slug: str) -> "StrategySpec":
        parts = slug.split(".")
        if len(parts) != 4:
            raise InvalidStrategyError("bad strategy slug: %r" % slug)
        return cls.from_dict(
            dict(zip(("family", "mode", "key_video_source", "video_inputs"), parts))
        )


def all_strategy_specs() -> list[StrategySpec]:
    """Every combination, valid or not (4 x 2 x 3 x 3 = 72)."""
    return [
        StrategySpec(f, m, s, v)
        for f, m, s, v in product(Family, Mode, KeyVideoSource, VideoInputs)
    ]


STAGES = ("stage1", "stage2", "single")
_PLACEHOLDERS = ("{question}", "{options}", "{initial_reasoning}")


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    version: str
    stage: str
    family: str
    body: str

    def __post_init__(self) -> None:
        if self.stage not in STAGES:
            raise TemplateError("unknown stage %r" % self.stage)
        marker_count = self.body.count("{initial_reasoning}")
        if self.stage == "stage2" and marker_count != 1:
            raise TemplateError(
                "stage2 template %s must contain {initial_reasoning} exactly once"
                % self.template_id
            )
        if self.stage != "stage2" and marker_count:
            raise TemplateError(
                "{initial_reasoning} is only valid in stage2 templates"
            )


DEFAULT_TEMPLATE_ROOT = Path(__file__).parent / "templates"


class TemplateLibrary:
    """Loads versioned template assets: {root}/{family}/{stage}@{version}.txt."""

    def __init__(self, root: str | Path | None = None, version: str = "v1") -> None:
        self.root = Path(root) if root is not None else DEFAULT_TEMPLATE_ROOT
        self.version = version
        self._cache: dict[tuple[str, str], PromptTemplate] = {}

    def get(self, family: str, stage: str) -> PromptTemplate:
        key = (family, stage)
        if key not in self._cache:
            path = self.root / family / ("%s@%s.txt" % (stage, self.version))
            if not path.is_file():
                raise TemplateError("no template asset at %s" % path)
            self._cache[key] = PromptTemplate(
                template_id="%s/%s" % (family, stage),
                version=self.version,
                stage=stage,
                family=family,
                body=path.read_text(encoding="utf-8").strip(),
            )
        return self._cache[key]


def render_options(options: Sequence[Option]) -> str:
    return "\n".join("%s) %s" % (o.label, o.text) for o in options)


def _fill(body: str, sample: Sample) -> str:
    filled = body.replace("{question}", sample.question).replace(
        "{options}", render_options(sample.options)
    )
    for placeholder in _PLACEHOLDERS:
        if placeholder in filled:
            raise TemplateError("unresolved placeholder %s" % placeholder)
    return filled


def _frame_parts(frames: Sequence[Frame]) -> list:
    return [image_part(image, frame=ref) for ref, image in frames]


def render_stage1(
    sample: Sample,
    template: PromptTemplate,
    frames: Sequence[Frame],
    model_id: str,
    temperature: float | None = None,
    top_p: float | None = None,
) -> ChatRequest:
    """First-stage (or single-stage) request: instruction as the system
    message; frames in temporal order, then question, then options, as the
    user message."""
    if template.stage not in ("stage1", "single"):
        raise TemplateError(
            "template %s is not a stage1/single template" % template.template_id
        )
    if not frames:
        raise StrategyError("cannot render a request with no frames")
    system = Message(role="system", parts=(text_part(_fill(template.body, sample)),))
    user_parts = _frame_parts(frames) + [
        text_part(sample.question),
        text_part(render_options(sample.options)),
    ]
    return ChatRequest(
        model_id=model_id,
        messages=(system, Message(role="user", parts=tuple(user_parts))),
        temperature=temperature,
        top_p=top_p,
    )


INTERLEAVE_MARKER = "--- Key-Video evidence ---"


def _format_seconds(t: float) -> str:
    return str(int(t)) if float(t).is_integer() else repr(float(t))


def interleave(initial_reasoning: str, key_video: Sequence[Frame]) -> list:
    """Embed key-video frames inside the reasoning text.

    Output parts: the reasoning verbatim, a marker line, then for each frame
    a 1-based ordinal label with its timestamp followed by the image. The
    result is deterministic and byte-identical for identical inputs.
    """
    if not initial_reasoning:
        raise StrategyError("cannot interleave empty reasoning")
    if not key_video:
        raise StrategyError("cannot interleave an empty key-video")
    parts = [text_part(initial_reasoning), text_part(INTERLEAVE_MARKER)]
    for ordinal, (ref, image) in enumerate(key_video, start=1):
        parts.append(
            text_part(
                "Key-Frame %d (t=%ss):" % (ordinal, _format_seconds(ref.timestamp))
            )
        )
        parts.append(image_part(image, frame=ref))
    return parts


def render_stage2(
    sample: Sample,
    template: PromptTemplate,
    frames: Sequence[Frame],
    reasoning_parts: Sequence,
    model_id: str,
    temperature: float | None = None,
    top_p: float | None = None,
) -> ChatRequest:
    """Final-stage request: the template text before {initial_reasoning}
    becomes the system instruction, the reasoning parts are spliced into the
    user message after frames/question/options, and the text after the
    placeholder closes the user message as the final-answer instruction."""
    if template.stage != "stage2":
        raise TemplateError(
            "template %s is not a stage2 template" % template.template_id
        )
    if not reasoning_parts:
        raise StrategyError("stage2 requires reasoning parts")
    pre, _, post = template.body.partition("{initial_reasoning}")
    system = Message(
        role="system", parts=(text_part(_fill(pre, sample).strip()),)
    )
    user_parts = _frame_parts(frames) + [
        text_part(sample.question),
        text_part(render_options(sample.options)),
    ]
    user_parts.extend(reasoning_parts)
    post_text = _fill(post, sample).strip()
    if post_text:
        user_parts.append(text_part(post_text))
    return ChatRequest(
        model_id=model_id,
        messages=(system, Message(role="user", parts=tuple(user_parts))),
        temperature=temperature,
        top_p=top_p,
    )


@dataclass(frozen=True)
class StageLog:
    request: ChatRequest
    response: ChatResponse

    def to_dict(self, redact_timing: bool = False) -> dict[str, Any]:
        response = response_to_dict(self.response)
        if redact_timing:
            response["latency_s"] = 0.0
        return {"request": request_to_dict(self.request), "response": response}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "StageLog":
        return cls(
            request=request_from_dict(data["request"]),
            response=response_from_dict(data["response"]),
        )


@dataclass(frozen=True)
class RunRecord:
    """Complete transcript of one sample x strategy execution.

    stage1 is present when the strategy has a distinct first stage (two-stage
    families in either mode, and cot in vit mode). A failed execution keeps
    whatever stages completed and carries the cause in `error`.
    """

    sample_id: str
    strategy: StrategySpec
    model_id: str
    prompt_versions: dict[str, str]
    stage1: StageLog | None
    stage2_or_single: StageLog | None
    initial_reasoning: str | None
    final_text: str
    extracted_answer: str | None
    correct: bool | None
    timing_s: float
    config: dict[str, Any] = field(default_factory=dict)
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None

    def to_dict(self, redact_timing: bool = False) -> dict[str, Any]:
        return {
            "sample_id": self.sample_id,
            "strategy": self.strategy.to_dict(),
            "model_id": self.model_id,
            "prompt_versions": dict(self.prompt_versions),
            "stage1": self.stage1.to_dict(redact_timing) if self.stage1 else None,
            "stage2_or_single": (
                self.stage2_or_single.to_dict(redact_timing)
                if self.stage2_or_single
                else None
            ),
            "initial_reasoning": self.initial_reasoning,
            "final_text": self.final_text,
            "extracted_answer": self.extracted_answer,
            "correct": self.correct,
            "timing_s": 0.0 if redact_timing else self.timing_s,
            "config": dict(self.config),
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RunRecord":
        return cls(
            sample_id=data["sample_id"],
            strategy=StrategySpec.from_dict(data["strategy"]),
            model_id=data["model_id"],
            prompt_versions=dict(data["prompt_versions"]),
            stage1=StageLog.from_dict(data["stage1"]) if data["stage1"] else None,
            stage2_or_single=(
                StageLog.from_dict(data["stage2_or_single"])
                if data["stage2_or_single"]
                else None
            ),
            initial_reasoning=data["initial_reasoning"],
            final_text=data["final_text"],
            extracted_answer=data["extracted_answer"],
            correct=data["correct"],
            timing_s=data["timing_s"],
            config=dict(data.get("config", {})),
            error=data.get("error"),
        )


@dataclass
class StrategyRuntime:
    """Everything execute_strategy needs besides the sample and spec."""

    client: MllmClient
    templates: TemplateLibrary
    model_id: str
    frames_for: Callable[[str], list[Frame]]
    embed_backend: EmbeddingBackend | None = None
    retrieval_k: int = 4
    temperature: float | None = None
    top_p: float | None = None
    image_resolution: str = "decoder-native"

    def config_snapshot(self) -> dict[str, Any]:
        return {
            "retrieval_k": self.retrieval_k,
            "temperature": self.temperature,
            "top_p": self.top_p,
            "image_resolution": self.image_resolution,
        }


def _send_logged(client: MllmClient, request: ChatRequest) -> StageLog:
    return StageLog(request=request, response=client.send(request))


def has_distinct_stage1(spec: StrategySpec) -> bool:
    if spec.family in (Family.DESP_COT, Family.PLAN_AND_SOLVE):
        return True
    return spec.family is Family.COT and spec.mode is Mode.VIT


def _frame_slot(
    spec: StrategySpec,
    stage: str,
    frames_all: Sequence[Frame],
    key_frames: Sequence[Frame] | None,
) -> list[Frame]:
    """Which frames ride directly in a request at the given stage.

    In vit mode the key frames never occupy the slot (they are interleaved
    into the reasoning instead): stage1 always sees the original frames and
    the final stage sees them too unless video_inputs is key_only. In
    vanilla mode the slot follows video_inputs, except that a retrieved
    key-video does not exist before stage1, so stage1 falls back to the
    original frames.
    """
    if spec.mode is Mode.VIT:
        if stage == "stage1":
            return list(frames_all)
        if spec.video_inputs is VideoInputs.KEY_ONLY:
            return []
        return list(frames_all)
    if spec.video_inputs is VideoInputs.ORIGINAL_ONLY or key_frames is None:
        return list(frames_all)
    if spec.video_inputs is VideoInputs.KEY_ONLY:
        return list(key_frames)
    return list(frames_all) + list(key_frames)


def run_vanilla(
    sample: Sample,
    family: Family,
    templates: TemplateLibrary,
    frames: Sequence[Frame],
    client: MllmClient,
    model_id: str,
    temperature: float | None = None,
    top_p: float | None = None,
) -> tuple[StageLog | None, StageLog]:
    """Vanilla execution with a uniform frame slot.

    Direct and cot are a single request; desp_cot and plan_and_solve run a
    text-only first stage whose output is passed to stage2 as plain text
    (zero key-frame image parts).
    """
    if family in (Family.DIRECT, Family.COT):
        request = render_stage1(
            sample, templates.get(family.value, "single"), frames, model_id,
            temperature, top_p,
        )
        return None, _send_logged(client, request)
    stage1 = _send_logged(
        client,
        render_stage1(
            sample, templates.get(family.value, "stage1"), frames, model_id,
            temperature, top_p,
        ),
    )
    stage2 = _send_logged(
        client,
        render_stage2(
            sample,
            templates.get(family.value, "stage2"),
            frames,
            [text_part(stage1.response.text)],
            model_id,
            temperature,
            top_p,
        ),
    )
    return stage1, stage2


def run_stage2(
    sample: Sample,
    initial_reasoning: str,
    key_video: Sequence[Frame],
    template: PromptTemplate,
    frames: Sequence[Frame],
    client: MllmClient,
    model_id: str,
    temperature: float | None = None,
    top_p: float | None = None,
) -> StageLog:
    """Interleaved final stage: key frames embedded inside the reasoning."""
    request = render_stage2(
        sample,
        template,
        frames,
        interleave(initial_reasoning, key_video),
        model_id,
        temperature,
        top_p,
    )
    return _send_logged(client, request)


def execute_strategy(
    sample: Sample, spec: StrategySpec, runtime: StrategyRuntime
) -> RunRecord:
    """Run one sample under one strategy, returning a complete RunRecord.

    An invalid spec raises InvalidStrategyError before any backend call.
    Runtime failures (missing oracle key-video, backend errors, retrieval
    without a reasoning stage) produce a failed record carrying the cause,
    never a dropped cell. KeyboardInterrupt always propagates.
    """
    spec.validate()
    started = time.perf_counter()
    templates = runtime.templates
    prompt_versions: dict[str, str] = {}
    stage1_log: StageLog | None = None
    final_log: StageLog | None = None
    initial_reasoning: str | None = None
    error: str | None = None

    def _use(template: PromptTemplate) -> PromptTemplate:
        prompt_versions[template.template_id] = template.version
        return template

    try:
        frames_all = runtime.frames_for(sample.video_id)
        if not frames_all:
            raise StrategyError("no frames available for %s" % sample.video_id)

        key_frames: list[Frame] | None = None
        if spec.key_video_source is KeyVideoSource.ORACLE:
            if sample.oracle_key_video is None:
                raise StrategyError("missing oracle key-video")
            key_frames = assemble_key_video(
                frames_all,
                KeyVideoSpec(sample.video_id, sample.oracle_key_video),
            )
        elif spec.key_video_source is KeyVideoSource.RETRIEVED:
            if not has_distinct_stage1(spec):
                raise StrategyError(
                    "retrieved key-video requires a strategy with a first"
                    " reasoning stage"
                )
            if runtime.embed_backend is None:
                raise StrategyError("no embedding backend configured")

        if not has_distinct_stage1(spec):
            template = _use(templates.get(spec.family.value, "single"))
            slot = _frame_slot(spec, "final", frames_all, key_frames)
            final_log = _send_logged(
                runtime.client,
                render_stage1(
                    sample, template, slot, runtime.model_id,
                    runtime.temperature, runtime.top_p,
                ),
            )
        else:
            stage1_template = _use(templates.get(spec.family.value, "stage1"))
            stage1_slot = _frame_slot(spec, "stage1", frames_all, key_frames)
            stage1_log = _send_logged(
                runtime.client,
                render_stage1(
                    sample, stage1_template, stage1_slot, runtime.model_id,
                    runtime.temperature, runtime.top_p,
                ),
            )
            initial_reasoning = stage1_log.response.text

            if spec.key_video_source is KeyVideoSource.RETRIEVED:
                rough = build_rough_key_video(
                    initial_reasoning,
                    frames_all,
                    runtime.embed_backend,
                    k=min(runtime.retrieval_k, len(frames_all)),
                )
                key_frames = assemble_key_video(frames_all, rough)

            stage2_template = _use(templates.get(spec.family.value, "stage2"))
            final_slot = _frame_slot(spec, "final", frames_all, key_frames)
            if spec.mode is Mode.VIT:
                if not key_frames:
                    raise StrategyError("vit mode requires key frames")
                reasoning_parts = interleave(initial_reasoning, key_frames)
            else:
                reasoning_parts = [text_part(initial_reasoning)]
            final_log = _send_logged(
                runtime.client,
                render_stage2(
                    sample, stage2_template, final_slot, reasoning_parts,
                    runtime.model_id, runtime.temperature, runtime.top_p,
                ),
            )
    except Exception as exc:
        error = "%s: %s" % (type(exc).__name__, exc)

    final_text = final_log.response.text if final_log else ""
    extracted = None
    correct = None
    if error is None and final_log is not None:
        extracted = extract_answer(final_text, sample.option_labels())
        correct = extracted == sample.gold_answer
    return RunRecord(
        sample_id=sample.id,
        strategy=spec,
        model_id=runtime.model_id,
        prompt_versions=prompt_versions,
        stage1=stage1_log,
        stage2_or_single=final_log,
        initial_reasoning=initial_reasoning,
        final_text=final_text,
        extracted_answer=extracted,
        correct=correct,
        timing_s=time.perf_counter() - started,
        config=runtime.config_snapshot(),
        error=error,
    )

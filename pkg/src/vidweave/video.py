"""Frame sampling at a fixed rate (FPS=1 by default) and key-video assembly.

Decoding is delegated to pluggable decoders so the core carries no codec
logic. Two are provided: a subprocess decoder driven by a command template
(ffmpeg-style tools) and a read-only adapter over a directory of
pre-extracted frames. Both speak the same contract: frames are JPEG files
named frame_%04d.jpg, numbered contiguously from 0.
"""

from __future__ import annotations

import math
import re
import shlex
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence


class VideoError(Exception):
    """Raised for invalid frame selections or unusable video assets."""


class DecodeError(VideoError):
    """Raised when a decoder fails or emits frames violating the contract."""


@dataclass(frozen=True)
class FrameRef:
    """Position of one sampled frame: 0-based index and its timestamp."""

    video_id: str
    index: int
    timestamp: float


@dataclass(frozen=True)
class KeyVideoSpec:
    """Strictly increasing frame indices into a video's sampled sequence."""

    video_id: str
    frame_indices: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "frame_indices", tuple(self.frame_indices))
        if not self.frame_indices:
            raise ValueError("key-video spec must select at least one frame")
        for idx in self.frame_indices:
            if idx < 0:
                raise ValueError("frame index must be non-negative: %d" % idx)
        for a, b in zip(self.frame_indices, self.frame_indices[1:]):
            if b <= a:
                raise ValueError(
                    "frame indices must be strictly increasing, got %r"
                    % (self.frame_indices,)
                )


@dataclass(frozen=True)
class VideoAsset:
    """A source video: where it lives and how long it runs."""

    video_id: str
    source: str
    duration: float

    @property
    def sampled_frame_count(self) -> int:
        # One frame per second at FPS=1; ceil so any positive duration
        # yields at least one frame.
        return math.ceil(self.duration) if self.duration > 0 else 0

    @classmethod
    def from_frames_dir(
        cls, video_id: str, directory: str | Path, fps: float = 1.0
    ) -> "VideoAsset":
        """Build an asset whose duration is implied by pre-extracted frames."""
        count = len(_frame_files(Path(directory)))
        return cls(video_id=video_id, source=str(directory), duration=count / fps)


class FrameDecoder(Protocol):
    def frames(self, source: str, fps: float) -> list[bytes]:
        """Decode `source` at `fps`, returning JPEG bytes in frame order."""
        ...


_FRAME_NAME = re.compile(r"frame_(\d{4,})\.jpg$")


def _frame_files(directory: Path) -> list[Path]:
    if not directory.is_dir():
        raise DecodeError("frames directory does not exist: %s" % directory)
    indexed: list[tuple[int, Path]] = []
    for path in directory.iterdir():
        match = _FRAME_NAME.fullmatch(path.name)
        if match:
            indexed.append((int(match.group(1)), path))
    indexed.sort()
    indices = [i for i, _ in indexed]
    if indices != list(range(len(indexed))):
        raise DecodeError(
            "frames in %s are not numbered contiguously from 0" % directory
        )
    return [path for _, path in indexed]


def _read_frames(directory: Path) -> list[bytes]:
    files = _frame_files(directory)
    if not files:
        raise DecodeError("no frames found in %s" % directory)
    return [path.read_bytes() for path in files]


@dataclass(frozen=True)
class FramesDirectoryDecoder:
    """Treats the source as a directory of pre-extracted frame_%04d.jpg."""

    def frames(self, source: str, fps: float) -> list[bytes]:
        return _read_frames(Path(source))


@dataclass(frozen=True)
class CommandFrameDecoder:
    """Runs an external command to extract frames into a temp directory.

    The template is split shell-style, then {input}, {fps}, {outdir} are
    substituted per token, so paths containing spaces stay single arguments.
    The command must write frame_%04d.jpg files numbered from 0 into outdir.
    """

    command_template: str

    def frames(self, source: str, fps: float) -> list[bytes]:
        with tempfile.TemporaryDirectory(prefix="vidweave-decode-") as outdir:
            argv = [
                token.format(input=source, fps=fps, outdir=outdir)
                for token in shlex.split(self.command_template)
            ]
            proc = subprocess.run(argv, capture_output=True, text=True)
            if proc.returncode != 0:
                raise DecodeError(
                    "decoder command failed (exit %d): %s"
                    % (proc.returncode, proc.stderr.strip() or proc.stdout.strip())
                )
            return _read_frames(Path(outdir))


Frame = tuple[FrameRef, bytes]


def sample_frames(
    asset: VideoAsset, decoder: FrameDecoder, fps: float = 1.0
) -> list[Frame]:
    """Sample frames at `fps`; frame i sits at timestamp i/fps.

    The expected count is ceil(duration * fps). Decoders may emit more
    (codec boundary behavior); extras beyond the expected count are dropped.
    Fewer than expected is an error.
    """
    if asset.duration <= 0:
        raise VideoError("zero-duration source: %s" % asset.video_id)
    expected = math.ceil(asset.duration * fps)
    images = decoder.frames(asset.source, fps)
    if len(images) < expected:
        raise DecodeError(
            "decoder produced %d frames for %s, expected %d"
            % (len(images), asset.video_id, expected)
        )
    return [
        (FrameRef(asset.video_id, i, i / fps), img)
        for i, img in enumerate(images[:expected])
    ]


def sample_video(
    video_id: str, source: str, decoder: FrameDecoder, fps: float = 1.0
) -> list[Frame]:
    """Sample a source of unknown duration: the decoder's count defines it."""
    images = decoder.frames(source, fps)
    if not images:
        raise DecodeError("decoder produced no frames for %s" % video_id)
    return [(FrameRef(video_id, i, i / fps), img) for i, img in enumerate(images)]


def assemble_key_video(frames: Sequence[Frame], spec: KeyVideoSpec) -> list[Frame]:
    """Select the frames named by the spec, in index (temporal) order."""
    if not frames:
        raise VideoError("cannot assemble a key-video from zero frames")
    frame_video_id = frames[0][0].video_id
    if spec.video_id != frame_video_id:
        raise VideoError(
            "key-video spec is for %r but frames are from %r"
            % (spec.video_id, frame_video_id)
        )
    selected = []
    for idx in spec.frame_indices:
        if idx >= len(frames):
            raise VideoError("index out of range: %d" % idx)
        selected.append(frames[idx])
    return selected

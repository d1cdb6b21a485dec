"""Command-line interface.

Six commands cover the whole workflow: `build` turns a raw dataset into a
review workspace, `review-serve` exposes it to reviewers over HTTP, `run`
executes strategy grids against a chat backend, `eval` scores a finished
run, `report` renders and compares stored reports, and `stats` summarizes a
dataset. Every command accepts --config (YAML, with ${ENV} interpolation)
and --out; flags override config fields.

Exit codes are stable for scripting: 0 success, 1 validation or state
error, 2 backend or infrastructure error.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import click
from filelock import Timeout

from .bench import (
    BenchError,
    ReviewWorkspace,
    compute_build_key,
    recognize_key_frames,
)
from .dataset import (
    CategoryRegistry,
    DatasetError,
    Sample,
    load_samples,
    remove_incomplete,
    dataset_stats,
)
from .embed import (
    EmbedError,
    EmbeddingBackend,
    HashEmbeddingBackend,
    RemoteEmbeddingBackend,
)
from .evaluate import (
    EvalError,
    EvalReport,
    compare_reports,
    render_table,
    score_run,
)
from .mllm import (
    MllmClient,
    MllmError,
    RetryPolicy,
    backend_from_config,
)
from .store import (
    ConfigError,
    FrameProvider,
    RunStore,
    StoreError,
    config_digest,
    load_config,
    run_cells,
)
from .strategies import (
    StrategyError,
    StrategyRuntime,
    StrategySpec,
    TemplateLibrary,
)
from .video import VideoError


def _guarded(fn: Callable) -> Callable:
    """Map domain errors to the documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        try:
            return fn(*args, **kwargs)
        except KeyboardInterrupt:
            click.echo("interrupted; completed cells were saved", err=True)
            sys.exit(130)
        except (MllmError, EmbedError) as exc:
            click.echo("backend error: %s" % exc, err=True)
            sys.exit(2)
        except Timeout:
            click.echo("error: run directory is locked by another process", err=True)
            sys.exit(1)
        except (
            ConfigError,
            StoreError,
            DatasetError,
            BenchError,
            StrategyError,
            EvalError,
            VideoError,
            OSError,
        ) as exc:
            click.echo("error: %s" % exc, err=True)
            sys.exit(1)

    return wrapper


def _common(fn: Callable) -> Callable:
    fn = click.option(
        "--config", "config_path", type=click.Path(), default=None,
        help="YAML config file; ${ENV} references are interpolated.",
    )(fn)
    fn = click.option(
        "--out", "out_path", type=click.Path(), default=None,
        help="Output location; overrides the config field.",
    )(fn)
    return fn


def _load(config_path: str | None) -> dict[str, Any]:
    if config_path is None:
        return {}
    return load_config(config_path)


def _require(config: Mapping[str, Any], key: str) -> Any:
    if key not in config or config[key] is None:
        raise ConfigError("config is missing %r" % key)
    return config[key]


def _frame_provider(config: Mapping[str, Any]) -> FrameProvider:
    return FrameProvider(
        frames_root=config.get("frames_root"),
        videos_root=config.get("videos_root"),
        decoder_command=config.get("decoder_command"),
        fps=float(config.get("fps", 1.0)),
    )


def _client(backend_config: Mapping[str, Any]) -> MllmClient:
    backend = backend_from_config(backend_config)
    retry = None
    if "max_attempts" in backend_config:
        retry = RetryPolicy(
            max_attempts=int(backend_config["max_attempts"]),
            base_delay_s=float(backend_config.get("base_delay_s", 1.0)),
        )
    return MllmClient(
        backend,
        retry_policy=retry,
        max_concurrency=int(backend_config.get("max_concurrency", 4)),
    )


def _embed_backend(config: Mapping[str, Any]) -> EmbeddingBackend | None:
    spec = config.get("embedding")
    if not spec:
        return None
    kind = spec.get("kind", "hash")
    if kind == "hash":
        return HashEmbeddingBackend(dim=int(spec.get("dim", 8)))
    if kind == "remote":
        return RemoteEmbeddingBackend(
            endpoint=_require(spec, "endpoint"),
            dim=int(_require(spec, "dim")),
            name=spec.get("name", "remote"),
            max_concurrency=int(spec.get("max_concurrency", 1)),
            timeout_s=float(spec.get("timeout_s", 30.0)),
        )
    raise ConfigError("unknown embedding kind: %r" % kind)


def _load_strict(path: str | Path) -> list[Sample]:
    result = load_samples(path)
    if result.errors:
        shown = "; ".join(
            "line %d: %s" % (e.line, e.message) for e in result.errors[:10]
        )
        raise DatasetError(
            "dataset has %d invalid lines: %s" % (len(result.errors), shown)
        )
    return result.samples


@click.group()
def cli() -> None:
    """Video question-answering benchmark and strategy-evaluation toolkit."""


# ---------------------------------------------------------------------- build


@cli.command()
@_common
@_guarded
def build(config_path: str | None, out_path: str | None) -> None:
    """Build a review workspace: propose key frames for every usable sample."""
    if config_path is None:
        raise ConfigError("build requires --config")
    config = _load(config_path)
    out = Path(out_path or _require(config, "workspace"))
    dataset_path = _require(config, "dataset")
    provider = _frame_provider(config)
    proposer_config = _require(config, "proposer")
    model_id = _require(proposer_config, "model_id")
    template_version = str(config.get("template_version", "v1"))
    template = TemplateLibrary(version=template_version).get(
        "recognize", "single"
    )
    client = _client(proposer_config)

    result = load_samples(dataset_path)
    rejected: list[tuple[str, str]] = [
        ("line %d" % e.line, e.message) for e in result.errors
    ]
    kept, incomplete = remove_incomplete(
        result.samples, provider.known_video_ids()
    )
    rejected.extend((s.id, reason) for s, reason in incomplete)
    usable = []
    for sample in kept:
        if not sample.gold_reasoning:
            rejected.append((sample.id, "missing gold reasoning"))
        else:
            usable.append(sample)

    if (out / "manifest.json").is_file():
        workspace = ReviewWorkspace(out)
    else:
        workspace = ReviewWorkspace.create(
            out,
            threshold=int(config.get("threshold", 80)),
            fps=float(config.get("fps", 1.0)),
        )

    added = 0
    skipped = 0
    for sample in usable:
        frames = provider(sample.video_id)
        build_key = compute_build_key(sample, frames, model_id, template_version)
        if (
            workspace.has_item(sample.id)
            and workspace.build_key_of(sample.id) == build_key
        ):
            skipped += 1
            continue
        proposal = recognize_key_frames(
            sample, frames, client, template, model_id
        )
        workspace.add_item(sample, frames, proposal, build_key=build_key)
        added += 1

    click.echo(
        "workspace %s: pending=%d added=%d unchanged=%d rejected=%d"
        % (out, len(workspace.pending_ids()), added, skipped, len(rejected))
    )
    for name, reason in rejected:
        click.echo("rejected %s: %s" % (name, reason))


# --------------------------------------------------------------------- serve


@cli.command("review-serve")
@_common
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, type=int, show_default=True)
@click.option(
    "--static", "static_dir", type=click.Path(), default=None,
    help="Directory with the browser frontend to mount at /.",
)
@_guarded
def review_serve(
    config_path: str | None,
    out_path: str | None,
    host: str,
    port: int,
    static_dir: str | None,
) -> None:
    """Serve the review HTTP API for a built workspace."""
    import uvicorn

    from .review_api import create_app

    config = _load(config_path)
    workspace_dir = out_path or config.get("workspace")
    if not workspace_dir:
        raise ConfigError("review-serve needs a workspace (--out or config)")
    workspace = ReviewWorkspace(workspace_dir)
    app = create_app(workspace, static_dir=static_dir or config.get("static"))
    click.echo("serving review API on http://%s:%d" % (host, port))
    uvicorn.run(app, host=host, port=port, log_level="warning")


# ----------------------------------------------------------------------- run


def _runtime_from_config(
    config: Mapping[str, Any], provider: FrameProvider
) -> StrategyRuntime:
    backend_config = _require(config, "backend")
    return StrategyRuntime(
        client=_client(backend_config),
        templates=TemplateLibrary(
            version=str(config.get("template_version", "v1"))
        ),
        model_id=_require(backend_config, "model_id"),
        frames_for=provider,
        embed_backend=_embed_backend(config),
        retrieval_k=int(config.get("retrieval_k", 4)),
        temperature=config.get("temperature"),
        top_p=config.get("top_p"),
    )


def run_with_config(
    config: Mapping[str, Any],
    out: str | Path,
    runtime: StrategyRuntime | None = None,
) -> tuple[RunStore, dict[str, int]]:
    """The run command's core, callable directly with an injected runtime."""
    run_id = str(_require(config, "run_id"))
    samples = _load_strict(_require(config, "dataset"))
    specs = [StrategySpec.from_slug(s) for s in _require(config, "strategies")]
    provider = _frame_provider(config)
    kept, incomplete = remove_incomplete(samples, provider.known_video_ids())
    if incomplete:
        raise DatasetError(
            "dataset has unusable samples: "
            + "; ".join("%s (%s)" % (s.id, reason) for s, reason in incomplete)
        )
    if runtime is None:
        runtime = _runtime_from_config(config, provider)

    store = RunStore.create_or_open(
        Path(out) / run_id, run_id, config_digest(config)
    )
    with store.lock().acquire(timeout=1.0):
        summary = run_cells(
            kept,
            specs,
            runtime,
            store,
            workers=int(config.get("workers", 1)),
            template_version=str(config.get("template_version", "v1")),
        )
    return store, summary.to_dict()


@cli.command()
@_common
@_guarded
def run(config_path: str | None, out_path: str | None) -> None:
    """Execute every (sample x strategy) cell, resuming finished cells."""
    if config_path is None:
        raise ConfigError("run requires --config")
    config = _load(config_path)
    out = Path(out_path or config.get("runs_root", "runs"))
    store, summary = run_with_config(config, out)
    click.echo(
        "run %s: cells=%d executed=%d skipped=%d failed=%d"
        % (
            store.run_id,
            summary["cells"],
            summary["executed"],
            summary["skipped"],
            summary["failed"],
        )
    )
    click.echo("records in %s" % store.records_dir)


# ---------------------------------------------------------------------- eval


def _group_by_slug(records: Sequence) -> dict[str, list]:
    groups: dict[str, list] = {}
    for record in records:
        groups.setdefault(record.strategy.slug, []).append(record)
    return groups


@cli.command("eval")
@_common
@click.argument("run_dir", type=click.Path())
@_guarded
def eval_command(
    config_path: str | None, out_path: str | None, run_dir: str
) -> None:
    """Score a finished run per strategy and persist the reports."""
    if config_path is None:
        raise ConfigError("eval requires --config (for the dataset path)")
    config = _load(config_path)
    samples = _load_strict(_require(config, "dataset"))
    store = RunStore(run_dir)
    run_id = store.run_id
    records = store.load_records()
    if not records:
        raise StoreError("run %s has no records to score" % run_id)

    reports = []
    for slug in sorted(_group_by_slug(records)):
        reports.append(
            score_run(
                _group_by_slug(records)[slug],
                samples,
                run_id=run_id,
                strategy=slug,
            )
        )
    table = render_table(reports)

    out_dir = Path(out_path) if out_path else Path(run_dir) / "reports"
    out_dir.mkdir(parents=True, exist_ok=True)
    for report in reports:
        path = out_dir / ("%s.json" % report.strategy)
        path.write_text(
            json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8"
        )
    (out_dir / "table.txt").write_text(table.text + "\n", encoding="utf-8")
    (out_dir / "table.csv").write_text(table.csv, encoding="utf-8")
    click.echo(table.text)


# -------------------------------------------------------------------- report


def _load_reports(run_dir: Path) -> list[EvalReport]:
    reports_dir = run_dir / "reports"
    paths = sorted(reports_dir.glob("*.json"))
    if not paths:
        raise StoreError(
            "no stored reports under %s; run eval first" % run_dir
        )
    return [
        EvalReport.from_dict(json.loads(p.read_text(encoding="utf-8")))
        for p in paths
    ]


@cli.command()
@_common
@click.argument("run_dirs", nargs=-1, required=True, type=click.Path())
@_guarded
def report(
    config_path: str | None, out_path: str | None, run_dirs: tuple[str, ...]
) -> None:
    """Render stored reports side by side; two reports also print deltas."""
    all_reports: list[EvalReport] = []
    multi_run = len(run_dirs) > 1
    for run_dir in run_dirs:
        for rep in _load_reports(Path(run_dir)):
            if multi_run:
                rep = EvalReport(
                    run_id=rep.run_id,
                    strategy="%s/%s" % (rep.run_id, rep.strategy),
                    per_category=rep.per_category,
                    macro_avg=rep.macro_avg,
                    micro_avg=rep.micro_avg,
                    failures=rep.failures,
                )
            all_reports.append(rep)

    table = render_table(all_reports)
    lines = [table.text]
    if len(all_reports) == 2:
        delta = compare_reports(all_reports[0], all_reports[1])
        lines.append("")
        lines.append(
            "delta (%s vs %s): macro %+.1f, micro %+.1f"
            % (
                delta.other_strategy,
                delta.base_strategy,
                delta.macro_delta,
                delta.micro_delta,
            )
        )
        for name, value in delta.per_category.items():
            lines.append("  %s: %+.1f" % (name, value))
    text = "\n".join(lines)
    click.echo(text)
    if out_path:
        out = Path(out_path)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(text + "\n", encoding="utf-8")
        (out / "report.csv").write_text(table.csv, encoding="utf-8")


# --------------------------------------------------------------------- stats


@cli.command()
@_common
@click.argument("dataset_path", required=False, type=click.Path())
@_guarded
def stats(
    config_path: str | None, out_path: str | None, dataset_path: str | None
) -> None:
    """Per-category video/key-frame counts and averages, plus totals."""
    config = _load(config_path)
    path = dataset_path or _require(config, "dataset")
    samples = _load_strict(path)
    registry = CategoryRegistry.default()
    result = dataset_stats(samples, registry)

    header = ("category", "videos", "key_frames", "avg_frames")
    rows = [
        (
            name,
            str(result.per_category[name].video_count),
            str(result.per_category[name].key_frame_count),
            "%.1f" % result.per_category[name].avg_frames,
        )
        for name in registry
    ]
    rows.append(
        (
            "TOTAL",
            str(result.total_videos),
            str(result.total_key_frames),
            "%.1f" % result.overall_avg_frames,
        )
    )
    widths = [
        max(len(header[i]), *(len(row[i]) for row in rows))
        for i in range(len(header))
    ]
    lines = [
        "  ".join(header[i].ljust(widths[i]) for i in range(len(header)))
    ]
    for row in rows:
        lines.append(
            row[0].ljust(widths[0])
            + "  "
            + "  ".join(row[i].rjust(widths[i]) for i in range(1, len(header)))
        )
    text = "\n".join(lines)
    click.echo(text)
    if out_path:
        Path(out_path).write_text(text + "\n", encoding="utf-8")


def main() -> None:
    cli()


if __name__ == "__main__":
    main()

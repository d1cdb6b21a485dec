"""End-to-end command tests through the click entry point."""

import json

import pytest
from click.testing import CliRunner

from helpers import write_frames_dir
from vidweave.cli import cli


def write_dataset(path, count=3, category="Event", with_oracle=True):
    lines = []
    for i in range(count):
        record = {
            "id": "s%d" % i,
            "video_id": "v%d" % i,
            "question": "What happens in clip %d?" % i,
            "options": [
                {"label": "A", "text": "cat"},
                {"label": "B", "text": "dog"},
            ],
            "gold_answer": "A",
            "category": category,
            "gold_reasoning": "the cat acts first in clip %d" % i,
        }
        if with_oracle:
            record["oracle_key_video"] = {"frame_indices": [0, 2]}
        lines.append(json.dumps(record))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_mock_script(path, fallbacks):
    path.write_text(
        json.dumps({"responses": {}, "fallbacks": fallbacks}), encoding="utf-8"
    )


@pytest.fixture()
def runner():
    return CliRunner()


@pytest.fixture()
def project(tmp_path):
    """Dataset + frames + mock scripts + config files in one temp tree."""
    data = tmp_path / "data.jsonl"
    write_dataset(data)
    for i in range(3):
        write_frames_dir(tmp_path / "frames" / ("v%d" % i), 3)
    write_mock_script(tmp_path / "chat.json", ["Answer: A"] * 50)
    write_mock_script(tmp_path / "proposer.json", ["0, 2", "1", "0, 1"])

    run_config = tmp_path / "run.yaml"
    run_config.write_text(
        "\n".join(
            [
                "run_id: exp1",
                "dataset: %s" % data,
                "frames_root: %s" % (tmp_path / "frames"),
                "workers: 2",
                "strategies:",
                "  - direct.vanilla.none.original_only",
                "backend:",
                "  dialect: mock",
                "  script_path: %s" % (tmp_path / "chat.json"),
                "  model_id: mock-model",
            ]
        )
        + "\n",
        encoding="utf-8",
    )
    build_config = tmp_path / "build.yaml"
    build_config.write_text(
        "\n".join(
            [
                "dataset: %s" % data,
                "frames_root: %s" % (tmp_path / "frames"),
                "workspace: %s" % (tmp_path / "ws"),
                "proposer:",
                "  dialect: mock",
                "  script_path: %s" % (tmp_path / "proposer.json"),
                "  model_id: proposer-m",
            ]
        )
        + "\n",
        encoding="utf-8",
    )
    return tmp_path


class TestBuild:
    def test_three_samples_pending(self, runner, project):
        result = runner.invoke(
            cli, ["build", "--config", str(project / "build.yaml")]
        )
        assert result.exit_code == 0, result.output
        assert "pending=3" in result.output
        assert "rejected=0" in result.output
        items = sorted(p.stem for p in (project / "ws" / "items").glob("*.json"))
        assert items == ["s0", "s1", "s2"]

    def test_rerun_is_noop(self, runner, project):
        config = str(project / "build.yaml")
        first = runner.invoke(cli, ["build", "--config", config])
        assert first.exit_code == 0
        # refill the proposer queue so a rebuild COULD call it; it must not
        write_mock_script(project / "proposer.json", ["9, 9, 9"] * 3)
        second = runner.invoke(cli, ["build", "--config", config])
        assert second.exit_code == 0, second.output
        assert "added=0" in second.output
        assert "unchanged=3" in second.output
        item = json.loads(
            (project / "ws" / "items" / "s0.json").read_text(encoding="utf-8")
        )
        assert item["proposal"]["proposed_indices"] == [0, 2]

    def test_incomplete_sample_rejected(self, runner, project):
        data = project / "data.jsonl"
        extra = {
            "id": "s3",
            "video_id": "v-missing",
            "question": "Where?",
            "options": [{"label": "A", "text": "x"}],
            "gold_answer": "A",
            "category": "Event",
            "gold_reasoning": "r",
        }
        data.write_text(
            data.read_text(encoding="utf-8") + json.dumps(extra) + "\n",
            encoding="utf-8",
        )
        result = runner.invoke(
            cli,
            ["build", "--config", str(project / "build.yaml"),
             "--out", str(project / "ws2")],
        )
        assert result.exit_code == 0, result.output
        assert "pending=3" in result.output
        assert "rejected=1" in result.output
        assert "s3: unknown video" in result.output

    def test_requires_config(self, runner):
        result = runner.invoke(cli, ["build"])
        assert result.exit_code == 1
        assert "config" in result.output


class TestReviewServe:
    def test_missing_workspace_refused(self, runner, tmp_path):
        result = runner.invoke(
            cli, ["review-serve", "--out", str(tmp_path / "nope")]
        )
        assert result.exit_code == 1
        assert "not a review workspace" in result.output

    def test_needs_workspace_argument(self, runner):
        result = runner.invoke(cli, ["review-serve"])
        assert result.exit_code == 1


class TestRun:
    def test_executes_and_reports_summary(self, runner, project):
        result = runner.invoke(
            cli,
            ["run", "--config", str(project / "run.yaml"),
             "--out", str(project / "runs")],
        )
        assert result.exit_code == 0, result.output
        assert "cells=3 executed=3 skipped=0 failed=0" in result.output
        records = list((project / "runs" / "exp1" / "records").glob("*.json"))
        assert len(records) == 3

    def test_second_invocation_resumes(self, runner, project):
        args = ["run", "--config", str(project / "run.yaml"),
                "--out", str(project / "runs")]
        assert runner.invoke(cli, args).exit_code == 0
        result = runner.invoke(cli, args)
        assert result.exit_code == 0, result.output
        assert "executed=0 skipped=3" in result.output

    def test_invalid_strategy_refused(self, runner, project):
        config = project / "bad.yaml"
        config.write_text(
            (project / "run.yaml")
            .read_text(encoding="utf-8")
            .replace(
                "direct.vanilla.none.original_only",
                "direct.vit.none.key_only",
            ),
            encoding="utf-8",
        )
        result = runner.invoke(
            cli, ["run", "--config", str(config), "--out", str(project / "runs")]
        )
        assert result.exit_code == 1
        assert not (project / "runs" / "exp1" / "records").exists() or not list(
            (project / "runs" / "exp1" / "records").glob("*.json")
        )

    def test_unreachable_backend_is_exit_2(self, runner, project):
        config = project / "net.yaml"
        config.write_text(
            "\n".join(
                [
                    "run_id: exp-net",
                    "dataset: %s" % (project / "data.jsonl"),
                    "frames_root: %s" % (project / "frames"),
                    "strategies:",
                    "  - direct.vanilla.none.original_only",
                    "backend:",
                    "  dialect: openai",
                    "  base_url: http://127.0.0.1:1/v1",
                    "  model_id: m",
                    "  max_attempts: 1",
                    "  timeout_s: 2",
                ]
            )
            + "\n",
            encoding="utf-8",
        )
        result = runner.invoke(
            cli, ["run", "--config", str(config), "--out", str(project / "runs")]
        )
        # connection failures surface inside records (failed cells), so the
        # command itself succeeds; a bad dialect is the infra error path
        assert result.exit_code == 0
        assert "failed=3" in result.output

    def test_unknown_dialect_is_exit_2(self, runner, project):
        config = project / "dialect.yaml"
        config.write_text(
            (project / "run.yaml")
            .read_text(encoding="utf-8")
            .replace("dialect: mock", "dialect: quantum"),
            encoding="utf-8",
        )
        result = runner.invoke(
            cli, ["run", "--config", str(config), "--out", str(project / "runs")]
        )
        assert result.exit_code == 2
        assert "backend error" in result.output


class TestEvalAndReport:
    def _run_and_eval(self, runner, project):
        run_dir = project / "runs" / "exp1"
        assert (
            runner.invoke(
                cli,
                ["run", "--config", str(project / "run.yaml"),
                 "--out", str(project / "runs")],
            ).exit_code
            == 0
        )
        result = runner.invoke(
            cli,
            ["eval", "--config", str(project / "run.yaml"), str(run_dir)],
        )
        return run_dir, result

    def test_eval_writes_reports(self, runner, project):
        run_dir, result = self._run_and_eval(runner, project)
        assert result.exit_code == 0, result.output
        assert "direct.vanilla.none.original_only" in result.output
        reports = run_dir / "reports"
        stored = json.loads(
            (reports / "direct.vanilla.none.original_only.json").read_text(
                encoding="utf-8"
            )
        )
        assert stored["per_category"]["Event"] == {
            "n": 3, "correct": 3, "accuracy": 100.0,
        }
        assert (reports / "table.csv").read_text(encoding="utf-8").startswith(
            "method,"
        )

    def test_eval_missing_run(self, runner, project):
        result = runner.invoke(
            cli,
            ["eval", "--config", str(project / "run.yaml"),
             str(project / "runs" / "ghost")],
        )
        assert result.exit_code == 1

    def test_report_single_run(self, runner, project):
        run_dir, _ = self._run_and_eval(runner, project)
        result = runner.invoke(cli, ["report", str(run_dir)])
        assert result.exit_code == 0, result.output
        assert "AVG" in result.output

    def test_report_without_eval(self, runner, project):
        run_dir = project / "runs" / "exp1"
        assert (
            runner.invoke(
                cli,
                ["run", "--config", str(project / "run.yaml"),
                 "--out", str(project / "runs")],
            ).exit_code
            == 0
        )
        result = runner.invoke(cli, ["report", str(run_dir)])
        assert result.exit_code == 1
        assert "eval" in result.output

    def test_report_two_runs_prints_delta(self, runner, project):
        run_dir, _ = self._run_and_eval(runner, project)
        config2 = project / "run2.yaml"
        config2.write_text(
            (project / "run.yaml")
            .read_text(encoding="utf-8")
            .replace("run_id: exp1", "run_id: exp2"),
            encoding="utf-8",
        )
        assert (
            runner.invoke(
                cli,
                ["run", "--config", str(config2), "--out", str(project / "runs")],
            ).exit_code
            == 0
        )
        run2 = project / "runs" / "exp2"
        assert (
            runner.invoke(
                cli, ["eval", "--config", str(config2), str(run2)]
            ).exit_code
            == 0
        )
        result = runner.invoke(cli, ["report", str(run_dir), str(run2)])
        assert result.exit_code == 0, result.output
        assert "delta" in result.output
        assert "macro +0.0" in result.output


class TestStats:
    def test_table_and_totals(self, runner, project):
        result = runner.invoke(cli, ["stats", str(project / "data.jsonl")])
        assert result.exit_code == 0, result.output
        lines = result.output.strip().splitlines()
        assert lines[0].split() == ["category", "videos", "key_frames", "avg_frames"]
        assert lines[1].startswith("Narra.")
        total = lines[-1].split()
        assert total == ["TOTAL", "3", "6", "2.0"]

    def test_out_file(self, runner, project, tmp_path):
        out = tmp_path / "stats.txt"
        result = runner.invoke(
            cli, ["stats", str(project / "data.jsonl"), "--out", str(out)]
        )
        assert result.exit_code == 0
        assert "TOTAL" in out.read_text(encoding="utf-8")

    def test_dataset_from_config(self, runner, project):
        result = runner.invoke(
            cli, ["stats", "--config", str(project / "run.yaml")]
        )
        assert result.exit_code == 0
        assert "TOTAL" in result.output

    def test_missing_dataset(self, runner, tmp_path):
        result = runner.invoke(cli, ["stats", str(tmp_path / "nope.jsonl")])
        assert result.exit_code == 1

    def test_invalid_lines_rejected(self, runner, tmp_path):
        bad = tmp_path / "bad.jsonl"
        bad.write_text('{"id": "x"}\nnot json\n', encoding="utf-8")
        result = runner.invoke(cli, ["stats", str(bad)])
        assert result.exit_code == 1
        assert "invalid lines" in result.output

"""Answer extraction, per-category accuracy, and strategy comparison tables.

Accuracy arithmetic is exact: counts go through Fraction and Decimal, and
every reported figure is rounded half-up to one decimal only at the edge.
Deltas between reports subtract the already-rounded decimals (as Decimals,
so 51.4 - 42.8 is exactly 8.6, never 8.600000000000001).
"""

from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass
from decimal import Decimal
from fractions import Fraction
from typing import Any, Iterable, Mapping, Protocol, Sequence

from ._util import round1
from .dataset import CategoryRegistry, Sample


class EvalError(Exception):
    """Raised for scoring failures (unknown samples, mismatched reports)."""


# Rule 1: a cue like "Answer:" or "Final Answer:" (case-insensitive) followed
# by a label, optionally parenthesized. Labels themselves are case-sensitive.
_CUED = re.compile(r"(?i:(?:final\s+)?answer)\s*:\s*(?:\(([A-Z])\)|([A-Z])\b)")
# Rule 2: a standalone parenthesized label.
_PARENS = re.compile(r"\(([A-Z])\)")
# Rule 3: a bare label on its own word boundaries.
_BARE = re.compile(r"\b([A-Z])\b")


def extract_answer(text: str, option_labels: Sequence[str]) -> str | None:
    """Pull the chosen option label out of free-form model text.

    Three rules are tried in priority order, each taking the last match
    whose label is actually among the options: cued ("Answer: X"), then
    parenthesized "(X)", then a bare standalone letter. Returns None when
    nothing fires; never raises.
    """
    labels = set(option_labels)

    def last_valid(pattern: re.Pattern[str]) -> str | None:
        found = None
        for match in pattern.finditer(text):
            candidate = next(g for g in match.groups() if g is not None)
            if candidate in labels:
                found = candidate
        return found

    for pattern in (_CUED, _PARENS, _BARE):
        label = last_valid(pattern)
        if label is not None:
            return label
    return None


@dataclass(frozen=True)
class CategoryScore:
    n: int
    correct: int
    accuracy: float


@dataclass(frozen=True)
class EvalReport:
    run_id: str
    strategy: str
    per_category: dict[str, CategoryScore]
    macro_avg: float
    micro_avg: float
    failures: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "run_id": self.run_id,
            "strategy": self.strategy,
            "per_category": {
                name: {"n": s.n, "correct": s.correct, "accuracy": s.accuracy}
                for name, s in self.per_category.items()
            },
            "macro_avg": self.macro_avg,
            "micro_avg": self.micro_avg,
            "failures": self.failures,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "EvalReport":
        return cls(
            run_id=data["run_id"],
            strategy=data["strategy"],
            per_category={
                name: CategoryScore(s["n"], s["correct"], s["accuracy"])
                for name, s in data["per_category"].items()
            },
            macro_avg=data["macro_avg"],
            micro_avg=data["micro_avg"],
            failures=data["failures"],
        )


class ScoredRecord(Protocol):
    sample_id: str
    extracted_answer: str | None


def score_run(
    records: Iterable[ScoredRecord],
    samples: Iterable[Sample],
    run_id: str = "",
    strategy: str = "",
    registry: CategoryRegistry | None = None,
) -> EvalReport:
    """Tally correctness per category; unextractable answers count as wrong.

    Macro average is the mean of the exact per-category ratios over
    categories that have records; micro pools all records. Both are rounded
    half-up to one decimal at the end.
    """
    registry = registry or CategoryRegistry.default()
    samples_by_id = {s.id: s for s in samples}
    totals = {name: 0 for name in registry}
    corrects = {name: 0 for name in registry}
    failures = 0
    for record in records:
        sample = samples_by_id.get(record.sample_id)
        if sample is None:
            raise EvalError("unknown sample_id: %r" % record.sample_id)
        if sample.category not in totals:
            raise EvalError("category not in registry: %r" % sample.category)
        totals[sample.category] += 1
        if record.extracted_answer is None:
            failures += 1
        elif record.extracted_answer == sample.gold_answer:
            corrects[sample.category] += 1

    per_category: dict[str, CategoryScore] = {}
    exact_ratios: list[Fraction] = []
    for name in registry:
        n, correct = totals[name], corrects[name]
        if n:
            exact = Fraction(100 * correct, n)
            exact_ratios.append(exact)
            per_category[name] = CategoryScore(n, correct, round1(exact))
        else:
            per_category[name] = CategoryScore(0, 0, 0.0)

    macro = round1(sum(exact_ratios) / len(exact_ratios)) if exact_ratios else 0.0
    total_n = sum(totals.values())
    total_correct = sum(corrects.values())
    micro = round1(Fraction(100 * total_correct, total_n)) if total_n else 0.0
    return EvalReport(
        run_id=run_id,
        strategy=strategy,
        per_category=per_category,
        macro_avg=macro,
        micro_avg=micro,
        failures=failures,
    )


@dataclass(frozen=True)
class Comparison:
    base_strategy: str
    other_strategy: str
    per_category: dict[str, float]
    macro_delta: float
    micro_delta: float


def _decimal_delta(a: float, b: float) -> float:
    # Values are already 1-decimal; subtract as decimal strings to stay exact.
    return float(Decimal(str(b)) - Decimal(str(a)))


def compare_reports(a: EvalReport, b: EvalReport) -> Comparison:
    """Per-category and average deltas, b minus a."""
    if list(a.per_category) != list(b.per_category):
        raise EvalError("reports cover different categories")
    per_category = {
        name: _decimal_delta(a.per_category[name].accuracy, b.per_category[name].accuracy)
        for name in a.per_category
    }
    return Comparison(
        base_strategy=a.strategy,
        other_strategy=b.strategy,
        per_category=per_category,
        macro_delta=_decimal_delta(a.macro_avg, b.macro_avg),
        micro_delta=_decimal_delta(a.micro_avg, b.micro_avg),
    )


@dataclass(frozen=True)
class RenderedTable:
    text: str
    csv: str


def render_table(
    reports: Sequence[EvalReport],
    registry: CategoryRegistry | None = None,
    average: str = "macro",
) -> RenderedTable:
    """One row per report: method, the per-category accuracies, and AVG.

    AVG shows the macro average by default; pass average="micro" to pool
    samples instead.
    """
    if average not in ("macro", "micro"):
        raise EvalError("average must be 'macro' or 'micro'")
    if reports:
        names = list(reports[0].per_category)
        for report in reports[1:]:
            if list(report.per_category) != names:
                raise EvalError("reports cover different categories")
    else:
        names = list(registry or CategoryRegistry.default())

    header = ["method"] + names + ["AVG"]
    rows = []
    for report in reports:
        avg = report.macro_avg if average == "macro" else report.micro_avg
        rows.append(
            [report.strategy]
            + ["%.1f" % report.per_category[name].accuracy for name in names]
            + ["%.1f" % avg]
        )

    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)

    widths = [
        max(len(str(cell)) for cell in column)
        for column in zip(header, *rows)
    ] if rows else [len(cell) for cell in header]
    lines = [
        "  ".join(
            str(cell).ljust(w) if i == 0 else str(cell).rjust(w)
            for i, (cell, w) in enumerate(zip(row, widths))
        ).rstrip()
        for row in [header] + rows
    ]
    return RenderedTable(text="\n".join(lines), csv=buffer.getvalue())

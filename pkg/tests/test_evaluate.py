import csv
import io
import random
from dataclasses import dataclass
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from vidweave.dataset import CategoryRegistry, Option, Sample
from vidweave.evaluate import (
    EvalError,
    EvalReport,
    CategoryScore,
    compare_reports,
    extract_answer,
    render_table,
    score_run,
)

ABCD = ("A", "B", "C", "D")

# Labeled extraction fixtures: (model text, option labels, expected label).
EXTRACTION_FIXTURES = [
    ("Let me think about the frames.\nFinal Answer: D", ABCD, "D"),
    ("Answer: B", ABCD, "B"),
    ("Answer: (C)", ABCD, "C"),
    ("Answer:D", ABCD, "D"),
    ("The ANSWER: C", ABCD, "C"),
    ("First I thought Answer: A, but no. Final Answer: C", ABCD, "C"),
    ("(A) looked plausible early on. Final Answer: (B)", ABCD, "B"),
    ("The answer is (B).", ABCD, "B"),
    ("Options (A) and (B) both look right, but (D) is best.", ABCD, "D"),
    ("I pick B", ABCD, "B"),
    ("It must be C, since the chef stirs the pot at t=4.", ABCD, "C"),
    ("A B C D", ABCD, "D"),
    ("Answer: Because the cake rose early, B is correct.", ABCD, "B"),
    ("I am not sure.", ABCD, None),
    ("The answer: E", ABCD, None),
    ("b", ABCD, None),
]


@pytest.mark.parametrize("text,labels,expected", EXTRACTION_FIXTURES)
def test_extraction_fixtures(text, labels, expected):
    assert extract_answer(text, labels) == expected


def test_extraction_requires_label_among_options():
    assert extract_answer("Final Answer: D", ("A", "B")) is None
    assert extract_answer("(C)", ("A", "B")) is None


@given(
    prefix=st.lists(
        st.text(alphabet="abcdefghijklmnopqrstuvwxyz", min_size=1, max_size=6),
        max_size=5,
    ),
    suffix=st.lists(
        st.text(alphabet="abcdefghijklmnopqrstuvwxyz", min_size=1, max_size=6),
        max_size=5,
    ),
    label=st.sampled_from(ABCD),
)
def test_single_bare_label_is_found(prefix, suffix, label):
    text = " ".join(prefix + [label] + suffix)
    assert extract_answer(text, ABCD) == label


@dataclass
class FakeRecord:
    sample_id: str
    extracted_answer: str | None


def make_gold(categories_counts):
    """Build samples: categories_counts maps category -> count."""
    samples = []
    i = 0
    for category, count in categories_counts.items():
        for _ in range(count):
            samples.append(
                Sample(
                    id="s%04d" % i,
                    video_id="v%04d" % i,
                    question="q",
                    options=(Option("A", "x"), Option("B", "y")),
                    gold_answer="A",
                    category=category,
                )
            )
            i += 1
    return samples


def test_score_run_hand_computed_example():
    registry = CategoryRegistry(("X", "Y"))
    samples = []
    for i, category in enumerate(["X", "X", "Y"]):
        samples.append(
            Sample(
                id="s%d" % i, video_id="v%d" % i, question="q",
                options=(Option("A", "x"), Option("B", "y")),
                gold_answer="A", category=category,
            )
        )
    records = [
        FakeRecord("s0", "A"),
        FakeRecord("s1", "B"),
        FakeRecord("s2", "A"),
    ]
    report = score_run(records, samples, registry=registry)
    assert report.per_category["X"].accuracy == 50.0
    assert report.per_category["Y"].accuracy == 100.0
    assert report.macro_avg == 75.0
    assert report.micro_avg == 66.7
    assert report.failures == 0


def test_score_run_all_failures():
    samples = make_gold({"Event": 4})
    records = [FakeRecord(s.id, None) for s in samples]
    report = score_run(records, samples)
    assert report.failures == 4
    assert report.per_category["Event"].accuracy == 0.0
    assert report.macro_avg == 0.0
    assert report.micro_avg == 0.0


def test_score_run_unknown_sample():
    with pytest.raises(EvalError, match="unknown sample_id"):
        score_run([FakeRecord("ghost", "A")], [])


def tally_oracle(records, samples, registry):
    """Independent Fraction-based tally used to cross-check score_run."""
    gold = {s.id: s for s in samples}
    by_category = {}
    for record in records:
        sample = gold[record.sample_id]
        n, c = by_category.get(sample.category, (0, 0))
        n += 1
        if record.extracted_answer == sample.gold_answer:
            c += 1
        by_category[sample.category] = (n, c)
    accuracies = {}
    ratios = []
    total_n = total_c = 0
    for name in registry:
        n, c = by_category.get(name, (0, 0))
        if n:
            ratio = Fraction(100 * c, n)
            ratios.append(ratio)
            accuracies[name] = ratio
        total_n += n
        total_c += c
    macro = sum(ratios) / len(ratios) if ratios else Fraction(0)
    micro = Fraction(100 * total_c, total_n) if total_n else Fraction(0)
    return accuracies, macro, micro


def round_half_up_oracle(x: Fraction) -> float:
    # Scale to one decimal, add half, floor: textbook half-up on exact ratios.
    scaled = x * 10
    floored = (scaled.numerator + scaled.denominator // 2) // scaled.denominator \
        if scaled.denominator != 1 else scaled.numerator
    # The above floors (n + d/2)/d which is half-up for non-negative x.
    return floored / 10


def test_score_run_matches_independent_tally():
    rng = random.Random(424242)
    registry = CategoryRegistry.default()
    counts = {name: rng.randint(0, 30) for name in registry}
    samples = make_gold(counts)
    records = []
    for sample in samples:
        roll = rng.random()
        answer = "A" if roll < 0.55 else ("B" if roll < 0.9 else None)
        records.append(FakeRecord(sample.id, answer))
    report = score_run(records, samples, registry=registry)

    accuracies, macro, micro = tally_oracle(records, samples, registry)
    for name in registry:
        if name in accuracies:
            assert report.per_category[name].accuracy == round_half_up_oracle(
                accuracies[name]
            )
        else:
            assert report.per_category[name].n == 0
    assert report.macro_avg == round_half_up_oracle(macro)
    assert report.micro_avg == round_half_up_oracle(micro)
    assert report.failures == sum(1 for r in records if r.extracted_answer is None)


@given(st.integers(min_value=0, max_value=60), st.integers(min_value=0, max_value=60))
def test_score_run_counts_are_additive(n1, n2):
    samples = make_gold({"Event": n1 + n2})
    rng = random.Random(n1 * 100 + n2)
    records = [
        FakeRecord(s.id, rng.choice(["A", "B", None])) for s in samples
    ]
    first, second = records[:n1], records[n1:]
    whole = score_run(records, samples)
    part1 = score_run(first, samples)
    part2 = score_run(second, samples)
    assert whole.per_category["Event"].n == (
        part1.per_category["Event"].n + part2.per_category["Event"].n
    )
    assert whole.per_category["Event"].correct == (
        part1.per_category["Event"].correct + part2.per_category["Event"].correct
    )
    assert whole.failures == part1.failures + part2.failures


def report_with(macro, micro=None, strategy="s", categories=("X", "Y")):
    per_category = {
        name: CategoryScore(10, 5, macro) for name in categories
    }
    return EvalReport(
        run_id="r", strategy=strategy, per_category=per_category,
        macro_avg=macro, micro_avg=micro if micro is not None else macro,
        failures=0,
    )


def test_compare_reports_exact_decimal_deltas():
    comparison = compare_reports(report_with(42.8), report_with(51.4))
    assert comparison.macro_delta == 8.6
    comparison = compare_reports(report_with(48.9), report_with(52.9))
    assert comparison.macro_delta == 4.0


def test_compare_reports_identical_is_zero():
    a = report_with(33.3)
    comparison = compare_reports(a, a)
    assert comparison.macro_delta == 0.0
    assert comparison.micro_delta == 0.0
    assert all(d == 0.0 for d in comparison.per_category.values())


def test_compare_reports_category_mismatch():
    with pytest.raises(EvalError, match="categories"):
        compare_reports(
            report_with(10.0, categories=("X", "Y")),
            report_with(10.0, categories=("X", "Z")),
        )


def test_render_table_shape():
    registry = CategoryRegistry.default()
    samples = make_gold({name: 2 for name in registry})
    records = [FakeRecord(s.id, "A") for s in samples]
    reports = [
        score_run(records, samples, strategy="cot-vanilla"),
        score_run(records[: len(records) // 2], samples, strategy="cot-vit"),
    ]
    table = render_table(reports)
    rows = list(csv.reader(io.StringIO(table.csv)))
    assert len(rows) == 3
    assert len(rows[0]) == 16
    assert rows[0][0] == "method" and rows[0][-1] == "AVG"
    assert rows[1][0] == "cot-vanilla"
    assert len(table.text.splitlines()) == 3


def test_render_table_empty():
    table = render_table([])
    rows = list(csv.reader(io.StringIO(table.csv)))
    assert len(rows) == 1
    assert len(rows[0]) == 16


def test_render_table_csv_round_trip():
    registry = CategoryRegistry(("X", "Y", "Z"))
    samples = make_gold({"X": 3, "Y": 7, "Z": 1})
    rng = random.Random(9)
    records = [FakeRecord(s.id, rng.choice(["A", "B"])) for s in samples]
    report = score_run(records, samples, registry=registry, strategy="m")
    table = render_table([report])
    rows = list(csv.reader(io.StringIO(table.csv)))
    header, data = rows[0], rows[1]
    for name, cell in zip(header[1:-1], data[1:-1]):
        assert float(cell) == report.per_category[name].accuracy
    assert float(data[-1]) == report.macro_avg


def test_render_table_micro_flag():
    registry = CategoryRegistry(("X", "Y"))
    samples = make_gold({"X": 2, "Y": 1})
    records = [FakeRecord(s.id, "A" if s.category == "Y" else None) for s in samples]
    report = score_run(records, samples, registry=registry, strategy="m")
    macro_table = render_table([report])
    micro_table = render_table([report], average="micro")
    assert macro_table.csv.splitlines()[1].endswith("50.0")
    assert micro_table.csv.splitlines()[1].endswith("33.3")

import itertools
import json
import shutil

import pytest
from hypothesis import given, strategies as st

from agentspec.backends import Backends, MockLlm, MockScript
from agentspec.errors import CaseLoadError, EmptyInput
from agentspec.harness import (
    ConformanceCase,
    build_tools,
    case_dirs,
    evaluate_dataset,
    exact_match,
    latency_stats,
    load_records,
    run_conformance_case,
    run_suite,
    token_f1,
)
from agentspec.serialization import load_file


@pytest.mark.parametrize("pred,gold,expected", [
    ("paris france", "paris", 2 / 3),
    ("", "paris", 0.0),
    ("", "", 1.0),
    ("The Paris", "paris the", 1.0),
    ("a a b", "a b b", 2 / 3),
])
def test_token_f1_examples(pred, gold, expected):
    assert token_f1(pred, gold) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("pred,gold,expected", [
    (" Paris ", "paris", 1), ("Paris.", "Paris", 0), ("", "", 1),
])
def test_exact_match_examples(pred, gold, expected):
    assert exact_match(pred, gold) == expected


def test_latency_stats():
    assert latency_stats([4.0]) == (4.0, 0.0)
    assert latency_stats([3.0, 4.0, 5.0]) == (4.0, 1.0)
    with pytest.raises(EmptyInput):
        latency_stats([])


words = st.lists(st.sampled_from(["a", "b", "c", "Paris", "the"]), max_size=6).map(" ".join)


@given(words, words)
def test_token_f1_bounded_and_symmetric(pred, gold):
    score = token_f1(pred, gold)
    assert 0.0 <= score <= 1.0
    assert score == pytest.approx(token_f1(gold, pred))


@given(st.sampled_from(["a", "b", "Paris"]), st.sampled_from(["a", "b", "paris"]))
def test_single_token_f1_is_exact_match(pred, gold):
    assert token_f1(pred, gold) == exact_match(pred, gold)


def test_conformance_suite_passes(data_dir):
    results = run_suite(data_dir / "conformance")
    assert len(results) == len(case_dirs(data_dir / "conformance")) >= 15
    assert [r.summary() for r in results if not r.passed] == []


def test_tampered_case_fails_with_one_line_diff(data_dir, tmp_path):
    case = tmp_path / "case"
    shutil.copytree(data_dir / "conformance" / "simple_prompting", case)
    expected = json.loads((case / "expected.json").read_text())
    expected["outputs"]["llm_output"] = "tampered"
    (case / "expected.json").write_text(json.dumps(expected))
    result = run_conformance_case(case)
    assert not result.passed
    assert "\n" not in result.diff and result.diff.startswith("outcome:")

    shutil.copytree(data_dir / "conformance" / "simple_prompting", tmp_path / "trace")
    golden = tmp_path / "trace" / "trace.golden"
    lines = golden.read_text().splitlines()
    golden.write_text("\n".join(lines[:-1]) + "\n")
    result = run_conformance_case(tmp_path / "trace")
    assert not result.passed and "\n" not in result.diff


def test_case_load_errors(data_dir, tmp_path):
    with pytest.raises(CaseLoadError):
        ConformanceCase.load(tmp_path)
    shutil.copytree(data_dir / "conformance" / "simple_prompting", tmp_path / "c")
    (tmp_path / "c" / "expected.json").write_text('{"outputs": {}, "error": "X"}')
    with pytest.raises(CaseLoadError):
        ConformanceCase.load(tmp_path / "c")


def test_stub_tools():
    registry = build_tools({
        "fixed": {"returns": {"x": 1}},
        "table": {"table": [{"args": {"q": "a"}, "returns": {"x": 2}}]},
        "bad": {"raises": "nope"},
    })
    assert registry.get("fixed").func() == {"x": 1}
    assert registry.get("table").func(q="a") == {"x": 2}
    with pytest.raises(KeyError):
        registry.get("table").func(q="b")
    with pytest.raises(RuntimeError):
        registry.get("bad").func()
    with pytest.raises(CaseLoadError):
        build_tools({"empty": {}})


@pytest.fixture
def bench(data_dir):
    root = data_dir / "bench"
    return (load_file(root / "qa_flow.json"), load_records(root / "toy_qa.jsonl"),
            MockScript.from_file(root / "toy_qa.mock.json"))


def test_evaluate_dataset_scores(bench):
    doc, records, script = bench
    ticks = itertools.count()
    report = evaluate_dataset(doc, None, records[:3], "exact_match", Backends(MockLlm(script)),
                              clock=lambda: float(next(ticks)))
    assert report.n == 3 and report.metric_mean == 1.0
    assert (report.latency_mean, report.latency_std) == (1.0, 0.0)
    table = report.table()
    assert "EM (%)" in table and "100.0 " in table


def test_evaluate_dataset_is_reproducible(bench):
    doc, records, script = bench
    first = evaluate_dataset(doc, None, records, "token_f1", Backends(MockLlm(script)))
    second = evaluate_dataset(doc, None, records, "token_f1", Backends(MockLlm(script)))
    assert first.scores() == second.scores()
    assert first.to_dict()["aggregate"]["n"] == 20


def test_failed_records_score_zero(bench):
    doc, records, _ = bench
    report = evaluate_dataset(doc, None, records[:2], "exact_match", Backends(MockLlm(MockScript(()))))
    assert report.scores() == [0.0, 0.0]
    assert all(r.note.startswith("NodeExecutionFailed") for r in report.records)


def test_suspended_records_are_noted(data_dir):
    doc = load_file(data_dir / "conformance" / "input_message" / "spec.json")
    report = evaluate_dataset(doc, None, [{"id": "1", "inputs": {"topic": "France"}, "expected": "Paris"}],
                              backends=Backends(MockLlm(MockScript(()))))
    assert report.records[0].note == "suspended" and report.records[0].score == 0.0


def test_evaluate_rejects_empty_and_unknown_metric(bench):
    doc, _, script = bench
    with pytest.raises(EmptyInput):
        evaluate_dataset(doc, None, [], backends=Backends(MockLlm(script)))
    with pytest.raises(ValueError):
        evaluate_dataset(doc, None, [], "bleu")

"""Conformance-case runner and dataset evaluation.

A conformance case is a directory holding:

* ``spec.json`` - the document under test;
* ``scenario.json`` - entry id, inputs, mock LLM script, resume payloads and
  stub tools, so the run needs no external I/O;
* ``expected.json`` - ``{"outputs": ...}``, ``{"suspended": <status>}`` or
  ``{"error": "<ExceptionName>"}``;
* ``trace.golden`` - the expected trace, one JSON event per line.
"""

from __future__ import annotations

import json
import statistics
import time
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Optional, Sequence

from .backends import Backends, MockLlm, MockScript, ToolRegistry
from .engine import (
    AwaitingClientTool,
    AwaitingUserInput,
    ClientToolResult,
    ExecutionSession,
    Finished,
    UserMessage,
)
from .errors import AgentSpecError, CaseLoadError, DocumentError, EmptyInput
from .serialization import SpecDocument, load_file
from .templating import render_value

CASE_FILES = ("spec.json", "scenario.json", "expected.json", "trace.golden")


# -- conformance ------------------------------------------------------------------

@dataclass
class Scenario:
    entry: Optional[str] = None
    inputs: dict = field(default_factory=dict)
    script: MockScript = field(default_factory=lambda: MockScript(()))
    resume: list = field(default_factory=list)
    tools: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Scenario":
        return cls(
            entry=data.get("entry"),
            inputs=dict(data.get("inputs", {})),
            script=MockScript.from_dict(data.get("script", {"rules": []})),
            resume=list(data.get("resume", [])),
            tools=dict(data.get("tools", {})),
        )

    def payloads(self) -> list:
        out = []
        for item in self.resume:
            if "user" in item:
                out.append(UserMessage(item["user"]))
            elif "tool_result" in item:
                result = item["tool_result"]
                out.append(ClientToolResult(result["call_id"], dict(result.get("outputs", {}))))
            else:
                raise CaseLoadError(f"unknown resume payload {item!r}")
        return out


def stub_tool(name: str, stub: Mapping[str, Any]) -> Callable[..., Any]:
    """Build a deterministic stand-in for a ServerTool.

    ``{"returns": {...}}`` always answers the same; ``{"table": [{"args", "returns"}]}``
    answers by exact argument lookup; ``{"raises": "msg"}`` fails.
    """
    if "returns" in stub:
        value = stub["returns"]
        return lambda **_: json.loads(json.dumps(value))
    if "table" in stub:
        rows = [(row.get("args", {}), row["returns"]) for row in stub["table"]]

        def lookup(**kwargs):
            for args, returns in rows:
                if args == kwargs:
                    return json.loads(json.dumps(returns))
            raise KeyError(f"stub {name!r} has no row for {kwargs!r}")
        return lookup
    if "raises" in stub:
        message = stub["raises"]

        def fail(**_):
            raise RuntimeError(message)
        return fail
    raise CaseLoadError(f"tool stub {name!r} needs 'returns', 'table' or 'raises'")


def build_tools(stubs: Mapping[str, Mapping[str, Any]]) -> ToolRegistry:
    registry = ToolRegistry()
    for name, stub in stubs.items():
        registry.register(name, stub_tool(name, stub))
    return registry


@dataclass
class ConformanceCase:
    name: str
    document: SpecDocument
    scenario: Scenario
    expected: dict
    golden: list[str]
    path: Optional[Path] = None

    @classmethod
    def load(cls, directory: str | Path) -> "ConformanceCase":
        directory = Path(directory)
        missing = [f for f in CASE_FILES if not (directory / f).is_file()]
        if missing:
            raise CaseLoadError(f"{directory}: missing {', '.join(missing)}")
        try:
            document = load_file(directory / "spec.json")
            scenario = Scenario.from_dict(_read_json(directory / "scenario.json"))
            expected = _read_json(directory / "expected.json")
        except (DocumentError, ValueError, KeyError, TypeError) as exc:
            raise CaseLoadError(f"{directory}: {exc}") from exc
        if not isinstance(expected, dict) or len(set(expected) & {"outputs", "error", "suspended"}) != 1:
            raise CaseLoadError(f"{directory}: expected.json needs exactly one of outputs/error/suspended")
        golden = (directory / "trace.golden").read_text(encoding="utf-8").splitlines()
        return cls(directory.name, document, scenario, expected, golden, directory)


def _read_json(path: Path) -> Any:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


@dataclass
class CaseOutcome:
    """What a case run actually produced, in expected.json form."""

    result: dict
    trace: list[str]
    session: Optional[ExecutionSession] = None


def execute_case(case: ConformanceCase) -> CaseOutcome:
    backends = Backends(MockLlm(case.scenario.script), build_tools(case.scenario.tools))
    session = ExecutionSession(case.document, backends)
    payloads = case.scenario.payloads()
    try:
        status = session.start(case.scenario.entry, case.scenario.inputs)
        for payload in payloads:
            if not isinstance(status, (AwaitingUserInput, AwaitingClientTool)):
                break
            status = session.resume(payload)
    except AgentSpecError as exc:
        return CaseOutcome({"error": type(exc).__name__}, session.trace_lines(), session)
    if isinstance(status, Finished):
        return CaseOutcome({"outputs": status.outputs}, session.trace_lines(), session)
    return CaseOutcome({"suspended": status.to_dict()}, session.trace_lines(), session)


@dataclass
class CaseResult:
    name: str
    passed: bool
    diff: str = ""

    def summary(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}" + ("" if self.passed else f": {self.diff}")


def _compact(value: Any) -> str:
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def run_conformance_case(case: ConformanceCase | str | Path) -> CaseResult:
    """Pass iff the outcome equals expected.json and the trace equals the golden
    file line for line."""
    if not isinstance(case, ConformanceCase):
        case = ConformanceCase.load(case)
    outcome = execute_case(case)
    if outcome.result != case.expected:
        return CaseResult(case.name, False,
                          f"outcome: expected {_compact(case.expected)} got {_compact(outcome.result)}")
    for i, (want, got) in enumerate(zip(case.golden, outcome.trace), start=1):
        if want != got:
            return CaseResult(case.name, False, f"trace line {i}: expected {want} got {got}")
    if len(case.golden) != len(outcome.trace):
        return CaseResult(case.name, False,
                          f"trace length: expected {len(case.golden)} lines got {len(outcome.trace)}")
    return CaseResult(case.name, True)


def case_dirs(root: str | Path) -> list[Path]:
    root = Path(root)
    if (root / "spec.json").is_file():
        return [root]
    return sorted(p for p in root.iterdir() if p.is_dir() and (p / "spec.json").is_file())


def run_suite(root: str | Path) -> list[CaseResult]:
    results = []
    for directory in case_dirs(root):
        try:
            results.append(run_conformance_case(directory))
        except CaseLoadError as exc:
            results.append(CaseResult(directory.name, False, f"load error: {exc}"))
    return results


def write_case(directory: str | Path, document: SpecDocument, scenario: Mapping[str, Any],
               freeze: bool = True) -> CaseOutcome:
    """Write spec.json and scenario.json; with ``freeze`` also record the current
    outcome as expected.json and trace.golden (review before committing)."""
    from .serialization import save_file

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_file(document, directory / "spec.json")
    (directory / "scenario.json").write_text(
        json.dumps(scenario, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    case = ConformanceCase(directory.name, document, Scenario.from_dict(scenario), {}, [], directory)
    outcome = execute_case(case)
    if freeze:
        (directory / "expected.json").write_text(
            json.dumps(outcome.result, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        (directory / "trace.golden").write_text(
            "".join(line + "\n" for line in outcome.trace), encoding="utf-8")
    return outcome


# -- metrics -----------------------------------------------------------------------

def _tokens(text: str) -> list[str]:
    return text.lower().split()


def token_f1(prediction: str, gold: str) -> float:
    """Token-overlap F1 over lowercased whitespace tokens."""
    pred, ref = _tokens(prediction), _tokens(gold)
    if not pred and not ref:
        return 1.0
    if not pred or not ref:
        return 0.0
    overlap = sum((Counter(pred) & Counter(ref)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred)
    recall = overlap / len(ref)
    return 2 * precision * recall / (precision + recall)


def exact_match(prediction: str, gold: str) -> int:
    return int(prediction.strip().lower() == gold.strip().lower())


METRICS: dict[str, Callable[[str, str], float]] = {
    "exact_match": exact_match,
    "token_f1": token_f1,
}


def latency_stats(durations: Sequence[float]) -> tuple[float, float]:
    """Mean and sample standard deviation (n-1); a single sample has std 0."""
    if not durations:
        raise EmptyInput("latency_stats needs at least one duration")
    mean = statistics.fmean(durations)
    std = statistics.stdev(durations) if len(durations) > 1 else 0.0
    return mean, std


# -- dataset evaluation ----------------------------------------------------------------

@dataclass
class EvalRecord:
    id: str
    inputs: dict
    expected: str

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "EvalRecord":
        try:
            return cls(str(data["id"]), dict(data["inputs"]), str(data["expected"]))
        except (KeyError, TypeError) as exc:
            raise CaseLoadError(f"bad record {data!r}: {exc}") from exc


def load_records(path: str | Path) -> list[EvalRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(EvalRecord.from_dict(json.loads(line)))
            except json.JSONDecodeError as exc:
                raise CaseLoadError(f"{path}:{lineno}: {exc}") from exc
    return records


@dataclass
class RecordResult:
    id: str
    prediction: str
    score: float
    latency_seconds: float
    note: str = ""


@dataclass
class EvalReport:
    metric: str
    records: list[RecordResult]
    metric_mean: float
    latency_mean: float
    latency_std: float
    n: int
    setup: str = ""
    runtime: str = "agentspec"

    def to_dict(self) -> dict[str, Any]:
        return {
            "metric": self.metric,
            "setup": self.setup,
            "runtime": self.runtime,
            "aggregate": {
                "metric_mean": self.metric_mean,
                "latency_mean": self.latency_mean,
                "latency_std": self.latency_std,
                "n": self.n,
            },
            "records": [asdict(r) for r in self.records],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def scores(self) -> list[float]:
        return [r.score for r in self.records]

    def table(self) -> str:
        """Aligned text table: setup, runtime, metric (%), time per query."""
        label = {"token_f1": "F1-score (%)", "exact_match": "EM (%)"}.get(self.metric, f"{self.metric} (%)")
        header = ["Agent Setup", "Runtime", label, "Time/query (s)"]
        row = [self.setup or "-", self.runtime, f"{100 * self.metric_mean:.1f}",
               f"{self.latency_mean:.4f} ± {self.latency_std:.4f}"]
        widths = [max(len(h), len(c)) for h, c in zip(header, row)]
        fmt = lambda cells: "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
        return "\n".join([fmt(header), "  ".join("-" * w for w in widths), fmt(row)]) + "\n"


def _prediction(outputs: Mapping[str, Any], output_name: Optional[str]) -> str:
    if output_name is None:
        if len(outputs) != 1:
            raise ValueError(f"cannot pick a prediction from outputs {sorted(outputs)}; pass output_name")
        output_name = next(iter(outputs))
    return render_value(outputs[output_name])


def evaluate_dataset(document: SpecDocument, entry_id: Optional[str], records: Iterable[EvalRecord | Mapping],
                     metric: str = "exact_match", backends: Optional[Backends] = None,
                     output_name: Optional[str] = None, setup: str = "",
                     clock: Callable[[], float] = time.perf_counter) -> EvalReport:
    """Run every record in its own session and aggregate score and latency.

    Failures do not abort the batch: a suspended run scores 0 with note
    "suspended", any other error scores 0 with the error as note.
    """
    try:
        score_fn = METRICS[metric]
    except KeyError:
        raise ValueError(f"unknown metric {metric!r}; choose from {sorted(METRICS)}") from None
    backends = backends or Backends()
    results = []
    for record in records:
        if not isinstance(record, EvalRecord):
            record = EvalRecord.from_dict(record)
        started = clock()
        prediction, note = "", ""
        try:
            status = ExecutionSession(document, backends).start(entry_id, record.inputs)
            if isinstance(status, Finished):
                prediction = _prediction(status.outputs, output_name)
            else:
                note = "suspended"
        except (AgentSpecError, ValueError) as exc:
            note = f"{type(exc).__name__}: {exc}"
        elapsed = clock() - started
        score = float(score_fn(prediction, record.expected)) if not note else 0.0
        results.append(RecordResult(record.id, prediction, score, elapsed, note))
    if not results:
        raise EmptyInput("dataset has no records")
    latency_mean, latency_std = latency_stats([r.latency_seconds for r in results])
    metric_mean = statistics.fmean(r.score for r in results)
    return EvalReport(metric, results, metric_mean, latency_mean, latency_std, len(results), setup)


import io
import json
import sys

from agentspec.cli import main, parse_input

from conftest import DATA

CASES = DATA / "conformance"


def run(*argv):
    out = io.StringIO()
    code = main([str(a) for a in argv], out=out)
    return code, out.getvalue()


def test_parse_input():
    assert parse_input("n=3") == ("n", 3)
    assert parse_input("s=hello world") == ("s", "hello world")
    assert parse_input('xs=[1, 2]') == ("xs", [1, 2])


def test_validate(data_dir):
    assert run("validate", data_dir / "examples" / "simple_prompting_flow.json") == (0, "ok\n")
    code, text = run("validate", data_dir / "examples" / "duplicated_edge.json")
    assert code == 1 and text.startswith("ERROR CF_DUPLICATE_BRANCH")


def test_validate_unparseable(tmp_path, data_dir):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run("validate", bad)[0] == 2
    assert run("validate", tmp_path / "missing.json")[0] == 2
    assert run("validate", data_dir / "defects" / "dangling_ref.json")[0] == 1


def test_run_finished(data_dir, tmp_path):
    trace = tmp_path / "trace.jsonl"
    code, text = run("run", data_dir / "examples" / "simple_prompting_flow.json", "--input", "prompt=hi",
                     "--script", data_dir / "examples" / "hello.mock.json", "--trace", trace)
    assert (code, text) == (0, '{"llm_output":"hello"}\n')
    assert all(json.loads(line)["step"] >= 0 for line in trace.read_text().splitlines())


def _script(tmp_path, rules):
    path = tmp_path / "script.json"
    path.write_text(json.dumps({"rules": rules}))
    return path


def test_run_suspended_and_runtime_error(data_dir, tmp_path):
    empty = _script(tmp_path, [])
    code, text = run("run", CASES / "input_message" / "spec.json", "--input", "topic=France", "--script", empty)
    assert code == 3 and json.loads(text)["status"] == "awaiting_user_input"
    code, _ = run("run", data_dir / "examples" / "simple_prompting_flow.json", "--input", "prompt=hi", "--script", empty)
    assert code == 4


def test_run_invalid_document(data_dir):
    assert run("run", data_dir / "examples" / "duplicated_edge.json")[0] == 1


def test_run_interactive(tmp_path, monkeypatch):
    monkeypatch.setattr(sys, "stdin", io.StringIO("Paris\n"))
    code, text = run("run", CASES / "input_message" / "spec.json", "--input", "topic=France",
                     "--script", _script(tmp_path, []), "--interactive")
    assert code == 0
    assert "agent> What is the capital of France?" in text
    assert text.rstrip().endswith('{"user_input":"Paris"}')


def test_run_with_tools_module(tmp_path, monkeypatch):
    (tmp_path / "my_tools.py").write_text(
        "def register(registry):\n"
        "    registry.register('lookup', lambda q: {'result': q + ' means y'})\n")
    monkeypatch.syspath_prepend(str(tmp_path))
    scenario = json.loads((CASES / "agent_server_tool" / "scenario.json").read_text())
    script = _script(tmp_path, scenario["script"]["rules"])
    code, text = run("run", CASES / "agent_server_tool" / "spec.json", "--input", "question=what is x?",
                     "--script", script, "--tools", "my_tools")
    assert (code, text) == (0, '{"answer":"y"}\n')


def test_convert_roundtrip(data_dir, tmp_path):
    code, yaml_text = run("convert", data_dir / "examples" / "simple_prompting_flow.json", "--to", "yaml")
    assert code == 0
    path = tmp_path / "doc.yaml"
    path.write_text(yaml_text)
    code, json_text = run("convert", path, "--to", "json")
    assert code == 0
    assert json.loads(json_text) == json.loads((data_dir / "examples" / "simple_prompting_flow.json").read_text())


def test_inspect(data_dir):
    code, text = run("inspect", data_dir / "examples" / "simple_prompting_flow.json")
    assert code == 0 and "llm_node" in text and "LlmNode" in text
    code, dot = run("inspect", data_dir / "examples" / "simple_prompting_flow.json", "--dot")
    assert code == 0 and dot.startswith("digraph") and "style=dashed" in dot


def test_conformance(tmp_path):
    code, text = run("conformance")
    assert code == 0 and text.splitlines()[-1].endswith("passed")
    assert run("conformance", tmp_path)[0] == 2


def test_bench(data_dir, tmp_path):
    bench = data_dir / "bench"
    report = tmp_path / "report.json"
    code, text = run("bench", bench / "qa_flow.json", "--dataset", bench / "toy_qa.jsonl",
                     "--script", bench / "toy_qa.mock.json", "--metric", "exact_match",
                     "--setup", "toy", "--output", report)
    assert code == 0 and "Agent Setup" in text and "EM (%)" in text
    data = json.loads(report.read_text())
    assert data["aggregate"]["n"] == 20 and data["setup"] == "toy"

import json
import re

import pytest

from agentspec.model import (
    Agent,
    BranchingNode,
    ControlFlowEdge,
    DataFlowEdge,
    EndNode,
    Flow,
    LlmNode,
    OutputMessageNode,
    Property,
    StartNode,
    VllmConfig,
)
from agentspec.serialization import SpecDocument, load_file
from agentspec.validation import (
    SEVERITY,
    Diagnostic,
    check_control_flow,
    check_data_flow,
    check_text,
    infer_declared_io,
    validate_document,
)

CFG = VllmConfig(id="cfg", name="m", url="http://x", model_id="m")


def codes(diags):
    return [(d.code, d.component_id) for d in diags]


def test_simple_prompting_flow_valid(data_dir):
    assert validate_document(load_file(data_dir / "examples" / "simple_prompting_flow.json")) == []


def test_clean_corpus_has_no_diagnostics(data_dir):
    for spec in sorted((data_dir / "conformance").glob("*/spec.json")):
        assert validate_document(load_file(spec)) == [], spec.parent.name


def test_defect_corpus(data_dir):
    manifest = json.loads((data_dir / "defects" / "manifest.json").read_text())
    assert len(manifest) >= 10
    for entry in manifest:
        _, diags = check_text((data_dir / "defects" / entry["file"]).read_text())
        errors = {(d.code, d.component_id) for d in diags if d.severity == "error"}
        assert errors == {(entry["code"], entry["component_id"])}, entry["file"]


def test_agent_missing_llm():
    agent = Agent(id="a", name="a")
    assert codes(validate_document(SpecDocument(agent))) == [("AGENT_MISSING_LLM", "a")]


def test_flow_without_start():
    end = EndNode(id="e", name="e")
    flow = Flow(id="f", name="f", nodes=[end])
    assert ("FLOW_MISSING_START", "f") in codes(validate_document(SpecDocument(flow)))


def _branching_flow(wired):
    start = StartNode(id="s", name="s", inputs=[Property.of("v")])
    b = BranchingNode(id="b", name="b", branch_input="v", mapping={"yes": "accept", "no": "reject"})
    end = EndNode(id="e", name="e")
    edges = [ControlFlowEdge(id="c0", name="c0", from_node=start, to_node=b)]
    edges += [ControlFlowEdge(id=f"c-{br}", name=br, from_node=b, from_branch=br, to_node=end) for br in wired]
    return Flow(id="f", name="f", nodes=[start, b, end], control_flow_connections=edges)


def test_dangling_branches():
    diags = check_control_flow(_branching_flow(["accept"]))
    dangling = sorted(re.search(r"'(\w+)'", d.message).group(1) for d in diags if d.code == "CF_DANGLING_BRANCH")
    assert dangling == ["default", "reject"]
    assert check_control_flow(_branching_flow(["accept", "reject", "default"])) == []


def test_duplicate_and_unreachable_and_foreign():
    start = StartNode(id="s", name="s")
    a = OutputMessageNode(id="a", name="a", message_template="hi")
    orphan = OutputMessageNode(id="o", name="o", message_template="bye")
    stranger = EndNode(id="x", name="x")
    end = EndNode(id="e", name="e")
    flow = Flow(id="f", name="f", nodes=[start, a, orphan, end], control_flow_connections=[
        ControlFlowEdge(id="c1", name="c1", from_node=start, to_node=a),
        ControlFlowEdge(id="c2", name="c2", from_node=start, to_node=end),
        ControlFlowEdge(id="c3", name="c3", from_node=a, to_node=end),
        ControlFlowEdge(id="c4", name="c4", from_node=orphan, to_node=stranger),
    ])
    got = codes(check_control_flow(flow))
    assert ("CF_DUPLICATE_BRANCH", "s") in got
    assert ("CF_FOREIGN_NODE", "c4") in got
    assert ("CF_DANGLING_BRANCH", "o") in got
    unreachable = [d for d in check_control_flow(flow) if d.code == "CF_UNREACHABLE"]
    assert [d.component_id for d in unreachable] == ["o"]
    assert unreachable[0].severity == "warning"


def test_self_loop_is_valid(data_dir):
    flow = load_file(data_dir / "conformance" / "self_loop" / "spec.json").root
    assert check_control_flow(flow) == []
    assert check_data_flow(flow) == []


def _two_node(src_type="string", dst_type="string", out="p", extra_edges=()):
    start = StartNode(id="s", name="s", inputs=[Property.of("p", src_type)])
    end = EndNode(id="e", name="e", outputs=[Property.of("p", dst_type)])
    edges = [DataFlowEdge(id="d", name="d", source_node=start, source_output=out,
                          destination_node=end, destination_input="p"), *extra_edges]
    return Flow(id="f", name="f", nodes=[start, end],
                control_flow_connections=[ControlFlowEdge(id="c", name="c", from_node=start, to_node=end)],
                data_flow_connections=edges)


def test_data_flow_checks():
    assert check_data_flow(_two_node()) == []
    assert codes(check_data_flow(_two_node(dst_type="integer"))) == [("DF_TYPE_MISMATCH", "d")]
    got = codes(check_data_flow(_two_node(out="nope")))
    assert ("DF_UNKNOWN_PROPERTY", "d") in got
    assert ("DF_UNBOUND_INPUT", "e") in got


def test_converging_edges_are_legal(data_dir):
    flow = load_file(data_dir / "conformance" / "converge_left" / "spec.json").root
    join_edges = [e for e in flow.data_flow_connections if e.destination_node.id == "converge.join"]
    assert len(join_edges) == 2
    assert check_data_flow(flow) == []


def test_name_based_has_no_edge_checks():
    start = StartNode(id="s", name="s")
    node = OutputMessageNode(id="o", name="o", message_template="{{never_written}}")
    end = EndNode(id="e", name="e")
    flow = Flow(id="f", name="f", nodes=[start, node, end], control_flow_connections=[
        ControlFlowEdge(id="c1", name="c1", from_node=start, to_node=node),
        ControlFlowEdge(id="c2", name="c2", from_node=node, to_node=end)])
    assert check_data_flow(flow) == []


def test_llm_node_io():
    ok = LlmNode(id="l", name="l", llm_config=CFG, prompt_template="{{prompt}}",
                 inputs=[Property.of("prompt")], outputs=[Property.of("out")])
    assert infer_declared_io(ok) == []
    bad = LlmNode(id="l", name="l", llm_config=CFG, prompt_template="{{prompt}}",
                  inputs=[Property.of("question")], outputs=[Property.of("out")])
    assert codes(infer_declared_io(bad)) == [("IO_DECLARATION_MISMATCH", "l")]
    two_out = LlmNode(id="l", name="l", llm_config=CFG, prompt_template="x",
                      outputs=[Property.of("a"), Property.of("b")])
    assert codes(infer_declared_io(two_out)) == [("IO_DECLARATION_MISMATCH", "l")]


def test_diagnostic_contract():
    with pytest.raises(ValueError):
        Diagnostic("x", "CF_UNREACHABLE", "m", "error")
    with pytest.raises(ValueError):
        Diagnostic("x", "CF_DUPLICATE_BRANCH", "", "error")
    d = Diagnostic("n1", "CF_DUPLICATE_BRANCH", "branch 'next' has 2 outgoing control edges")
    assert re.fullmatch(r"(ERROR|WARNING) [A-Z_]+ \S+: .+", d.render())
    assert set(SEVERITY.values()) == {"error", "warning"}


def test_sorted_and_deterministic(data_dir):
    for path in sorted((data_dir / "defects").glob("*.json")):
        if path.name == "manifest.json":
            continue
        text = path.read_text()
        first = check_text(text)[1]
        assert first == check_text(text)[1]
        assert first == sorted(first, key=lambda d: (d.component_id, d.code, d.message))


def test_version_warning(data_dir):
    data = json.loads((data_dir / "examples" / "simple_prompting_flow.json").read_text())
    data["agentspec_version"] = "99.0"
    _, diags = check_text(json.dumps(data))
    assert [(d.code, d.severity) for d in diags] == [("VERSION_UNSUPPORTED", "warning")]

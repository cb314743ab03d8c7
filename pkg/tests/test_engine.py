import random

import pytest
from hypothesis import given, settings, strategies as st

from agentspec.backends import Backends, FinalOutputs, MockLlm, MockScript, ToolCall, ToolRegistry
from agentspec.engine import (
    AwaitingClientTool,
    AwaitingUserInput,
    ClientToolResult,
    ExecutionSession,
    Finished,
    UserMessage,
    compile_name_based,
    start_run,
)
from agentspec.errors import (
    CallIdMismatch,
    InvalidDocument,
    InvalidInputs,
    MaxTurnsExceeded,
    NotSuspended,
    PayloadKindMismatch,
    StepLimitExceeded,
    ToolOutputSchemaMismatch,
    UnboundInput,
)
from agentspec.model import (
    Agent,
    BranchingNode,
    ClientTool,
    ControlFlowEdge,
    DataFlowEdge,
    EndNode,
    Flow,
    InputMessageNode,
    OutputMessageNode,
    Property,
    ServerTool,
    StartNode,
    ToolNode,
    VllmConfig,
)
from agentspec.serialization import SpecDocument, load_file

from flowgen import no_llm, random_name_based_flow

CFG = VllmConfig(id="cfg", name="m", url="http://x", model_id="m")


def chain(nodes, data=(), **kw):
    cf = [ControlFlowEdge(id=f"c{i}", name=f"c{i}", from_node=a, to_node=b)
          for i, (a, b) in enumerate(zip(nodes, nodes[1:]))]
    return Flow(id="f", name="f", nodes=nodes, control_flow_connections=cf,
                data_flow_connections=list(data) if data is not None else None, **kw)


def df(src, out, dst, inp):
    return DataFlowEdge(id=f"{src.id}.{out}->{dst.id}.{inp}", name="d", source_node=src,
                        source_output=out, destination_node=dst, destination_input=inp)


def const_tool(name, value):
    tool = ServerTool(id=f"{name}.tool", name=name, outputs=[Property.of("v", "integer")])
    return tool, (lambda: {"v": value})


def test_recency_picks_latest_writer():
    registry = ToolRegistry()
    start = StartNode(id="s", name="s")
    nodes = [start]
    for name, value in (("a", 1), ("x1", 0), ("x2", 0), ("x3", 0), ("b", 2)):
        tool, impl = const_tool(name, value)
        registry.register(name, impl)
        nodes.append(ToolNode(id=name, name=name, tool=tool))
    end = EndNode(id="e", name="e", outputs=[Property.of("v", "integer")])
    nodes.append(end)
    a, b = nodes[1], nodes[5]
    session = ExecutionSession(SpecDocument(chain(nodes, [df(a, "v", end, "v"), df(b, "v", end, "v")])),
                               no_llm(registry))
    assert session.start() == Finished({"v": 2})
    steps = {e.node_id: e.step for e in session.trace if e.event == "outputs_published"}
    assert steps["a"] < steps["b"]


def test_default_when_no_writer_ran():
    start = StartNode(id="s", name="s")
    end = EndNode(id="e", name="e", outputs=[Property.of("v", "integer", default=42)])
    status = ExecutionSession(SpecDocument(chain([start, end])), no_llm(ToolRegistry())).start()
    assert status == Finished({"v": 42})


def test_unbound_input_without_default():
    start = StartNode(id="s", name="s")
    end = EndNode(id="e", name="e", outputs=[Property.of("v", "integer")])
    session = ExecutionSession(SpecDocument(chain([start, end])), no_llm(ToolRegistry()), validate=False)
    with pytest.raises(UnboundInput):
        session.start()


def test_step_limit_on_unconditional_loop():
    start = StartNode(id="s", name="s")
    spin = OutputMessageNode(id="spin", name="spin", message_template="tick")
    end = EndNode(id="e", name="e")
    flow = Flow(id="f", name="f", nodes=[start, spin, end], control_flow_connections=[
        ControlFlowEdge(id="c0", name="c0", from_node=start, to_node=spin),
        ControlFlowEdge(id="c1", name="c1", from_node=spin, to_node=spin)])
    session = ExecutionSession(SpecDocument(flow), no_llm(ToolRegistry()), validate=False)
    with pytest.raises(StepLimitExceeded):
        session.start()
    assert session.step_counter == 1000


def test_invalid_document_refused(data_dir):
    doc = load_file(data_dir / "examples" / "duplicated_edge.json")
    with pytest.raises(InvalidDocument) as info:
        ExecutionSession(doc, no_llm(ToolRegistry())).start()
    assert info.value.diagnostics


def test_invalid_inputs(data_dir):
    doc = load_file(data_dir / "examples" / "simple_prompting_flow.json")
    with pytest.raises(InvalidInputs):
        start_run(doc, inputs={"nope": 1}, backends=no_llm(ToolRegistry()))


def _ask_flow():
    start = StartNode(id="s", name="s")
    ask = InputMessageNode(id="ask", name="ask", message_template="capital?",
                           outputs=[Property.of("answer")])
    say = OutputMessageNode(id="say", name="say", message_template="answer: {{answer}}",
                            inputs=[Property.of("answer")])
    end = EndNode(id="e", name="e", outputs=[Property.of("answer")])
    return chain([start, ask, say, end], [df(ask, "answer", say, "answer"), df(ask, "answer", end, "answer")])


def test_input_and_output_message_nodes():
    session = ExecutionSession(SpecDocument(_ask_flow()), no_llm(ToolRegistry()))
    assert session.start() == AwaitingUserInput("capital?")
    with pytest.raises(PayloadKindMismatch):
        session.resume(ClientToolResult("call_1", {}))
    assert session.resume(UserMessage("Paris")) == Finished({"answer": "Paris"})
    assert [m.content for m in session.conversation] == ["capital?", "Paris", "answer: Paris"]
    appended = [e for e in session.trace if e.event == "message_appended"]
    assert len(appended) == len(session.conversation)
    with pytest.raises(NotSuspended):
        session.resume(UserMessage("again"))


@pytest.mark.parametrize("value,expected", [("yes", "accept"), ("no", "reject"), ("maybe", "default")])
def test_branching(value, expected):
    start = StartNode(id="s", name="s", inputs=[Property.of("v")])
    b = BranchingNode(id="b", name="b", branch_input="v", mapping={"yes": "accept", "no": "reject"},
                      inputs=[Property.of("v")])
    ends = {br: EndNode(id=br, name=br, outputs=[Property.of("which", default=br)])
            for br in ("accept", "reject", "default")}
    flow = Flow(id="f", name="f", nodes=[start, b, *ends.values()],
                control_flow_connections=[ControlFlowEdge(id="c", name="c", from_node=start, to_node=b)]
                + [ControlFlowEdge(id=f"c{br}", name=br, from_node=b, from_branch=br, to_node=end)
                   for br, end in ends.items()],
                data_flow_connections=[df(start, "v", b, "v")])
    _, status = start_run(SpecDocument(flow), inputs={"v": value}, backends=no_llm(ToolRegistry()))
    assert status == Finished({"which": expected})


def test_compile_name_based():
    start = StartNode(id="s", name="s", inputs=[Property.of("x")])
    mid = OutputMessageNode(id="m", name="m", message_template="{{x}}", inputs=[Property.of("x")])
    end = EndNode(id="e", name="e", outputs=[Property.of("x")])
    compiled = compile_name_based(chain([start, mid, end], data=None))
    assert len(compiled.data_flow_connections) == 2
    lonely = EndNode(id="e", name="e", outputs=[Property.of("y", default="")])
    assert compile_name_based(chain([start, lonely], data=None)).data_flow_connections == ()


def _agent_doc(tools=(), max_turns=10, outputs=(Property.of("answer"),)):
    agent = Agent(id="agent", name="agent", llm_config=CFG, tools=list(tools),
                  instructions="be brief", outputs=list(outputs), max_turns=max_turns)
    return SpecDocument(agent)


def test_agent_plain_text_asks_user():
    backends = Backends(MockLlm(MockScript.of("which city?", FinalOutputs({"answer": "Paris"}))))
    session, status = start_run(_agent_doc(), backends=backends)
    assert status == AwaitingUserInput("which city?")
    assert session.resume(UserMessage("France")) == Finished({"answer": "Paris"})


def test_agent_max_turns():
    tool = ServerTool(id="t", name="ping", outputs=[Property.of("ok", "boolean")])
    registry = ToolRegistry()
    registry.register("ping", lambda: {"ok": True})
    script = MockScript.of(*[ToolCall("", "ping")] * 11)
    with pytest.raises(MaxTurnsExceeded):
        start_run(_agent_doc([tool]), backends=Backends(MockLlm(script), registry))


def test_client_tool_resume_errors():
    tool = ClientTool(id="t", name="locate", outputs=[Property.of("city")])
    script = MockScript.of(ToolCall("", "locate"), FinalOutputs({"answer": "Paris"}))
    session, status = start_run(_agent_doc([tool]), backends=Backends(MockLlm(script)))
    assert status == AwaitingClientTool("call_1", "locate", {})
    with pytest.raises(PayloadKindMismatch):
        session.resume(UserMessage("hi"))
    with pytest.raises(CallIdMismatch):
        session.resume(ClientToolResult("call_9", {"city": "Paris"}))
    with pytest.raises(ToolOutputSchemaMismatch):
        session.resume(ClientToolResult("call_1", {"city": 3}))
    # rejected payloads leave the session suspended
    assert session.resume(ClientToolResult("call_1", {"city": "Paris"})) == Finished({"answer": "Paris"})


def test_runs_are_deterministic(data_dir):
    doc = load_file(data_dir / "examples" / "simple_prompting_flow.json")
    script = MockScript.from_file(data_dir / "examples" / "hello.mock.json")
    traces = []
    for _ in range(2):
        session, status = start_run(doc, inputs={"prompt": "hi"}, backends=Backends(MockLlm(script)))
        traces.append(session.trace_lines())
    assert traces[0] == traces[1]
    assert status == Finished({"llm_output": "hello"})


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_name_based_equals_compiled(seed):
    flow, inputs, registry = random_name_based_flow(random.Random(seed))
    _, plain = start_run(SpecDocument(flow), inputs=inputs, backends=no_llm(registry))
    _, compiled = start_run(SpecDocument(compile_name_based(flow)), inputs=inputs, backends=no_llm(registry))
    assert plain == compiled

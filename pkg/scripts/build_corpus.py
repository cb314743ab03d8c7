"""Regenerate the bundled corpus under src/agentspec/data.

    python scripts/build_corpus.py            # rewrite specs and scenarios only
    python scripts/build_corpus.py --freeze   # also re-record expected.json / trace.golden

Goldens are frozen from a run of the current engine, so every re-freeze must be
reviewed by hand (git diff) before it is committed.
"""

from __future__ import annotations

import argparse
import json
import shutil
from pathlib import Path

from agentspec.harness import write_case
from agentspec.model import (
    Agent,
    AgentNode,
    ApiNode,
    BranchingNode,
    ClientTool,
    ControlFlowEdge,
    DataFlowEdge,
    EndNode,
    Flow,
    FlowNode,
    InputMessageNode,
    LlmNode,
    MapNode,
    MCPTool,
    OutputMessageNode,
    Property,
    RemoteTool,
    ServerTool,
    StartNode,
    ToolNode,
    VllmConfig,
)
from agentspec.serialization import SpecDocument, save_file, serialize, to_dict

DATA = Path(__file__).resolve().parents[1] / "src" / "agentspec" / "data"


def S(title: str, **extra) -> Property:
    return Property.of(title, "string", **extra)


def I(title: str, **extra) -> Property:
    return Property.of(title, "integer", **extra)


def cf(prefix: str, src, dst, branch=None) -> ControlFlowEdge:
    suffix = f".{branch}" if branch else ""
    return ControlFlowEdge(id=f"{prefix}.cf.{src.name}{suffix}->{dst.name}", name=f"{src.name}_to_{dst.name}",
                           from_node=src, from_branch=branch, to_node=dst)


def df(prefix: str, src, out: str, dst, inp: str) -> DataFlowEdge:
    return DataFlowEdge(id=f"{prefix}.df.{src.name}.{out}->{dst.name}.{inp}", name=f"{out}_to_{inp}",
                        source_node=src, source_output=out, destination_node=dst, destination_input=inp)


def llm(prefix: str) -> VllmConfig:
    return VllmConfig(id=f"{prefix}.llm", name="mock model", url="http://localhost:8000", model_id="mock/model")


# -- documents ----------------------------------------------------------------------

def simple_prompting_flow() -> Flow:
    cfg = VllmConfig(id="llm_config", name="<Your Model Name Here>",
                     url="<url.of.your.llm.deployment:port>", model_id="<provider/model-identifier>")
    prompt = Property(json_schema={"title": "prompt", "type": "string"})
    out = Property(json_schema={"title": "llm_output", "type": "string"})
    start = StartNode(id="start_node", name="start", inputs=[prompt])
    end = EndNode(id="end_node", name="end", outputs=[out])
    node = LlmNode(id="llm_node", name="simple llm node", llm_config=cfg, prompt_template="{{prompt}}",
                   inputs=[prompt], outputs=[out])
    return Flow(
        id="simple_prompting_flow", name="Simple prompting flow", start_node=start,
        nodes=[start, node, end],
        control_flow_connections=[
            ControlFlowEdge(id="start_to_llm", name="start_to_llm", from_node=start, to_node=node),
            ControlFlowEdge(id="llm_to_end", name="llm_to_end", from_node=node, to_node=end),
        ],
        data_flow_connections=[
            DataFlowEdge(id="prompt_edge", name="prompt_edge", source_node=start, source_output="prompt",
                         destination_node=node, destination_input="prompt"),
            DataFlowEdge(id="llm_output_edge", name="llm_output_edge", source_node=node,
                         source_output="llm_output", destination_node=end, destination_input="llm_output"),
        ],
    )


def converge() -> Flow:
    """Two branches write ``value``; the joining node reads whichever ran."""
    p = "converge"
    start = StartNode(id=f"{p}.start", name="start", inputs=[S("choice")])
    branch = BranchingNode(id=f"{p}.branch", name="branch", branch_input="choice",
                           mapping={"left": "left", "right": "right"})
    left_tool = ServerTool(id=f"{p}.left_tool", name="left_source", outputs=[S("value")])
    right_tool = ServerTool(id=f"{p}.right_tool", name="right_source", outputs=[S("value")])
    left = ToolNode(id=f"{p}.left", name="left", tool=left_tool)
    right = ToolNode(id=f"{p}.right", name="right", tool=right_tool)
    join = LlmNode(id=f"{p}.join", name="join", llm_config=llm(p),
                   prompt_template="Report the value: {{value}}", outputs=[S("result")])
    end = EndNode(id=f"{p}.end", name="end", outputs=[S("result")])
    fallback = EndNode(id=f"{p}.fallback_end", name="fallback_end")
    return Flow(
        id=f"{p}.flow", name="converging branches",
        nodes=[start, branch, left, right, join, end, fallback],
        control_flow_connections=[
            cf(p, start, branch), cf(p, branch, left, "left"), cf(p, branch, right, "right"),
            cf(p, branch, fallback, "default"), cf(p, left, join), cf(p, right, join), cf(p, join, end),
        ],
        data_flow_connections=[
            df(p, start, "choice", branch, "choice"),
            df(p, left, "value", join, "value"),
            df(p, right, "value", join, "value"),
            df(p, join, "result", end, "result"),
        ],
    )


def self_loop() -> Flow:
    """``counter`` reads its own previous output on every pass after the first."""
    p = "self_loop"
    start = StartNode(id=f"{p}.start", name="start", inputs=[I("count")])
    tool = ServerTool(id=f"{p}.increment", name="increment", inputs=[I("count")], outputs=[I("count")])
    counter = ToolNode(id=f"{p}.counter", name="counter", tool=tool)
    check = BranchingNode(id=f"{p}.check", name="check", branch_input="count", mapping={"4": "exit"},
                          inputs=[I("count")])
    end = EndNode(id=f"{p}.end", name="end", outputs=[I("count")])
    return Flow(
        id=f"{p}.flow", name="self loop",
        nodes=[start, counter, check, end],
        control_flow_connections=[
            cf(p, start, counter), cf(p, counter, check), cf(p, check, end, "exit"), cf(p, check, counter, "default"),
        ],
        data_flow_connections=[
            df(p, start, "count", counter, "count"),
            df(p, counter, "count", counter, "count"),
            df(p, counter, "count", check, "count"),
            df(p, counter, "count", end, "count"),
        ],
    )


def doubling_subflow(p: str) -> Flow:
    tool = ServerTool(id=f"{p}.double_tool", name="double", inputs=[I("x")], outputs=[I("y")])
    start = StartNode(id=f"{p}.sub.start", name="sub_start", inputs=[I("x")])
    node = ToolNode(id=f"{p}.sub.double", name="double", tool=tool)
    end = EndNode(id=f"{p}.sub.end", name="sub_end", outputs=[I("y")])
    return Flow(
        id=f"{p}.subflow", name="double one element", nodes=[start, node, end],
        control_flow_connections=[cf(p + ".sub", start, node), cf(p + ".sub", node, end)],
        data_flow_connections=[df(p + ".sub", start, "x", node, "x"), df(p + ".sub", node, "y", end, "y")],
    )


def map_double() -> Flow:
    p = "map_double"
    arr = lambda t: Property.of(t, "array", items={"type": "integer"})
    start = StartNode(id=f"{p}.start", name="start", inputs=[arr("x")])
    mapper = MapNode(id=f"{p}.map", name="map", subflow=doubling_subflow(p), iterated_input="x")
    end = EndNode(id=f"{p}.end", name="end", outputs=[arr("y")])
    return Flow(
        id=f"{p}.flow", name="map doubling", nodes=[start, mapper, end],
        control_flow_connections=[cf(p, start, mapper), cf(p, mapper, end)],
        data_flow_connections=[df(p, start, "x", mapper, "x"), df(p, mapper, "y", end, "y")],
    )


def branching() -> Flow:
    """yes/no routing; anything else falls through to an HTTP check."""
    p = "branching"
    start = StartNode(id=f"{p}.start", name="start", inputs=[S("answer")])
    decide = BranchingNode(id=f"{p}.decide", name="decide", branch_input="answer",
                           mapping={"yes": "accept", "no": "reject"})
    accept = OutputMessageNode(id=f"{p}.accept", name="accept", message_template="accepted: {{answer}}")
    reject = OutputMessageNode(id=f"{p}.reject", name="reject", message_template="rejected: {{answer}}")
    api = ApiNode(id=f"{p}.api", name="check_remotely", url_template="http://localhost:9/check?answer={{answer}}",
                  http_method="GET", headers={"X-Caller": "branching-case"})
    end_ok = EndNode(id=f"{p}.end_accept", name="end_accept", outputs=[S("answer")])
    end_no = EndNode(id=f"{p}.end_reject", name="end_reject", outputs=[S("answer")])
    end_api = EndNode(id=f"{p}.end_api", name="end_api", outputs=[I("status")])
    return Flow(
        id=f"{p}.flow", name="accept or reject",
        nodes=[start, decide, accept, reject, api, end_ok, end_no, end_api],
        control_flow_connections=[
            cf(p, start, decide), cf(p, decide, accept, "accept"), cf(p, decide, reject, "reject"),
            cf(p, decide, api, "default"), cf(p, accept, end_ok), cf(p, reject, end_no), cf(p, api, end_api),
        ],
        data_flow_connections=[
            df(p, start, "answer", decide, "answer"),
            df(p, start, "answer", accept, "answer"),
            df(p, start, "answer", reject, "answer"),
            df(p, start, "answer", api, "answer"),
            df(p, start, "answer", end_ok, "answer"),
            df(p, start, "answer", end_no, "answer"),
            df(p, api, "status", end_api, "status"),
        ],
    )


def input_message() -> Flow:
    p = "input_message"
    start = StartNode(id=f"{p}.start", name="start", inputs=[S("topic")])
    ask = InputMessageNode(id=f"{p}.ask", name="ask", message_template="What is the capital of {{topic}}?")
    reply = OutputMessageNode(id=f"{p}.reply", name="reply", message_template="answer: {{user_input}}")
    end = EndNode(id=f"{p}.end", name="end", outputs=[S("user_input")])
    return Flow(
        id=f"{p}.flow", name="ask the user", nodes=[start, ask, reply, end],
        control_flow_connections=[cf(p, start, ask), cf(p, ask, reply), cf(p, reply, end)],
        data_flow_connections=[
            df(p, start, "topic", ask, "topic"),
            df(p, ask, "user_input", reply, "user_input"),
            df(p, ask, "user_input", end, "user_input"),
        ],
    )


def lookup_agent(p: str, max_turns: int = 10) -> Agent:
    lookup = ServerTool(id=f"{p}.lookup", name="lookup", description="Look a term up",
                        inputs=[S("q")], outputs=[S("result")])
    remote = RemoteTool(id=f"{p}.remote_search", name="remote_search", description="Search over HTTP",
                        url="http://localhost:9/search", http_method="POST",
                        headers={"Accept": "application/json"}, inputs=[S("query")], outputs=[S("hits")])
    mcp = MCPTool(id=f"{p}.mcp_calc", name="calculator", description="MCP-hosted calculator",
                  server_ref="mcp://localhost/calc", inputs=[S("expression")], outputs=[S("value")])
    return Agent(id=f"{p}.agent", name="researcher", llm_config=llm(p),
                 instructions="Answer the question: {{question}}", tools=[lookup, remote, mcp],
                 outputs=[S("answer")], max_turns=max_turns)


def weather_agent(p: str) -> Agent:
    ask = ClientTool(id=f"{p}.ask_weather", name="get_weather", description="Client-side weather lookup",
                     inputs=[S("city")], outputs=[S("forecast")])
    return Agent(id=f"{p}.agent", name="weather assistant", llm_config=llm(p),
                 instructions="Help with the weather in {{city}}.", tools=[ask], outputs=[S("summary")])


def chat_flow() -> Flow:
    """An AgentNode that first asks the user a question in plain text."""
    p = "agent_text"
    agent = Agent(id=f"{p}.agent", name="concierge", llm_config=llm(p),
                  instructions="Find out where the user wants to travel.", outputs=[S("destination")])
    start = StartNode(id=f"{p}.start", name="start")
    node = AgentNode(id=f"{p}.agent_node", name="concierge_step", agent=agent)
    end = EndNode(id=f"{p}.end", name="end", outputs=[S("destination")])
    return Flow(
        id=f"{p}.flow", name="travel chat", nodes=[start, node, end],
        control_flow_connections=[cf(p, start, node), cf(p, node, end)],
        data_flow_connections=[df(p, node, "destination", end, "destination")],
    )


def nested_flow() -> Flow:
    """Name-based outer flow wrapping an explicit inner flow in a FlowNode."""
    p = "nested"
    inner = prompt_once_flow(p + ".inner")
    start = StartNode(id=f"{p}.start", name="start", inputs=[S("prompt")])
    wrap = FlowNode(id=f"{p}.wrap", name="wrap", subflow=inner)
    shout = LlmNode(id=f"{p}.shout", name="shout", llm_config=llm(p),
                    prompt_template="Shout this: {{llm_output}}", outputs=[S("final")])
    end = EndNode(id=f"{p}.end", name="end", outputs=[S("final"), S("llm_output")])
    return Flow(
        id=f"{p}.flow", name="nested flows", nodes=[start, wrap, shout, end],
        control_flow_connections=[cf(p, start, wrap), cf(p, wrap, shout), cf(p, shout, end)],
        data_flow_connections=None,
    )


def prompt_once_flow(p: str) -> Flow:
    prompt, out = S("prompt"), S("llm_output")
    start = StartNode(id=f"{p}.start", name="start", inputs=[prompt])
    node = LlmNode(id=f"{p}.llm_node", name="llm", llm_config=llm(p), prompt_template="{{prompt}}", outputs=[out])
    end = EndNode(id=f"{p}.end", name="end", outputs=[out])
    return Flow(
        id=f"{p}.flow", name="prompt once", nodes=[start, node, end],
        control_flow_connections=[cf(p, start, node), cf(p, node, end)],
        data_flow_connections=[df(p, start, "prompt", node, "prompt"), df(p, node, "llm_output", end, "llm_output")],
    )


def rag_flow() -> Flow:
    """Search, answer, judge; on a negative verdict decompose and retry."""
    p = "rag"
    cfg = llm(p)
    search_tool = ServerTool(id=f"{p}.web_search", name="web_search", inputs=[S("query")], outputs=[S("results")])
    start = StartNode(id=f"{p}.start", name="start", inputs=[S("question")])
    search = ToolNode(id=f"{p}.search", name="search", tool=search_tool)
    answer = LlmNode(id=f"{p}.answer", name="answer", llm_config=cfg,
                     prompt_template="Using {{results}}, answer: {{question}}", outputs=[S("draft")])
    judge = LlmNode(id=f"{p}.judge", name="judge", llm_config=cfg,
                    prompt_template="Is this sufficient for {{question}}? {{draft}} Reply yes or no.",
                    outputs=[S("verdict")])
    route = BranchingNode(id=f"{p}.route", name="route", branch_input="verdict", mapping={"yes": "done"})
    decompose = LlmNode(id=f"{p}.decompose", name="decompose", llm_config=cfg,
                        prompt_template="Write a sharper search query for: {{question}}", outputs=[S("query")])
    end = EndNode(id=f"{p}.end", name="end", outputs=[S("draft")])
    return Flow(
        id=f"{p}.flow", name="agentic rag", nodes=[start, search, answer, judge, route, decompose, end],
        control_flow_connections=[
            cf(p, start, search), cf(p, search, answer), cf(p, answer, judge), cf(p, judge, route),
            cf(p, route, end, "done"), cf(p, route, decompose, "default"), cf(p, decompose, search),
        ],
        data_flow_connections=[
            DataFlowEdge(id=f"{p}.df.start.question->search.query", name="question_as_query",
                         source_node=start, source_output="question", destination_node=search,
                         destination_input="query"),
            df(p, decompose, "query", search, "query"),
            df(p, search, "results", answer, "results"),
            df(p, start, "question", answer, "question"),
            df(p, start, "question", judge, "question"),
            df(p, answer, "draft", judge, "draft"),
            df(p, judge, "verdict", route, "verdict"),
            df(p, start, "question", decompose, "question"),
            df(p, answer, "draft", end, "draft"),
        ],
    )


def nl2sql_flow() -> Flow:
    """Plan with an LLM, execute with a tool-using agent, then review."""
    p = "nl2sql"
    cfg = llm(p)
    run_sql = ServerTool(id=f"{p}.run_sql", name="run_sql", inputs=[S("sql")], outputs=[S("rows")])
    agent = Agent(id=f"{p}.agent", name="sql agent", llm_config=cfg, tools=[run_sql],
                  instructions="Follow this plan: {{plan}}", outputs=[S("sql_answer")])
    start = StartNode(id=f"{p}.start", name="start", inputs=[S("question")])
    plan = LlmNode(id=f"{p}.plan", name="plan", llm_config=cfg,
                   prompt_template="Plan the SQL for: {{question}}", outputs=[S("plan")])
    execute = AgentNode(id=f"{p}.execute", name="execute", agent=agent)
    review = LlmNode(id=f"{p}.review", name="review", llm_config=cfg,
                     prompt_template="Check and format: {{sql_answer}}", outputs=[S("answer")])
    end = EndNode(id=f"{p}.end", name="end", outputs=[S("answer")])
    return Flow(
        id=f"{p}.flow", name="plan generate reflect", nodes=[start, plan, execute, review, end],
        control_flow_connections=[cf(p, start, plan), cf(p, plan, execute), cf(p, execute, review),
                                  cf(p, review, end)],
        data_flow_connections=[
            df(p, start, "question", plan, "question"), df(p, plan, "plan", execute, "plan"),
            df(p, execute, "sql_answer", review, "sql_answer"), df(p, review, "answer", end, "answer"),
        ],
    )


def mcp_flow() -> Flow:
    p = "mcp"
    tool = MCPTool(id=f"{p}.calc", name="calculator", server_ref="mcp://localhost/calc",
                   inputs=[S("expression")], outputs=[S("value")])
    start = StartNode(id=f"{p}.start", name="start", inputs=[S("expression")])
    node = ToolNode(id=f"{p}.call", name="call", tool=tool)
    end = EndNode(id=f"{p}.end", name="end", outputs=[S("value")])
    return Flow(
        id=f"{p}.flow", name="mcp call", nodes=[start, node, end],
        control_flow_connections=[cf(p, start, node), cf(p, node, end)],
        data_flow_connections=[df(p, start, "expression", node, "expression"), df(p, node, "value", end, "value")],
    )


def qa_flow() -> Flow:
    p = "qa"
    start = StartNode(id=f"{p}.start", name="start", inputs=[S("question")])
    node = LlmNode(id=f"{p}.answer", name="answer", llm_config=llm(p),
                   prompt_template="Answer briefly: {{question}}", outputs=[S("answer")])
    end = EndNode(id=f"{p}.end", name="end", outputs=[S("answer")])
    return Flow(
        id=f"{p}.flow", name="single LLM call", nodes=[start, node, end],
        control_flow_connections=[cf(p, start, node), cf(p, node, end)],
        data_flow_connections=[df(p, start, "question", node, "question"), df(p, node, "answer", end, "answer")],
    )


# -- scenarios -----------------------------------------------------------------------

def text(t: str, **match) -> dict:
    rule = {"response": {"text": t}}
    if match:
        rule["match"] = match
    return rule


def call(tool: str, args: dict, **match) -> dict:
    rule = {"response": {"tool": tool, "args": args}}
    if match:
        rule["match"] = match
    return rule


def final(values: dict, **match) -> dict:
    rule = {"response": {"final": values}}
    if match:
        rule["match"] = match
    return rule


def conformance_cases() -> dict[str, tuple]:
    conv = converge()
    converge_tools = {"left_source": {"returns": {"value": "from-left"}},
                      "right_source": {"returns": {"value": "from-right"}}}
    converge_script = {"rules": [text("LEFT WON", contains="from-left"), text("RIGHT WON", contains="from-right")]}
    counter_table = {"table": [{"args": {"count": i}, "returns": {"count": i + 1}} for i in range(6)]}
    return {
        "simple_prompting": (simple_prompting_flow(), {"inputs": {"prompt": "hi"}, "script": {"rules": [text("hello")]}}),
        "converge_left": (conv, {"inputs": {"choice": "left"}, "script": converge_script, "tools": converge_tools}),
        "converge_right": (conv, {"inputs": {"choice": "right"}, "script": converge_script, "tools": converge_tools}),
        "self_loop": (self_loop(), {"inputs": {"count": 0}, "tools": {"increment": counter_table}}),
        "map_double": (map_double(), {"inputs": {"x": [1, 2, 3]}, "tools": {"double": {"table": [
            {"args": {"x": i}, "returns": {"y": 2 * i}} for i in range(1, 4)]}}}),
        "branching_reject": (branching(), {"inputs": {"answer": "no"}}),
        "branching_accept": (branching(), {"inputs": {"answer": "yes"}}),
        "input_message": (input_message(), {"inputs": {"topic": "France"}, "resume": [{"user": "Paris"}]}),
        "input_message_suspended": (input_message(), {"inputs": {"topic": "France"}}),
        "agent_server_tool": (lookup_agent("agent_server"), {
            "inputs": {"question": "what is x?"},
            "script": {"rules": [call("lookup", {"q": "x"}, index=0), final({"answer": "y"}, index=1)]},
            "tools": {"lookup": {"table": [{"args": {"q": "x"}, "returns": {"result": "x means y"}}]}},
        }),
        "agent_client_tool": (weather_agent("agent_client"), {
            "inputs": {"city": "Zurich"},
            "script": {"rules": [call("get_weather", {"city": "Zurich"}, index=0),
                                 final({"summary": "Sunny in Zurich"}, contains="sunny")]},
            "resume": [{"tool_result": {"call_id": "call_1", "outputs": {"forecast": "sunny"}}}],
        }),
        "agent_text_suspend": (chat_flow(), {
            "script": {"rules": [text("Where would you like to go?", index=0),
                                 final({"destination": "Lisbon"}, contains="Lisbon")]},
            "resume": [{"user": "Lisbon, please"}],
        }),
        "agent_max_turns": (lookup_agent("agent_turns", max_turns=3), {
            "inputs": {"question": "loop forever"},
            "script": {"rules": [call("lookup", {"q": "again"}) | {"repeat": True}]},
            "tools": {"lookup": {"returns": {"result": "still nothing"}}},
        }),
        "nested_flow": (nested_flow(), {"inputs": {"prompt": "hi"}, "script": {"rules": [
            text("hello", contains="hi"), text("HELLO!", contains="Shout this: hello")]}}),
        "rag_flow": (rag_flow(), {
            "inputs": {"question": "Who wrote Dune?"},
            "script": {"rules": [
                text("Frank Herbert, probably", contains="answer: Who wrote Dune?"),
                text("no", contains="Is this sufficient"),
                text("Dune novel author", contains="sharper search query"),
                text("Frank Herbert", contains="answer: Who wrote Dune?"),
                text("yes", contains="Is this sufficient"),
            ]},
            "tools": {"web_search": {"table": [
                {"args": {"query": "Who wrote Dune?"}, "returns": {"results": "Dune (1965)"}},
                {"args": {"query": "Dune novel author"}, "returns": {"results": "Dune by Frank Herbert"}},
            ]}},
        }),
        "nl2sql_flow": (nl2sql_flow(), {
            "inputs": {"question": "How many users?"},
            "script": {"rules": [
                text("count rows in users", contains="Plan the SQL"),
                call("run_sql", {"sql": "SELECT COUNT(*) FROM users"}, contains="Follow this plan", index=1),
                final({"sql_answer": "42"}, contains="[42]"),
                text("There are 42 users.", contains="Check and format: 42"),
            ]},
            "tools": {"run_sql": {"returns": {"rows": "[42]"}}},
        }),
        "mcp_unsupported": (mcp_flow(), {"inputs": {"expression": "1+1"}}),
    }


# -- defects ------------------------------------------------------------------------

def _replace(flow: Flow, **changes) -> Flow:
    from dataclasses import replace
    return replace(flow, **changes)


def defect_cases() -> list[dict]:
    """Each entry: file name, document (or raw text), planted code and component id."""
    out = []

    def add(name, doc, code, cid):
        out.append({"file": f"{name}.json", "doc": doc, "code": code, "component_id": cid})

    base = simple_prompting_flow()
    start, node, end = base.nodes
    edges = list(base.control_flow_connections)
    dup = ControlFlowEdge(id="llm_to_end_again", name="llm_to_end_again", from_node=node, to_node=end)
    add("duplicate_branch", _replace(base, control_flow_connections=edges + [dup]), "CF_DUPLICATE_BRANCH", "llm_node")

    raw = to_dict(SpecDocument(base))
    raw["nodes"][1]["llm_config"] = "$component_ref:no_such_config"
    add("dangling_ref", raw, "DANGLING_REFERENCE", "llm_node")

    int_out = Property.of("llm_output", "integer")
    end_int = EndNode(id="end_node", name="end", outputs=[int_out])
    add("schema_mismatch", _rebuild_a(end=end_int), "DF_TYPE_MISMATCH", "llm_output_edge")

    add("missing_start", _replace(base, nodes=[node, end], start_node=node,
                                  control_flow_connections=edges[1:], data_flow_connections=[base.data_flow_connections[1]],
                                  inputs=[S("prompt")]),
        "FLOW_MISSING_START", "simple_prompting_flow")

    agent = lookup_agent("no_llm")
    add("agent_without_llm", _replace(agent, llm_config=None), "AGENT_MISSING_LLM", "no_llm.agent")

    bad_llm = LlmNode(id="llm_node", name="simple llm node", llm_config=node.llm_config,
                      prompt_template="{{prompt}}", inputs=[S("prompt"), S("style", default="plain")],
                      outputs=[S("llm_output")])
    add("io_mismatch", _rebuild_a(llm_node=bad_llm), "IO_DECLARATION_MISMATCH", "llm_node")

    nested = nested_flow()
    wrap = nested.nodes[1]
    bad_wrap = FlowNode(id=wrap.id, name=wrap.name, subflow=wrap.subflow, inputs=wrap.inputs,
                        outputs=[Property.of("llm_output", "integer")])
    add("flow_node_io_mismatch", _swap_node(nested, bad_wrap), "IO_DECLARATION_MISMATCH", "nested.wrap")

    br = branching()
    extra = cf("branching", br.nodes[1], br.nodes[3], "maybe")
    add("unknown_branch", _replace(br, control_flow_connections=list(br.control_flow_connections) + [extra]),
        "CF_UNKNOWN_BRANCH", extra.id)

    api_nodes = {"branching.api", "branching.end_api"}
    no_default = [e for e in br.control_flow_connections
                  if e.branch != "default" and e.from_node.id not in api_nodes]
    add("dangling_branch", _replace(
        br, nodes=[n for n in br.nodes if n.id not in api_nodes], control_flow_connections=no_default,
        data_flow_connections=[e for e in br.data_flow_connections if e.destination_node.id not in api_nodes],
        outputs=None), "CF_DANGLING_BRANCH", "branching.decide")

    twin = ServerTool(id="dup_tool.lookup2", name="lookup", inputs=[S("q")], outputs=[S("result")])
    agent = lookup_agent("dup_tool")
    add("duplicate_tool", _replace(agent, tools=list(agent.tools) + [twin]), "AGENT_DUPLICATE_TOOL", "dup_tool.agent")

    bad_edge = DataFlowEdge(id="llm_output_edge", name="llm_output_edge", source_node=node,
                            source_output="llm_text", destination_node=end, destination_input="llm_output")
    add("unknown_property", _replace(base, data_flow_connections=[base.data_flow_connections[0], bad_edge]),
        "DF_UNKNOWN_PROPERTY", "llm_output_edge")

    second = StartNode(id="second_start", name="second start")
    add("multiple_start", _replace(base, nodes=[start, node, end, second], start_node=start,
                                   control_flow_connections=edges + [cf("second", second, node)]),
        "FLOW_MULTIPLE_START", "simple_prompting_flow")

    into_start = DataFlowEdge(id="feedback_edge", name="feedback_edge", source_node=node, source_output="llm_output",
                              destination_node=start, destination_input="prompt")
    add("data_into_start", _replace(base, data_flow_connections=list(base.data_flow_connections) + [into_start]),
        "DF_INTO_START", "feedback_edge")

    raw = to_dict(SpecDocument(base))
    raw["nodes"][1]["component_type"] = "QuantumNode"
    add("unknown_component_type", raw, "UNKNOWN_COMPONENT_TYPE", "llm_node")

    raw = to_dict(SpecDocument(base))
    del raw["agentspec_version"]
    add("missing_version", raw, "MISSING_VERSION", "<document>")
    return out


def _rebuild_a(end: EndNode | None = None, llm_node: LlmNode | None = None) -> Flow:
    base = simple_prompting_flow()
    start, node, old_end = base.nodes
    node = llm_node or node
    end = end or old_end
    return Flow(
        id=base.id, name=base.name, start_node=start, nodes=[start, node, end],
        control_flow_connections=[
            ControlFlowEdge(id="start_to_llm", name="start_to_llm", from_node=start, to_node=node),
            ControlFlowEdge(id="llm_to_end", name="llm_to_end", from_node=node, to_node=end),
        ],
        data_flow_connections=[
            DataFlowEdge(id="prompt_edge", name="prompt_edge", source_node=start, source_output="prompt",
                         destination_node=node, destination_input="prompt"),
            DataFlowEdge(id="llm_output_edge", name="llm_output_edge", source_node=node,
                         source_output="llm_output", destination_node=end, destination_input="llm_output"),
        ],
    )


def _swap_node(flow: Flow, new) -> Flow:
    """Rebuild a name-based flow with one node replaced (edges follow by id)."""
    nodes = [new if n.id == new.id else n for n in flow.nodes]
    by_id = {n.id: n for n in nodes}
    edges = [ControlFlowEdge(id=e.id, name=e.name, from_node=by_id[e.from_node.id], from_branch=e.from_branch,
                             to_node=by_id[e.to_node.id]) for e in flow.control_flow_connections]
    return Flow(id=flow.id, name=flow.name, nodes=nodes, control_flow_connections=edges,
                data_flow_connections=flow.data_flow_connections)


# -- benchmark --------------------------------------------------------------------------

QA = [
    ("What is the capital of France?", "Paris", "Paris"),
    ("Who wrote Dune?", "Frank Herbert", "Frank Herbert"),
    ("What is the largest planet?", "Jupiter", "Jupiter"),
    ("How many legs does a spider have?", "8", "eight"),
    ("What is the chemical symbol for gold?", "Au", "Au"),
    ("Who painted the Mona Lisa?", "Leonardo da Vinci", "Leonardo da Vinci"),
    ("What is the boiling point of water in Celsius?", "100", "100 degrees"),
    ("Which ocean is the largest?", "Pacific Ocean", "the Pacific Ocean"),
    ("What is the capital of Japan?", "Tokyo", "Tokyo"),
    ("Who developed general relativity?", "Albert Einstein", "Einstein"),
    ("What is the smallest prime number?", "2", "2"),
    ("What language is spoken in Brazil?", "Portuguese", "Portuguese"),
    ("What is the hardest natural substance?", "diamond", "Diamond"),
    ("Which planet is known as the red planet?", "Mars", "Mars"),
    ("Who was the first person on the moon?", "Neil Armstrong", "Buzz Aldrin"),
    ("What is the capital of Australia?", "Canberra", "Sydney"),
    ("How many continents are there?", "7", "7"),
    ("What gas do plants absorb?", "carbon dioxide", "carbon dioxide gas"),
    ("What is the longest river in Africa?", "Nile", "The Nile river"),
    ("What is the freezing point of water in Fahrenheit?", "32", "32"),
]


def write_bench(root: Path) -> None:
    root.mkdir(parents=True, exist_ok=True)
    save_file(qa_flow(), root / "qa_flow.json")
    with open(root / "toy_qa.jsonl", "w", encoding="utf-8") as fh:
        for i, (q, gold, _) in enumerate(QA, start=1):
            fh.write(json.dumps({"id": f"q{i:02d}", "inputs": {"question": q}, "expected": gold},
                                sort_keys=True) + "\n")
    rules = [text(pred, contains=q) | {"repeat": True} for q, _, pred in QA]
    (root / "toy_qa.mock.json").write_text(json.dumps({"rules": rules}, indent=2, sort_keys=True) + "\n",
                                           encoding="utf-8")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--freeze", action="store_true", help="re-record expected outcomes and golden traces")
    args = parser.parse_args()

    conf = DATA / "conformance"
    for name, (doc, scenario) in conformance_cases().items():
        outcome = write_case(conf / name, SpecDocument(doc), scenario, freeze=args.freeze)
        print(f"{name}: {json.dumps(outcome.result, sort_keys=True)}")

    defects = DATA / "defects"
    shutil.rmtree(defects, ignore_errors=True)
    defects.mkdir(parents=True)
    manifest = []
    for case in defect_cases():
        doc = case.pop("doc")
        if isinstance(doc, dict):
            text_ = json.dumps(doc, indent=2, sort_keys=True) + "\n"
        else:
            text_ = serialize(SpecDocument(doc))
        (defects / case["file"]).write_text(text_, encoding="utf-8")
        manifest.append(case)
    (defects / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    write_bench(DATA / "bench")
    examples = DATA / "examples"
    examples.mkdir(parents=True, exist_ok=True)
    save_file(simple_prompting_flow(), examples / "simple_prompting_flow.json")
    (examples / "hello.mock.json").write_text(json.dumps({"rules": [text("hello")]}, indent=2) + "\n",
                                              encoding="utf-8")
    shutil.copy(defects / "duplicate_branch.json", examples / "duplicated_edge.json")


if __name__ == "__main__":
    main()

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from agentspec.backends import (
    Backends,
    FinalOutputs,
    HttpLlm,
    LlmResponse,
    MockLlm,
    MockRule,
    MockScript,
    Text,
    ToolCall,
    ToolRegistry,
    check_args,
    check_outputs,
    completions_url,
    invoke_remote_tool,
    invoke_server_tool,
    parse_structured_response,
)
from agentspec.engine import Finished, start_run
from agentspec.errors import (
    ArgsSchemaMismatch,
    BackendError,
    HttpError,
    MalformedModelOutput,
    OutputSchemaMismatch,
    ScriptExhausted,
    ToolNotFound,
    ToolRaised,
)
from agentspec.model import (
    ApiNode,
    ControlFlowEdge,
    DataFlowEdge,
    EndNode,
    Flow,
    LlmConfig,
    Message,
    Property,
    RemoteTool,
    ServerTool,
    StartNode,
    VllmConfig,
)
from agentspec.serialization import SpecDocument


@pytest.mark.parametrize("text,expected", [
    ('{"tool": "add", "args": {"a": 1}}', ToolCall("", "add", {"a": 1})),
    ('sure\n```json\n{"final": {"x": 1}}\n```', FinalOutputs({"x": 1})),
    ('{"tool": "add"}', ToolCall("", "add", {})),
    ("just words", Text("just words")),
    ('{"tool": "add", "extra": 1}', Text('{"tool": "add", "extra": 1}')),
    ('{"final": 3}', Text('{"final": 3}')),
])
def test_parse_structured_response(text, expected):
    assert parse_structured_response(text) == expected


def _say(llm, prompt):
    return llm.generate(None, [Message("user", prompt)])


def test_mock_rules_first_unconsumed_match():
    script = MockScript.from_dict({"rules": [
        {"match": {"contains": "weather"}, "response": {"text": "sunny"}},
        {"match": {"regex": r"^\d+$"}, "response": {"text": "number"}, "repeat": True},
        {"match": {"index": 3}, "response": {"tool": "t", "args": {}}},
        {"response": {"final": {"a": 1}}},
    ]})
    llm = MockLlm(script)
    assert _say(llm, "weather today") == Text("sunny")
    assert _say(llm, "12") == Text("number")
    assert _say(llm, "34") == Text("number")
    assert _say(llm, "anything") == ToolCall("", "t", {})
    assert _say(llm, "weather again") == FinalOutputs({"a": 1})
    with pytest.raises(ScriptExhausted):
        _say(llm, "weather")
    assert llm.fresh().calls == 0
    assert MockScript.from_dict(script.to_dict()) == script


def test_mock_rule_roundtrip():
    rule = MockRule(Text("x"), contains="a", index=2, repeat=True)
    assert MockRule.from_dict(rule.to_dict()) == rule
    with pytest.raises(ValueError):
        LlmResponse.from_dict({"bogus": 1})


def test_check_args_and_outputs():
    tool = ServerTool(name="t", inputs=[Property.of("a", "integer"), Property.of("b", "string", default="z")],
                      outputs=[Property.of("r", "integer")])
    assert check_args(tool, {"a": 1}) == {"a": 1, "b": "z"}
    for bad in ({}, {"a": "1"}, {"a": 1, "c": 2}):
        with pytest.raises(ArgsSchemaMismatch):
            check_args(tool, bad)
    assert check_outputs(tool.outputs, 5, "t") == {"r": 5}
    with pytest.raises(OutputSchemaMismatch):
        check_outputs(tool.outputs, {"r": "5"}, "t")


def test_server_tool_invocation():
    tool = ServerTool(name="div", inputs=[Property.of("a", "integer"), Property.of("b", "integer")],
                      outputs=[Property.of("q", "number")])
    registry = ToolRegistry()
    with pytest.raises(ToolNotFound):
        invoke_server_tool(registry, tool, {"a": 1, "b": 1})
    registry.register_tool(tool, lambda a, b: {"q": a / b})
    assert invoke_server_tool(registry, tool, {"a": 1, "b": 2}) == {"q": 0.5}
    with pytest.raises(ToolRaised) as info:
        invoke_server_tool(registry, tool, {"a": 1, "b": 0})
    assert isinstance(info.value.cause, ZeroDivisionError)
    registry.register("div", lambda a, b: {}, inputs=[Property.of("a")], outputs=tool.outputs)
    with pytest.raises(ArgsSchemaMismatch):
        invoke_server_tool(registry, tool, {"a": 1, "b": 2})


def test_completions_url():
    assert completions_url("localhost:8000") == "http://localhost:8000/v1/chat/completions"
    assert completions_url("http://h/v1/") == "http://h/v1/chat/completions"
    assert completions_url("http://h/v1/chat/completions") == "http://h/v1/chat/completions"


class _Stub(BaseHTTPRequestHandler):
    routes: dict = {}
    seen: list = []

    def _reply(self):
        length = int(self.headers.get("Content-Length") or 0)
        body = self.rfile.read(length).decode() if length else ""
        self.seen.append((self.command, self.path, body))
        status, payload = self.routes.get(self.path.split("?")[0], (404, {}))
        data = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    do_GET = do_POST = _reply

    def log_message(self, *args):
        pass


@pytest.fixture
def stub():
    _Stub.routes, _Stub.seen = {}, []
    server = ThreadingHTTPServer(("127.0.0.1", 0), _Stub)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}", _Stub
    server.shutdown()
    server.server_close()


def _completion(message):
    return {"choices": [{"message": message}]}


def test_http_llm(stub):
    base, handler = stub
    config = VllmConfig(name="m", url=base, model_id="m1", temperature=0.0)
    llm = HttpLlm(api_key="")
    handler.routes["/v1/chat/completions"] = (200, _completion({"content": "hi"}))
    assert llm.generate(config, [Message("user", "hello")]) == Text("hi")
    sent = json.loads(handler.seen[-1][2])
    assert sent["model"] == "m1" and sent["messages"] == [{"role": "user", "content": "hello"}]
    assert sent["temperature"] == 0.0
    call = {"tool_calls": [{"id": "c1", "function": {"name": "add", "arguments": '{"a": 1}'}}]}
    handler.routes["/v1/chat/completions"] = (200, _completion(call))
    assert llm.generate(config, [Message("user", "x")]) == ToolCall("c1", "add", {"a": 1})
    handler.routes["/v1/chat/completions"] = (500, {"error": "boom"})
    with pytest.raises(HttpError) as info:
        llm.generate(config, [Message("user", "x")])
    assert info.value.status == 500
    handler.routes["/v1/chat/completions"] = (200, {"nothing": True})
    with pytest.raises(MalformedModelOutput):
        llm.generate(config, [Message("user", "x")])
    with pytest.raises(BackendError):
        llm.generate(LlmConfig(name="plain"), [Message("user", "x")])


def test_remote_tool(stub):
    base, handler = stub
    handler.routes["/weather"] = (200, {"forecast": "sunny"})
    get = RemoteTool(name="w", url=base + "/weather", inputs=[Property.of("city")],
                     outputs=[Property.of("forecast")])
    assert invoke_remote_tool(get, {"city": "Paris"}) == {"forecast": "sunny"}
    assert handler.seen[-1][:2] == ("GET", "/weather?city=Paris")
    post = RemoteTool(name="w", url=base + "/weather", http_method="POST", inputs=[Property.of("city")],
                      outputs=[Property.of("forecast")])
    invoke_remote_tool(post, {"city": "Oslo"})
    assert handler.seen[-1] == ("POST", "/weather", '{"city": "Oslo"}')
    missing = RemoteTool(name="w", url=base + "/missing", outputs=[Property.of("forecast")])
    with pytest.raises(HttpError):
        invoke_remote_tool(missing, {})


def test_unreachable_endpoint():
    with pytest.raises(HttpError) as info:
        invoke_remote_tool(RemoteTool(name="w", url="http://127.0.0.1:9/x"), {}, timeout=1)
    assert info.value.status is None


def test_backends_fresh_resets_script():
    backends = Backends(MockLlm(MockScript.of("a")))
    _say(backends.llm, "x")
    assert backends.fresh().llm.calls == 0


def test_api_node_in_flow(stub):
    base, handler = stub
    handler.routes["/items"] = (201, {"ok": True})
    start = StartNode(id="s", name="s", inputs=[Property.of("item")])
    api = ApiNode(id="api", name="api", url_template=base + "/items", http_method="POST",
                  body_template='{"name": "{{item}}"}')
    end = EndNode(id="e", name="e", outputs=[Property.of("status", "integer"), Property.of("body")])
    flow = Flow(id="f", name="f", nodes=[start, api, end],
                control_flow_connections=[ControlFlowEdge(id="c1", name="c1", from_node=start, to_node=api),
                                          ControlFlowEdge(id="c2", name="c2", from_node=api, to_node=end)],
                data_flow_connections=[
                    DataFlowEdge(id=f"d{n}", name=n, source_node=src, source_output=n,
                                 destination_node=dst, destination_input=n)
                    for src, dst, n in ((start, api, "item"), (api, end, "status"), (api, end, "body"))])
    _, status = start_run(SpecDocument(flow), inputs={"item": "pen"}, backends=Backends(MockLlm(MockScript(()))))
    assert status == Finished({"status": 201, "body": '{"ok": true}'})
    assert handler.seen[-1] == ("POST", "/items", '{"name": "pen"}')

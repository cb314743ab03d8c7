"""LLM generation and tool invocation backends.

Two LLM backends are provided: ``MockLlm`` replays a ``MockScript``
deterministically, ``HttpLlm`` talks to an OpenAI-compatible chat-completions
endpoint. Server tools are host callables kept in a ``ToolRegistry``; remote
tools are plain JSON-over-HTTP calls.
"""

from __future__ import annotations

import copy
import json
import os
import re
import urllib.error
import urllib.parse
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Optional, Protocol, Sequence

from .errors import (
    ArgsSchemaMismatch,
    BackendError,
    HttpError,
    MalformedModelOutput,
    OutputSchemaMismatch,
    ScriptExhausted,
    ToolNotFound,
    ToolRaised,
    UnsupportedComponent,
)
from .model import (
    LlmConfig,
    MCPTool,
    Message,
    Property,
    RemoteTool,
    ServerTool,
    Tool,
    VllmConfig,
    io_signature,
    value_conforms,
)

API_KEY_ENV = "AGENTSPEC_API_KEY"
DEFAULT_TIMEOUT = 60.0


# -- responses ------------------------------------------------------------------

class LlmResponse:
    """Normalized model output: one of Text, ToolCall or FinalOutputs."""

    def to_dict(self) -> dict[str, Any]:
        raise NotImplementedError

    @staticmethod
    def from_dict(data: Mapping[str, Any]) -> "LlmResponse":
        if "text" in data:
            return Text(str(data["text"]))
        if "tool" in data:
            return ToolCall(str(data.get("call_id", "")), data["tool"], dict(data.get("args") or {}))
        if "final" in data:
            return FinalOutputs(dict(data["final"]))
        raise ValueError(f"unrecognized response {dict(data)!r}")


@dataclass(frozen=True)
class Text(LlmResponse):
    content: str

    def to_dict(self):
        return {"text": self.content}


@dataclass(frozen=True)
class ToolCall(LlmResponse):
    call_id: str
    tool_name: str
    args: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.tool_name:
            raise ValueError("tool call without a tool name")

    def to_dict(self):
        return {"tool": self.tool_name, "args": self.args}


@dataclass(frozen=True)
class FinalOutputs(LlmResponse):
    values: dict

    def to_dict(self):
        return {"final": self.values}


_FENCE = re.compile(r"```(?:json)?[ \t]*\n(.*?)\n?```", re.DOTALL)


def parse_structured_response(text: str) -> LlmResponse:
    """Read the fenced-JSON tool protocol out of free model text.

    ``{"tool": name, "args": {...}}`` becomes a ToolCall and ``{"final": {...}}``
    becomes FinalOutputs. The object may be bare or inside a single fenced code
    block. Anything else is returned as Text unchanged.
    """
    blocks = _FENCE.findall(text)
    candidate = blocks[0] if len(blocks) == 1 else text
    try:
        obj = json.loads(candidate.strip())
    except (json.JSONDecodeError, ValueError):
        return Text(text)
    if isinstance(obj, dict):
        keys = set(obj)
        if keys in ({"tool", "args"}, {"tool"}) and isinstance(obj["tool"], str) and obj["tool"] \
                and isinstance(obj.get("args", {}), dict):
            return ToolCall("", obj["tool"], dict(obj.get("args", {})))
        if keys == {"final"} and isinstance(obj["final"], dict):
            return FinalOutputs(dict(obj["final"]))
    return Text(text)


# -- mock script -----------------------------------------------------------------

@dataclass(frozen=True)
class MockRule:
    response: LlmResponse
    contains: Optional[str] = None
    regex: Optional[str] = None
    index: Optional[int] = None
    repeat: bool = False

    def matches(self, prompt: str, call_index: int) -> bool:
        if self.index is not None and self.index != call_index:
            return False
        if self.contains is not None and self.contains not in prompt:
            return False
        if self.regex is not None and not re.search(self.regex, prompt):
            return False
        return True

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "MockRule":
        match = data.get("match") or {}
        return cls(
            response=LlmResponse.from_dict(data["response"]),
            contains=match.get("contains"),
            regex=match.get("regex"),
            index=match.get("index"),
            repeat=bool(data.get("repeat", False)),
        )

    def to_dict(self) -> dict[str, Any]:
        match = {k: v for k, v in (("contains", self.contains), ("regex", self.regex),
                                   ("index", self.index)) if v is not None}
        out: dict[str, Any] = {"response": self.response.to_dict()}
        if match:
            out["match"] = match
        if self.repeat:
            out["repeat"] = True
        return out


@dataclass(frozen=True)
class MockScript:
    """Ordered rules; the first unconsumed matching rule answers each call.

    A rule is consumed when used unless ``repeat`` is set. ``index`` matches the
    zero-based call number. A call that no rule answers raises ScriptExhausted.
    """

    rules: tuple[MockRule, ...] = ()

    @classmethod
    def from_dict(cls, data: Mapping[str, Any] | Sequence[Any]) -> "MockScript":
        rules = data if isinstance(data, list) else data.get("rules", [])
        return cls(tuple(MockRule.from_dict(r) for r in rules))

    @classmethod
    def from_file(cls, path: str | Path) -> "MockScript":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    @classmethod
    def of(cls, *responses: LlmResponse | str) -> "MockScript":
        """Script answering calls in order with the given responses."""
        return cls(tuple(MockRule(Text(r) if isinstance(r, str) else r) for r in responses))

    def to_dict(self) -> dict[str, Any]:
        return {"rules": [r.to_dict() for r in self.rules]}


def render_prompt(messages: Sequence[Message]) -> str:
    return "\n".join(m.content for m in messages)


class LlmBackend(Protocol):
    def generate(self, config: LlmConfig, messages: Sequence[Message],
                 tool_specs: Sequence[dict]) -> LlmResponse: ...


class MockLlm:
    """Scripted backend; its position in the script belongs to one session."""

    def __init__(self, script: MockScript):
        self.script = script
        self.calls = 0
        self._consumed: set[int] = set()
        self.prompts: list[str] = []

    def fresh(self) -> "MockLlm":
        return MockLlm(self.script)

    def generate(self, config, messages, tool_specs=()) -> LlmResponse:
        if not messages:
            raise ValueError("generate needs at least one message")
        prompt = render_prompt(messages)
        call = self.calls
        self.calls += 1
        self.prompts.append(prompt)
        for i, rule in enumerate(self.script.rules):
            if i in self._consumed or not rule.matches(prompt, call):
                continue
            if not rule.repeat:
                self._consumed.add(i)
            return copy.deepcopy(rule.response)
        raise ScriptExhausted(f"no scripted response for call #{call}")


# -- http --------------------------------------------------------------------------

@dataclass(frozen=True)
class HttpResponse:
    status: int
    body: str


def http_request(method: str, url: str, headers: Optional[Mapping[str, str]] = None,
                 body: Optional[bytes] = None, timeout: float = DEFAULT_TIMEOUT) -> HttpResponse:
    """Perform one request. Error statuses are returned, transport failures raise HttpError."""
    req = urllib.request.Request(url, data=body, method=method, headers=dict(headers or {}))
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            return HttpResponse(resp.status, resp.read().decode("utf-8", errors="replace"))
    except urllib.error.HTTPError as exc:
        return HttpResponse(exc.code, exc.read().decode("utf-8", errors="replace"))
    except (urllib.error.URLError, OSError, ValueError) as exc:
        raise HttpError(None, f"{method} {url} failed: {exc}") from exc


def _json_value(v: Any) -> str:
    return v if isinstance(v, str) else json.dumps(v, sort_keys=True)


def _with_query(url: str, args: Mapping[str, Any]) -> str:
    if not args:
        return url
    sep = "&" if urllib.parse.urlsplit(url).query else "?"
    return url + sep + urllib.parse.urlencode({k: _json_value(v) for k, v in sorted(args.items())})


# -- llm over http -------------------------------------------------------------------

_ROLE_MAP = {"system": "system", "agent": "assistant", "user": "user"}


def tool_spec(tool: Tool) -> dict[str, Any]:
    """Function-calling description of a tool in the chat-completions shape."""
    props = {p.title: {k: v for k, v in p.json_schema.items() if k != "title"} for p in tool.inputs}
    required = [p.title for p in tool.inputs if not p.has_default]
    return {
        "type": "function",
        "function": {
            "name": tool.name,
            "description": tool.description or "",
            "parameters": {"type": "object", "properties": props, "required": required},
        },
    }


def chat_messages(messages: Sequence[Message]) -> list[dict[str, str]]:
    out = []
    for m in messages:
        if m.role == "tool":
            out.append({"role": "user", "content": f"[result of tool {m.sender}] {m.content}"})
        else:
            out.append({"role": _ROLE_MAP[m.role], "content": m.content})
    return out


def completions_url(base: str) -> str:
    base = base.rstrip("/")
    if "://" not in base:
        base = "http://" + base
    if base.endswith("/chat/completions"):
        return base
    if base.endswith("/v1"):
        return base + "/chat/completions"
    return base + "/v1/chat/completions"


class HttpLlm:
    """OpenAI-compatible chat-completions backend for VllmConfig-style configs."""

    def __init__(self, api_key: Optional[str] = None, timeout: float = DEFAULT_TIMEOUT):
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self.timeout = timeout

    def fresh(self) -> "HttpLlm":
        return self

    def generate(self, config, messages, tool_specs=()) -> LlmResponse:
        if not isinstance(config, VllmConfig):
            raise BackendError(
                f"{config.component_type} has no endpoint; use a VllmConfig or a mock backend")
        payload: dict[str, Any] = {"model": config.model_id, "messages": chat_messages(messages)}
        if tool_specs:
            payload["tools"] = list(tool_specs)
        if config.temperature is not None:
            payload["temperature"] = config.temperature
        if config.max_tokens is not None:
            payload["max_tokens"] = config.max_tokens
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        resp = http_request("POST", completions_url(config.url), headers,
                            json.dumps(payload).encode("utf-8"), self.timeout)
        if resp.status >= 400:
            raise HttpError(resp.status, f"model endpoint returned {resp.status}: {resp.body[:200]}")
        return self.normalize(resp.body)

    @staticmethod
    def normalize(body: str) -> LlmResponse:
        try:
            message = json.loads(body)["choices"][0]["message"]
            calls = message.get("tool_calls") or []
            if calls:
                fn = calls[0]["function"]
                args = fn.get("arguments") or "{}"
                args = json.loads(args) if isinstance(args, str) else args
                if not isinstance(args, dict):
                    raise ValueError("tool arguments are not an object")
                return ToolCall(str(calls[0].get("id", "")), fn["name"], args)
            content = message.get("content")
            if not isinstance(content, str):
                raise ValueError("message has no text content")
            return Text(content)
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise MalformedModelOutput(f"unexpected completion payload: {exc}") from exc


# -- tools ----------------------------------------------------------------------------

def check_args(tool: Tool, args: Mapping[str, Any]) -> dict[str, Any]:
    """Validate ``args`` against the tool inputs and fill in defaults."""
    if not isinstance(args, Mapping):
        raise ArgsSchemaMismatch(f"{tool.name}: arguments must be an object")
    declared = {p.title: p for p in tool.inputs}
    extra = sorted(set(args) - set(declared))
    if extra:
        raise ArgsSchemaMismatch(f"{tool.name}: unexpected arguments {extra}")
    out: dict[str, Any] = {}
    for name, p in declared.items():
        if name in args:
            if not value_conforms(args[name], p):
                raise ArgsSchemaMismatch(f"{tool.name}: argument {name!r} is not a {p.type}")
            out[name] = args[name]
        elif p.has_default:
            out[name] = p.default
        else:
            raise ArgsSchemaMismatch(f"{tool.name}: missing argument {name!r}")
    return out


def check_outputs(outputs: Sequence[Property], result: Any, what: str,
                  error: type[Exception] = OutputSchemaMismatch) -> dict[str, Any]:
    """Bind a tool result to the declared outputs.

    A dict is read key by key; a bare value is accepted for single-output tools.
    """
    if not isinstance(result, dict):
        if len(outputs) == 1:
            result = {outputs[0].title: result}
        else:
            raise error(f"{what}: expected an object with keys {[p.title for p in outputs]}")
    bound: dict[str, Any] = {}
    for p in outputs:
        if p.title not in result:
            if p.has_default:
                bound[p.title] = p.default
                continue
            raise error(f"{what}: missing output {p.title!r}")
        if not value_conforms(result[p.title], p):
            raise error(f"{what}: output {p.title!r} is not a {p.type}")
        bound[p.title] = result[p.title]
    return bound


@dataclass
class RegisteredTool:
    func: Callable[..., Any]
    inputs: Optional[tuple[Property, ...]] = None
    outputs: Optional[tuple[Property, ...]] = None


class ToolRegistry:
    """Host-side implementations of ServerTools, keyed by tool name."""

    def __init__(self):
        self._tools: dict[str, RegisteredTool] = {}

    def register(self, name: str, func: Callable[..., Any],
                 inputs: Optional[Sequence[Property]] = None,
                 outputs: Optional[Sequence[Property]] = None) -> None:
        self._tools[name] = RegisteredTool(
            func,
            tuple(inputs) if inputs is not None else None,
            tuple(outputs) if outputs is not None else None,
        )

    def register_tool(self, tool: ServerTool, func: Callable[..., Any]) -> None:
        self.register(tool.name, func, tool.inputs, tool.outputs)

    def tool(self, name: str):
        def deco(func):
            self.register(name, func)
            return func
        return deco

    def get(self, name: str) -> RegisteredTool:
        try:
            return self._tools[name]
        except KeyError:
            raise ToolNotFound(f"no server tool registered under {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._tools

    def names(self) -> list[str]:
        return sorted(self._tools)


def invoke_server_tool(registry: ToolRegistry, tool: ServerTool, args: Mapping[str, Any]) -> dict:
    entry = registry.get(tool.name)
    for declared, registered in ((tool.inputs, entry.inputs), (tool.outputs, entry.outputs)):
        if registered is not None and io_signature(registered) != io_signature(declared):
            raise ArgsSchemaMismatch(f"{tool.name}: registered signature differs from declaration")
    bound = check_args(tool, args)
    try:
        result = entry.func(**bound)
    except Exception as exc:
        raise ToolRaised(tool.name, exc) from exc
    return check_outputs(tool.outputs, result, tool.name)


def invoke_remote_tool(tool: RemoteTool, args: Mapping[str, Any],
                       timeout: float = DEFAULT_TIMEOUT) -> dict:
    bound = check_args(tool, args)
    headers = dict(tool.headers)
    body = None
    url = tool.url
    if tool.http_method in ("POST", "PUT"):
        headers.setdefault("Content-Type", "application/json")
        body = json.dumps(bound, sort_keys=True).encode("utf-8")
    else:
        url = _with_query(url, bound)
    resp = http_request(tool.http_method, url, headers, body, timeout)
    if resp.status >= 400:
        raise HttpError(resp.status, f"{tool.name}: remote call returned {resp.status}")
    try:
        data = json.loads(resp.body)
    except json.JSONDecodeError:
        raise OutputSchemaMismatch(f"{tool.name}: response is not JSON") from None
    if not isinstance(data, dict):
        raise OutputSchemaMismatch(f"{tool.name}: response is not a JSON object")
    return check_outputs(tool.outputs, data, tool.name)


def invoke_mcp_tool(tool: MCPTool, args: Mapping[str, Any]) -> dict:
    raise UnsupportedComponent(f"MCPTool {tool.name!r}: MCP execution is not implemented")


@dataclass
class Backends:
    """Everything the engine calls out to during a run."""

    llm: Any = None
    tools: ToolRegistry = field(default_factory=ToolRegistry)
    timeout: float = DEFAULT_TIMEOUT

    def __post_init__(self):
        if self.llm is None:
            self.llm = HttpLlm(timeout=self.timeout)

    def fresh(self) -> "Backends":
        """Copy with per-session state (mock script position) reset."""
        llm = self.llm.fresh() if hasattr(self.llm, "fresh") else self.llm
        return Backends(llm, self.tools, self.timeout)

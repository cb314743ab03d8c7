"""Flow and Agent interpreter with suspend/resume.

Each nested Flow or Agent run is a generator. It yields a suspension status
(``AwaitingUserInput`` or ``AwaitingClientTool``) and receives the resume
payload back through ``send``, so a suspension deep inside a FlowNode, MapNode
or AgentNode unwinds to the session without tearing down the Python stack.

Data binding has two modes. With explicit data-flow edges each frame keeps a
ledger ``(node_id, output) -> (value, step)`` and an input reads, among its
connected sources, the entry written at the highest step. In name-based mode
the frame holds one variable space keyed by property name.
"""

from __future__ import annotations

import copy
import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Generator, Mapping, Optional, Union

from . import templating
from .backends import (
    Backends,
    FinalOutputs,
    LlmResponse,
    Text,
    ToolCall,
    check_outputs,
    http_request,
    invoke_mcp_tool,
    invoke_remote_tool,
    invoke_server_tool,
    parse_structured_response,
    tool_spec,
)
from .errors import (
    BackendError,
    CallIdMismatch,
    FinalOutputsSchemaMismatch,
    InvalidDocument,
    InvalidInputs,
    MaxTurnsExceeded,
    NodeExecutionFailed,
    NotSuspended,
    PayloadKindMismatch,
    StepLimitExceeded,
    TemplateError,
    ToolNotFound,
    ToolOutputSchemaMismatch,
    UnboundInput,
    UnsupportedComponent,
)
from .model import (
    BUILTIN_TYPES,
    Agent,
    AgentNode,
    ApiNode,
    BranchingNode,
    ClientTool,
    Component,
    DataFlowEdge,
    EndNode,
    Flow,
    FlowNode,
    InputMessageNode,
    LlmConfig,
    LlmNode,
    MapNode,
    MCPTool,
    Message,
    Node,
    OutputMessageNode,
    RemoteTool,
    ServerTool,
    StartNode,
    Tool,
    ToolNode,
    branches_of,
    value_conforms,
)
from .serialization import SpecDocument
from .validation import has_errors, validate_document

DEFAULT_STEP_LIMIT = 1000

EVENTS = ("node_entered", "outputs_published", "branch_taken", "message_appended",
          "tool_invoked", "suspended", "resumed")


# -- statuses and payloads ----------------------------------------------------------

@dataclass(frozen=True)
class Finished:
    outputs: dict

    kind = "finished"

    def to_dict(self):
        return {"status": self.kind, "outputs": self.outputs}


@dataclass(frozen=True)
class AwaitingUserInput:
    prompt: Optional[str] = None

    kind = "awaiting_user_input"

    def to_dict(self):
        return {"status": self.kind, "prompt": self.prompt}


@dataclass(frozen=True)
class AwaitingClientTool:
    call_id: str
    tool_name: str
    args: dict

    kind = "awaiting_client_tool"

    def to_dict(self):
        return {"status": self.kind, "call_id": self.call_id,
                "tool_name": self.tool_name, "args": self.args}


ExecutionStatus = Union[Finished, AwaitingUserInput, AwaitingClientTool]
Suspension = Union[AwaitingUserInput, AwaitingClientTool]


@dataclass(frozen=True)
class UserMessage:
    text: str


@dataclass(frozen=True)
class ClientToolResult:
    call_id: str
    outputs: dict


@dataclass(frozen=True)
class TraceEvent:
    step: int
    node_id: str
    event: str
    data: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({"step": self.step, "node_id": self.node_id, "event": self.event,
                           "data": self.data}, sort_keys=True, separators=(",", ":"),
                          ensure_ascii=False)


# -- frames ------------------------------------------------------------------------------

@dataclass
class _FlowIndex:
    successors: dict[tuple[str, str], Node]
    sources: dict[tuple[str, str], list[tuple[str, str]]]


def _index_flow(flow: Flow) -> _FlowIndex:
    successors = {(e.from_node.id, e.branch): e.to_node for e in flow.control_flow_connections}
    sources: dict[tuple[str, str], list[tuple[str, str]]] = {}
    for e in flow.data_flow_connections or ():
        sources.setdefault((e.destination_node.id, e.destination_input), []).append(
            (e.source_node.id, e.source_output))
    return _FlowIndex(successors, sources)


@dataclass
class Frame:
    """State of one running Flow or Agent."""

    component: Component
    inputs: dict
    current: Optional[Node] = None
    ledger: dict[tuple[str, str], tuple[Any, int]] = field(default_factory=dict)
    variables: dict[str, tuple[Any, int]] = field(default_factory=dict)
    index: Optional[_FlowIndex] = None
    result: Optional[dict] = None

    @property
    def name_based(self) -> bool:
        return isinstance(self.component, Flow) and self.component.name_based

    def publish(self, node: Node, outputs: Mapping[str, Any], step: int) -> None:
        for name, value in outputs.items():
            entry = (copy.deepcopy(value), step)
            if self.name_based:
                self.variables[name] = entry
            else:
                self.ledger[(node.id, name)] = entry


def select_next_node(flow: Flow, node: Node, branch: Optional[str],
                     index: Optional[_FlowIndex] = None) -> Optional[Node]:
    """Successor along ``branch``; None once an EndNode has run."""
    if isinstance(node, EndNode):
        return None
    index = index or _index_flow(flow)
    try:
        return index.successors[(node.id, branch)]
    except KeyError:
        raise NodeExecutionFailed(
            node.id, LookupError(f"no control edge leaves branch {branch!r}")) from None


def compile_name_based(flow: Flow) -> Flow:
    """Explicit-edge equivalent of a name-based flow.

    Every input gets an edge from every same-named output in the flow,
    including the node's own outputs so that loops keep overwrite semantics.
    Run-time recency then reproduces the shared variable space.
    """
    if not flow.name_based:
        return flow
    edges = []
    for dst in flow.nodes:
        if isinstance(dst, StartNode):
            continue
        for p in dst.inputs:
            for src in flow.nodes:
                if isinstance(src, EndNode):
                    continue
                for q in src.outputs:
                    if q.title != p.title:
                        continue
                    edges.append(DataFlowEdge(
                        id=f"{flow.id}/{src.id}.{q.title}->{dst.id}.{p.title}",
                        name=f"{src.name}.{q.title} -> {dst.name}.{p.title}",
                        source_node=src, source_output=q.title,
                        destination_node=dst, destination_input=p.title,
                    ))
    return dataclasses.replace(flow, data_flow_connections=tuple(edges))


# -- session --------------------------------------------------------------------------------

Runner = Generator[Suspension, Any, dict]


class ExecutionSession:
    """One run of one entry component; single-threaded, resumable."""

    def __init__(self, document: SpecDocument, backends: Optional[Backends] = None,
                 step_limit: int = DEFAULT_STEP_LIMIT, validate: bool = True):
        self.document = document
        self.backends = (backends or Backends()).fresh()
        self.step_limit = step_limit
        self.validate = validate
        self.frames: list[Frame] = []
        self.conversation: list[Message] = []
        self.step_counter = 0
        self.trace: list[TraceEvent] = []
        self.status: Optional[ExecutionStatus] = None
        self.error: Optional[BaseException] = None
        self._runner: Optional[Runner] = None
        self._pending_tool: Optional[Tool] = None
        self._calls = 0
        self._indexes: dict[int, _FlowIndex] = {}

    # -- public API ---------------------------------------------------------------

    def start(self, entry_id: Optional[str] = None,
              inputs: Optional[Mapping[str, Any]] = None) -> ExecutionStatus:
        if self._runner is not None or self.status is not None:
            raise RuntimeError("session already started")
        if self.validate:
            diagnostics = validate_document(self.document)
            if has_errors(diagnostics):
                raise InvalidDocument([d for d in diagnostics if d.severity == "error"])
        entry = self.document.root if entry_id is None else self.document.get(entry_id)
        inputs = dict(inputs or {})
        self._runner = self._run_entry(entry, inputs)
        return self._advance(None, first=True)

    def resume(self, payload: Union[UserMessage, ClientToolResult]) -> ExecutionStatus:
        status = self.status
        if self._runner is None or not isinstance(status, (AwaitingUserInput, AwaitingClientTool)):
            raise NotSuspended("session is not waiting for input")
        if isinstance(status, AwaitingUserInput):
            if not isinstance(payload, UserMessage):
                raise PayloadKindMismatch("session awaits a user message")
            value: Any = payload.text
        else:
            if not isinstance(payload, ClientToolResult):
                raise PayloadKindMismatch("session awaits a client tool result")
            if payload.call_id != status.call_id:
                raise CallIdMismatch(f"expected call_id {status.call_id!r}, got {payload.call_id!r}")
            value = check_outputs(self._pending_tool.outputs, payload.outputs,
                                  f"client tool {status.tool_name!r}", ToolOutputSchemaMismatch)
        self._emit(self._current_id(), "resumed", {"kind": status.kind})
        return self._advance(value)

    @property
    def finished(self) -> bool:
        return isinstance(self.status, Finished)

    def trace_lines(self) -> list[str]:
        return [e.to_json() for e in self.trace]

    def write_trace(self, path: str | Path) -> None:
        Path(path).write_text("".join(line + "\n" for line in self.trace_lines()), encoding="utf-8")

    # -- plumbing --------------------------------------------------------------------

    def _advance(self, value: Any, first: bool = False) -> ExecutionStatus:
        try:
            status = next(self._runner) if first else self._runner.send(value)
        except StopIteration as stop:
            self._runner = None
            self.status = Finished(stop.value)
            return self.status
        except BaseException as exc:
            self._runner = None
            self.error = exc
            raise
        self.status = status
        return status

    def _emit(self, node_id: str, event: str, data: Optional[dict] = None) -> None:
        self.trace.append(TraceEvent(self.step_counter, node_id, event, copy.deepcopy(data or {})))

    def _current_id(self) -> str:
        for frame in reversed(self.frames):
            if frame.current is not None:
                return frame.current.id
        return self.frames[-1].component.id if self.frames else ""

    def _append(self, owner_id: str, message: Message) -> None:
        self.conversation.append(message)
        self._emit(owner_id, "message_appended", message.to_dict())

    def _next_call_id(self) -> str:
        self._calls += 1
        return f"call_{self._calls}"

    def _suspend(self, owner_id: str, status: Suspension) -> Runner:
        self._emit(owner_id, "suspended", status.to_dict())
        value = yield status
        return value

    def _index(self, flow: Flow) -> _FlowIndex:
        key = id(flow)
        if key not in self._indexes:
            self._indexes[key] = _index_flow(flow)
        return self._indexes[key]

    # -- entry -------------------------------------------------------------------------

    def _run_entry(self, entry: Component, inputs: dict) -> Runner:
        if BUILTIN_TYPES.get(entry.component_type) is not type(entry):
            raise UnsupportedComponent(f"cannot execute component type {entry.component_type!r}")
        if isinstance(entry, Flow):
            _check_inputs(entry.inputs, inputs, entry.id)
            return (yield from self._run_flow(entry, inputs))
        if isinstance(entry, Agent):
            _check_inputs(entry.inputs, inputs, entry.id)
            self._step_guard()
            self.step_counter += 1
            self._emit(entry.id, "node_entered", {"inputs": inputs})
            return (yield from self._run_agent(entry, inputs, entry.id))
        raise UnsupportedComponent(f"{entry.component_type} cannot be an entry point")

    def _step_guard(self) -> None:
        if self.step_counter >= self.step_limit:
            raise StepLimitExceeded(f"step limit of {self.step_limit} reached")

    # -- flows -------------------------------------------------------------------------

    def _run_flow(self, flow: Flow, inputs: dict) -> Runner:
        frame = Frame(flow, dict(inputs), index=self._index(flow))
        self.frames.append(frame)
        try:
            node: Optional[Node] = flow.start_node
            while node is not None:
                branch = yield from self.execute_node(frame, node)
                if isinstance(node, EndNode):
                    break
                node = select_next_node(flow, node, branch, frame.index)
            return frame.result or {}
        finally:
            self.frames.pop()

    def resolve_inputs(self, frame: Frame, node: Node) -> dict[str, Any]:
        """Bind every input of ``node`` for the step about to run."""
        bound: dict[str, Any] = {}
        for p in node.inputs:
            name = p.title
            if isinstance(node, StartNode):
                found = name in frame.inputs
                value = frame.inputs.get(name)
            elif frame.name_based:
                found = name in frame.variables
                value = frame.variables[name][0] if found else None
            else:
                candidates = [frame.ledger[src] for src in frame.index.sources.get((node.id, name), ())
                              if src in frame.ledger]
                found = bool(candidates)
                value = max(candidates, key=lambda entry: entry[1])[0] if found else None
            if found:
                bound[name] = copy.deepcopy(value)
            elif p.has_default:
                bound[name] = p.default
            else:
                raise UnboundInput(node.id, name)
        return bound

    def execute_node(self, frame: Frame, node: Node) -> Generator[Suspension, Any, Optional[str]]:
        """Run one node; returns the branch taken (None for an EndNode)."""
        self._step_guard()
        self.step_counter += 1
        frame.current = node
        inputs = self.resolve_inputs(frame, node)
        self._emit(node.id, "node_entered", {"inputs": inputs})
        handler = getattr(self, "_exec_" + type(node).__name__, None)
        if handler is None or BUILTIN_TYPES.get(node.component_type) is not type(node):
            raise UnsupportedComponent(f"cannot execute node type {node.component_type!r}")
        try:
            outputs, branch = yield from handler(node, inputs)
        except TemplateError as exc:
            raise NodeExecutionFailed(node.id, exc) from exc
        if outputs:
            frame.publish(node, outputs, self.step_counter)
            self._emit(node.id, "outputs_published", {"outputs": outputs})
        if isinstance(node, EndNode):
            frame.result = outputs
            return None
        self._emit(node.id, "branch_taken", {"branch": branch})
        return branch

    # -- node kinds ----------------------------------------------------------------------
    # Each handler is a generator returning (outputs, branch).

    def _exec_StartNode(self, node: StartNode, inputs):
        return {p.title: inputs[p.title] for p in node.outputs if p.title in inputs}, "next"
        yield

    def _exec_EndNode(self, node: EndNode, inputs):
        return {p.title: inputs[p.title] for p in node.outputs if p.title in inputs}, None
        yield

    def _exec_LlmNode(self, node: LlmNode, inputs):
        prompt = templating.render(node.prompt_template, inputs)
        response = self._generate(node.llm_config, [Message("user", prompt, "flow", node.name)], [], node.id)
        if not isinstance(response, Text):
            raise NodeExecutionFailed(node.id, TypeError(f"LlmNode expects text, model returned {response!r}"))
        return {node.outputs[0].title: response.content}, "next"
        yield

    def _exec_ApiNode(self, node: ApiNode, inputs):
        url = templating.render(node.url_template, inputs)
        headers = {k: templating.render(v, inputs) for k, v in node.headers.items()}
        body = None
        if node.body_template is not None:
            body = templating.render(node.body_template, inputs).encode("utf-8")
            headers.setdefault("Content-Type", "application/json")
        try:
            resp = http_request(node.http_method, url, headers, body, self.backends.timeout)
        except BackendError as exc:
            raise NodeExecutionFailed(node.id, exc) from exc
        return {"status": resp.status, "body": resp.body}, "next"
        yield

    def _exec_ToolNode(self, node: ToolNode, inputs):
        result = yield from self._invoke_tool(node.tool, inputs, node.id)
        return {p.title: result[p.title] for p in node.outputs if p.title in result}, "next"

    def _exec_AgentNode(self, node: AgentNode, inputs):
        result = yield from self._run_agent(node.agent, inputs, node.id)
        return {p.title: result[p.title] for p in node.outputs if p.title in result}, "next"

    def _exec_FlowNode(self, node: FlowNode, inputs):
        result = yield from self._run_flow(node.subflow, inputs)
        return {p.title: result[p.title] for p in node.outputs if p.title in result}, "next"

    def _exec_MapNode(self, node: MapNode, inputs):
        items = inputs[node.iterated_input]
        if not isinstance(items, list):
            raise NodeExecutionFailed(node.id, TypeError(f"{node.iterated_input!r} is not an array"))
        collected: dict[str, list] = {p.title: [] for p in node.outputs}
        for item in items:
            result = yield from self._run_flow(node.subflow, {**inputs, node.iterated_input: item})
            for name, values in collected.items():
                if name not in result:
                    raise NodeExecutionFailed(node.id, KeyError(f"subflow run produced no {name!r}"))
                values.append(result[name])
        return collected, "next"

    def _exec_BranchingNode(self, node: BranchingNode, inputs):
        key = templating.render_value(inputs[node.branch_input])
        return {}, node.mapping.get(key, branches_of(node)[-1])
        yield

    def _exec_InputMessageNode(self, node: InputMessageNode, inputs):
        prompt = None
        if node.message_template:
            prompt = templating.render(node.message_template, inputs)
            self._append(node.id, Message("agent", prompt, node.name, "user"))
        text = yield from self._suspend(node.id, AwaitingUserInput(prompt))
        self._append(node.id, Message("user", text, "user", node.name))
        return {node.outputs[0].title: text}, "next"

    def _exec_OutputMessageNode(self, node: OutputMessageNode, inputs):
        content = templating.render(node.message_template, inputs)
        self._append(node.id, Message("agent", content, node.name, "user"))
        return {}, "next"
        yield

    # -- tools and models ---------------------------------------------------------------------

    def _generate(self, config: Optional[LlmConfig], messages, specs, owner_id: str) -> LlmResponse:
        if config is None:
            raise NodeExecutionFailed(owner_id, ValueError("no llm_config"))
        try:
            return self.backends.llm.generate(config, messages, specs)
        except BackendError as exc:
            raise NodeExecutionFailed(owner_id, exc) from exc

    def _invoke_tool(self, tool: Tool, args: dict, owner_id: str) -> Runner:
        call_id = self._next_call_id()
        self._emit(owner_id, "tool_invoked", {"call_id": call_id, "tool": tool.name,
                                              "tool_type": tool.component_type, "args": args})
        if isinstance(tool, ClientTool):
            self._pending_tool = tool
            try:
                return (yield from self._suspend(owner_id, AwaitingClientTool(call_id, tool.name, copy.deepcopy(args))))
            finally:
                self._pending_tool = None
        if isinstance(tool, MCPTool):
            return invoke_mcp_tool(tool, args)
        try:
            if isinstance(tool, ServerTool):
                return invoke_server_tool(self.backends.tools, tool, args)
            if isinstance(tool, RemoteTool):
                return invoke_remote_tool(tool, args, self.backends.timeout)
        except BackendError as exc:
            raise NodeExecutionFailed(owner_id, exc) from exc
        raise UnsupportedComponent(f"cannot invoke tool type {tool.component_type!r}")

    def _run_agent(self, agent: Agent, inputs: dict, owner_id: str) -> Runner:
        """Model loop: tool calls run (or suspend), plain text asks the user, a
        ``final`` block that fills every declared output ends the run."""
        if agent.llm_config is None:
            raise UnsupportedComponent(f"agent {agent.id!r} has no llm_config")
        frame = Frame(agent, dict(inputs))
        self.frames.append(frame)
        try:
            try:
                system = templating.render(agent.instructions, inputs) if agent.instructions else ""
            except TemplateError as exc:
                raise NodeExecutionFailed(owner_id, exc) from exc
            specs = [tool_spec(t) for t in agent.tools]
            turns = 0
            while True:
                messages = ([Message("system", system, agent.name, agent.name)] if system else []) \
                    + list(self.conversation)
                if not messages:
                    text = yield from self._suspend(owner_id, AwaitingUserInput(None))
                    self._append(owner_id, Message("user", text, "user", agent.name))
                    continue
                if turns >= agent.max_turns:
                    raise MaxTurnsExceeded(f"agent {agent.id!r} made {turns} model calls without finishing")
                turns += 1
                response = self._generate(agent.llm_config, messages, specs, owner_id)
                if isinstance(response, Text):
                    response = parse_structured_response(response.content)

                if isinstance(response, ToolCall):
                    tool = agent.tool_named(response.tool_name)
                    if tool is None:
                        raise ToolNotFound(f"agent {agent.id!r} has no tool {response.tool_name!r}")
                    request = json.dumps(response.to_dict(), sort_keys=True, ensure_ascii=False)
                    self._append(owner_id, Message("agent", request, agent.name, tool.name))
                    result = yield from self._invoke_tool(tool, response.args, owner_id)
                    self._append(owner_id, Message(
                        "tool", json.dumps(result, sort_keys=True, ensure_ascii=False), tool.name, agent.name))
                elif isinstance(response, FinalOutputs):
                    extra = sorted(set(response.values) - {p.title for p in agent.outputs})
                    if extra:
                        raise FinalOutputsSchemaMismatch(f"agent {agent.id!r}: unexpected outputs {extra}")
                    return check_outputs(agent.outputs, response.values, f"agent {agent.id!r}",
                                         FinalOutputsSchemaMismatch)
                else:
                    self._append(owner_id, Message("agent", response.content, agent.name, "user"))
                    text = yield from self._suspend(owner_id, AwaitingUserInput(response.content))
                    self._append(owner_id, Message("user", text, "user", agent.name))
                    turns = 0
        finally:
            self.frames.pop()


def _check_inputs(declared, inputs: Mapping[str, Any], entry_id: str) -> None:
    by_name = {p.title: p for p in declared}
    unknown = sorted(set(inputs) - set(by_name))
    if unknown:
        raise InvalidInputs(f"{entry_id}: unknown inputs {unknown}")
    for name, value in inputs.items():
        if not value_conforms(value, by_name[name]):
            raise InvalidInputs(f"{entry_id}: input {name!r} is not a {by_name[name].type}")


def start_run(document: SpecDocument, entry_component_id: Optional[str] = None,
              inputs: Optional[Mapping[str, Any]] = None, backends: Optional[Backends] = None,
              step_limit: int = DEFAULT_STEP_LIMIT) -> tuple[ExecutionSession, ExecutionStatus]:
    session = ExecutionSession(document, backends, step_limit)
    status = session.start(entry_component_id, inputs)
    return session, status


def resume_run(session: ExecutionSession,
               payload: Union[UserMessage, ClientToolResult]) -> ExecutionStatus:
    return session.resume(payload)

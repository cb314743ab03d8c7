"""Static checks run before execution.

Every check returns a list of :class:`Diagnostic`; an empty result from
:func:`validate_document` means the document is executable. Codes map to a
fixed severity (see ``SEVERITY``).
"""

from __future__ import annotations

from collections import Counter, deque
from dataclasses import dataclass
from typing import Iterable, Optional

from .errors import DocumentError, TemplateError
from .model import (
    Agent,
    AgentNode,
    ApiNode,
    BranchingNode,
    Component,
    EndNode,
    Flow,
    FlowNode,
    InputMessageNode,
    LlmNode,
    MapNode,
    Node,
    OutputMessageNode,
    Property,
    StartNode,
    ToolNode,
    branches_of,
    io_signature,
    schema_compatible,
)
from .serialization import AGENTSPEC_VERSION, PluginRegistry, SpecDocument, deserialize

ERROR, WARNING = "error", "warning"

SEVERITY = {
    "AGENT_MISSING_LLM": ERROR,
    "AGENT_DUPLICATE_TOOL": ERROR,
    "NODE_MISSING_REFERENCE": ERROR,
    "FLOW_MISSING_START": ERROR,
    "FLOW_MULTIPLE_START": ERROR,
    "CF_DUPLICATE_BRANCH": ERROR,
    "CF_DANGLING_BRANCH": ERROR,
    "CF_UNKNOWN_BRANCH": ERROR,
    "CF_FOREIGN_NODE": ERROR,
    "CF_UNREACHABLE": WARNING,
    "DF_UNKNOWN_PROPERTY": ERROR,
    "DF_TYPE_MISMATCH": ERROR,
    "DF_FOREIGN_NODE": ERROR,
    "DF_INTO_START": ERROR,
    "DF_UNBOUND_INPUT": WARNING,
    "IO_DECLARATION_MISMATCH": ERROR,
    "PROPERTY_INVALID": ERROR,
    "TEMPLATE_INVALID": ERROR,
    "VERSION_UNSUPPORTED": WARNING,
    # raised while loading text; reported through check_text
    "PARSE_ERROR": ERROR,
    "MISSING_VERSION": ERROR,
    "UNKNOWN_COMPONENT_TYPE": ERROR,
    "DANGLING_REFERENCE": ERROR,
    "DUPLICATE_DECLARATION": ERROR,
    "MALFORMED_COMPONENT": ERROR,
}


@dataclass(frozen=True, order=True)
class Diagnostic:
    component_id: str
    code: str
    message: str
    severity: str = ERROR

    def __post_init__(self):
        if SEVERITY.get(self.code) != self.severity:
            raise ValueError(f"{self.code} must have severity {SEVERITY.get(self.code)}")
        if not self.message:
            raise ValueError("diagnostic message must not be empty")

    def render(self) -> str:
        return f"{self.severity.upper()} {self.code} {self.component_id}: {self.message}"


def diag(code: str, component_id: str, message: str) -> Diagnostic:
    return Diagnostic(component_id, code, message, SEVERITY[code])


def has_errors(diagnostics: Iterable[Diagnostic]) -> bool:
    return any(d.severity == ERROR for d in diagnostics)


def _valid_start(flow: Flow) -> Optional[StartNode]:
    ids = {n.id for n in flow.nodes}
    if isinstance(flow.start_node, StartNode) and flow.start_node.id in ids:
        return flow.start_node
    return None


# -- control flow ----------------------------------------------------------------

def check_control_flow(flow: Flow) -> list[Diagnostic]:
    out: list[Diagnostic] = []
    ids = {n.id for n in flow.nodes}
    starts = [n for n in flow.nodes if isinstance(n, StartNode)]
    if _valid_start(flow) is None:
        out.append(diag("FLOW_MISSING_START", flow.id, "flow has no start node among its nodes"))
    elif len(starts) > 1:
        out.append(diag("FLOW_MULTIPLE_START", flow.id,
                        f"flow has {len(starts)} StartNodes, exactly one is allowed"))

    covered: Counter = Counter()
    successors: dict[str, list[Node]] = {}
    for edge in flow.control_flow_connections:
        foreign = [n.id for n in (edge.from_node, edge.to_node) if n.id not in ids]
        if foreign:
            out.append(diag("CF_FOREIGN_NODE", edge.id,
                            f"edge endpoint(s) {foreign} are not nodes of flow {flow.id!r}"))
            continue
        if edge.branch not in branches_of(edge.from_node):
            out.append(diag("CF_UNKNOWN_BRANCH", edge.id,
                            f"node {edge.from_node.id!r} has no branch {edge.branch!r}"))
            continue
        covered[(edge.from_node.id, edge.branch)] += 1
        successors.setdefault(edge.from_node.id, []).append(edge.to_node)

    for node in flow.nodes:
        for branch in branches_of(node):
            count = covered[(node.id, branch)]
            if count > 1:
                out.append(diag("CF_DUPLICATE_BRANCH", node.id,
                                f"branch {branch!r} has {count} outgoing control edges"))
            elif count == 0:
                out.append(diag("CF_DANGLING_BRANCH", node.id,
                                f"branch {branch!r} has no outgoing control edge"))

    start = _valid_start(flow)
    if start is not None:
        seen = {start.id}
        queue = deque([start])
        while queue:
            for nxt in successors.get(queue.popleft().id, []):
                if nxt.id not in seen:
                    seen.add(nxt.id)
                    queue.append(nxt)
        for node in flow.nodes:
            if node.id not in seen:
                out.append(diag("CF_UNREACHABLE", node.id, "node is not reachable from the start node"))
    return out


# -- data flow --------------------------------------------------------------------

def check_data_flow(flow: Flow) -> list[Diagnostic]:
    if flow.name_based:
        return []
    out: list[Diagnostic] = []
    ids = {n.id for n in flow.nodes}
    bound: set[tuple[str, str]] = set()
    for edge in flow.data_flow_connections:
        src, dst = edge.source_node, edge.destination_node
        foreign = [n.id for n in (src, dst) if n.id not in ids]
        if foreign:
            out.append(diag("DF_FOREIGN_NODE", edge.id,
                            f"edge endpoint(s) {foreign} are not nodes of flow {flow.id!r}"))
            continue
        if isinstance(dst, StartNode):
            out.append(diag("DF_INTO_START", edge.id, "a StartNode cannot consume data from other nodes"))
            continue
        source = {p.title: p for p in src.outputs}.get(edge.source_output)
        target = {p.title: p for p in dst.inputs}.get(edge.destination_input)
        missing = []
        if source is None:
            missing.append(f"output {edge.source_output!r} on {src.id!r}")
        if target is None:
            missing.append(f"input {edge.destination_input!r} on {dst.id!r}")
        if missing:
            out.append(diag("DF_UNKNOWN_PROPERTY", edge.id, "no " + " and no ".join(missing)))
            continue
        bound.add((dst.id, edge.destination_input))
        if not schema_compatible(source, target):
            out.append(diag("DF_TYPE_MISMATCH", edge.id,
                            f"{source.type} output {edge.source_output!r} feeds "
                            f"{target.type} input {edge.destination_input!r}"))
    for node in flow.nodes:
        if isinstance(node, StartNode):
            continue
        for p in node.inputs:
            if (node.id, p.title) not in bound and not p.has_default:
                out.append(diag("DF_UNBOUND_INPUT", node.id,
                                f"input {p.title!r} has no incoming data edge and no default"))
    return out


# -- declared vs inferred I/O ------------------------------------------------------------

def _describe(props) -> str:
    return "[" + ", ".join(f"{p.title}:{p.type}" for p in props) + "]"


def _exact(c: Component, label: str, declared, inferred) -> list[Diagnostic]:
    if io_signature(declared) == io_signature(inferred):
        return []
    return [diag("IO_DECLARATION_MISMATCH", c.id,
                 f"declared {label} {_describe(declared)} but configuration implies {_describe(inferred)}")]


def _single_string_output(c: Node) -> list[Diagnostic]:
    if len(c.outputs) == 1 and c.outputs[0].type == "string":
        return []
    return [diag("IO_DECLARATION_MISMATCH", c.id,
                 f"expected exactly one string output, declared {_describe(c.outputs)}")]


def _exposed(c: Component, label: str, declared, inner, required: bool) -> list[Diagnostic]:
    """A wrapper may expose a subset of the inner properties, with identical schemas."""
    inner_by_name = {p.title: p for p in inner}
    problems = []
    for p in declared:
        q = inner_by_name.get(p.title)
        if q is None:
            problems.append(f"{p.title!r} is not provided by the wrapped component")
        elif not schema_compatible(p, q):
            problems.append(f"{p.title!r} is declared {p.type} but the wrapped component has {q.type}")
    if required:
        names = {p.title for p in declared}
        problems.extend(f"required input {q.title!r} is not exposed"
                        for q in inner if q.title not in names and not q.has_default)
    if not problems:
        return []
    return [diag("IO_DECLARATION_MISMATCH", c.id, f"{label}: " + "; ".join(problems))]


def infer_declared_io(c: Component) -> list[Diagnostic]:
    try:
        return _infer_declared_io(c)
    except TemplateError as exc:
        return [diag("TEMPLATE_INVALID", c.id, str(exc))]


def _infer_declared_io(c: Component) -> list[Diagnostic]:
    out: list[Diagnostic] = []
    if isinstance(c, Flow):
        if _valid_start(c) is not None:
            out += _exact(c, "inputs", c.inputs, c.start_node.inputs)
        ends: dict[str, Property] = {}
        for end in c.end_nodes:
            for p in end.outputs:
                if p.title in ends and not schema_compatible(ends[p.title], p):
                    out.append(diag("IO_DECLARATION_MISMATCH", c.id,
                                    f"end nodes disagree on the type of output {p.title!r}"))
                ends.setdefault(p.title, p)
        out += _exact(c, "outputs", c.outputs, list(ends.values()))
    elif isinstance(c, StartNode):
        out += _exact(c, "outputs", c.outputs, c.inputs)
    elif isinstance(c, EndNode):
        out += _exact(c, "inputs", c.inputs, c.outputs)
    elif isinstance(c, LlmNode):
        out += _exact(c, "inputs", c.inputs, c.inferred_inputs())
        out += _single_string_output(c)
    elif isinstance(c, InputMessageNode):
        out += _exact(c, "inputs", c.inputs, c.inferred_inputs())
        out += _single_string_output(c)
    elif isinstance(c, (ApiNode, OutputMessageNode, BranchingNode)):
        if isinstance(c, BranchingNode):
            if [p.title for p in c.inputs] != [c.branch_input]:
                out.append(diag("IO_DECLARATION_MISMATCH", c.id,
                                f"expected the single input {c.branch_input!r}, declared {_describe(c.inputs)}"))
        else:
            out += _exact(c, "inputs", c.inputs, c.inferred_inputs())
        out += _exact(c, "outputs", c.outputs, c.inferred_outputs())
    elif isinstance(c, (AgentNode, FlowNode, ToolNode, MapNode)):
        if isinstance(c, MapNode) and c.subflow is not None and \
                c.iterated_input not in {p.title for p in c.subflow.inputs}:
            out.append(diag("IO_DECLARATION_MISMATCH", c.id,
                            f"iterated_input {c.iterated_input!r} is not an input of the subflow"))
            return out
        inner_in, inner_out = c.inferred_inputs(), c.inferred_outputs()
        if inner_in is not None:
            out += _exposed(c, "inputs", c.inputs, inner_in, required=True)
        if inner_out is not None:
            out += _exposed(c, "outputs", c.outputs, inner_out, required=False)
    elif isinstance(c, Agent):
        out += _exact(c, "inputs", c.inputs, c.inferred_inputs())
    return out


# -- per-component structure ---------------------------------------------------------

_REFERENCES = {LlmNode: "llm_config", AgentNode: "agent", FlowNode: "subflow",
               MapNode: "subflow", ToolNode: "tool"}


def check_component(c: Component) -> list[Diagnostic]:
    out: list[Diagnostic] = []
    for attr in ("inputs", "outputs"):
        for p in getattr(c, attr, None) or ():
            try:
                p.check()
            except Exception as exc:
                out.append(diag("PROPERTY_INVALID", c.id, f"{attr}: {exc}"))
    if isinstance(c, Agent):
        if c.llm_config is None:
            out.append(diag("AGENT_MISSING_LLM", c.id, "an Agent must reference an LlmConfig"))
        names = Counter(t.name for t in c.tools)
        for name, n in sorted(names.items()):
            if n > 1:
                out.append(diag("AGENT_DUPLICATE_TOOL", c.id, f"tool name {name!r} appears {n} times"))
    for cls, attr in _REFERENCES.items():
        if type(c) is cls and getattr(c, attr) is None:
            out.append(diag("NODE_MISSING_REFERENCE", c.id, f"{cls.__name__} needs a {attr}"))
    return out


def validate_document(doc: SpecDocument) -> list[Diagnostic]:
    out: list[Diagnostic] = []
    if doc.agentspec_version != AGENTSPEC_VERSION:
        out.append(diag("VERSION_UNSUPPORTED", doc.root.id,
                        f"agentspec_version {doc.agentspec_version!r} is not {AGENTSPEC_VERSION!r}; "
                        "continuing"))
    for c in doc.components_by_id.values():
        out += check_component(c)
        out += infer_declared_io(c)
        if isinstance(c, Flow):
            out += check_control_flow(c)
            out += check_data_flow(c)
    return sorted(set(out))


def check_text(text: str, format: str = "json",
               plugins: Optional[PluginRegistry] = None) -> tuple[Optional[SpecDocument], list[Diagnostic]]:
    """Load and validate; loading failures come back as a single diagnostic."""
    try:
        doc = deserialize(text, format, plugins)
    except DocumentError as exc:
        return None, [diag(exc.code, exc.component_id or "<document>", str(exc))]
    return doc, validate_document(doc)

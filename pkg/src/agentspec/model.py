"""In-memory component model.

Components are frozen dataclasses. Sequences of components or properties are
stored as tuples; structural equality is the dataclass ``__eq__`` and hashing is
by ``(component_type, id)`` so components can key dicts and sets.

Inputs and outputs left as ``None`` at construction are inferred from the
component's configuration (placeholders, wrapped components, and so on). An
explicit list, even an empty one, is kept as given so that static validation
can compare it against the inferred one.
"""

from __future__ import annotations

import copy
import json
import uuid
from dataclasses import dataclass, field, fields
from typing import Any, ClassVar, Iterator, Mapping, Optional, Sequence

from . import templating
from .errors import InvalidProperty, MissingTitle, ModelError

SCHEMA_KINDS = ("string", "number", "integer", "boolean", "object", "array", "null")
HTTP_METHODS = ("GET", "POST", "PUT", "DELETE")
MESSAGE_ROLES = ("system", "agent", "user", "tool")
DEFAULT_BRANCH = "next"
FALLBACK_BRANCH = "default"

# -- properties ---------------------------------------------------------------

@dataclass(frozen=True)
class Property:
    """A named value contract described by a JSON schema object."""

    json_schema: Mapping[str, Any]

    def __post_init__(self):
        object.__setattr__(self, "json_schema", copy.deepcopy(dict(self.json_schema)))

    def __hash__(self):
        return hash(json.dumps(self.json_schema, sort_keys=True, default=str))

    @classmethod
    def of(cls, title: str, type: str = "string", **extra: Any) -> "Property":
        return cls(json_schema={"title": title, "type": type, **extra})

    @property
    def title(self) -> Optional[str]:
        return self.json_schema.get("title")

    @property
    def type(self) -> Optional[str]:
        return self.json_schema.get("type")

    @property
    def has_default(self) -> bool:
        return "default" in self.json_schema

    @property
    def default(self) -> Any:
        return copy.deepcopy(self.json_schema.get("default"))

    def check(self) -> None:
        property_name(self)
        if self.type not in SCHEMA_KINDS:
            raise InvalidProperty(f"property {self.title!r} has unsupported type {self.type!r}")


def property_name(p: Property) -> str:
    title = p.json_schema.get("title")
    if not isinstance(title, str) or not title:
        raise MissingTitle(f"property schema has no title: {p.json_schema!r}")
    return title


def _items_type(p: Mapping[str, Any]) -> Optional[str]:
    items = p.get("items")
    return items.get("type") if isinstance(items, Mapping) else None


def schema_compatible(a: Property, b: Property) -> bool:
    """Type-kind equality; arrays also compare ``items.type`` when both sides declare it."""
    if a.type != b.type:
        return False
    if a.type == "array":
        ia, ib = _items_type(a.json_schema), _items_type(b.json_schema)
        if ia is not None and ib is not None and ia != ib:
            return False
    return True


def value_conforms(value: Any, p: Property | Mapping[str, Any]) -> bool:
    """Shallow JSON-schema type check (recurses into ``items`` for arrays)."""
    schema = p.json_schema if isinstance(p, Property) else p
    kind = schema.get("type")
    if kind is None:
        return True
    if kind == "string":
        return isinstance(value, str)
    if kind == "integer":
        return isinstance(value, int) and not isinstance(value, bool)
    if kind == "number":
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if kind == "boolean":
        return isinstance(value, bool)
    if kind == "null":
        return value is None
    if kind == "object":
        return isinstance(value, dict)
    if kind == "array":
        if not isinstance(value, list):
            return False
        items = schema.get("items")
        return not isinstance(items, Mapping) or all(value_conforms(v, items) for v in value)
    return False


def lift_to_array(p: Property) -> Property:
    item = {k: v for k, v in p.json_schema.items() if k not in ("title", "default", "description")}
    schema: dict[str, Any] = {"title": p.title, "type": "array", "items": item}
    return Property(json_schema=schema)


def io_signature(props: Sequence[Property]) -> list[tuple]:
    """Sorted ``(name, type, items-type)`` triples, for set-equality comparisons."""
    return sorted((p.title or "", p.type or "", _items_type(p.json_schema) or "") for p in props)


def _string_props(names: Sequence[str]) -> tuple[Property, ...]:
    return tuple(Property.of(n, "string") for n in names)


# -- field kinds ----------------------------------------------------------------

def component_field(default: Any = None, **kw) -> Any:
    return field(default=default, metadata={"kind": "component"}, **kw)


def required_component_field() -> Any:
    return field(metadata={"kind": "component"})


def components_field(default: Any = (), **kw) -> Any:
    return field(default=default, metadata={"kind": "components"}, **kw)


def properties_field(**kw) -> Any:
    return field(default=None, metadata={"kind": "properties"}, **kw)


def field_kind(f) -> str:
    return f.metadata.get("kind", "value")


def _hash_by_id(self) -> int:
    return hash((self.component_type, self.id))


def component_class(cls):
    """Make ``cls`` a frozen keyword-only dataclass hashed by identity key."""
    cls = dataclass(frozen=True, kw_only=True)(cls)
    cls.__hash__ = _hash_by_id
    return cls


# -- base component ---------------------------------------------------------------

@component_class
class Component:
    component_type: ClassVar[str] = "Component"

    name: str
    id: str = field(default_factory=lambda: str(uuid.uuid4()))
    description: Optional[str] = None
    metadata: Optional[dict] = None

    def __init_subclass__(cls, **kw):
        super().__init_subclass__(**kw)
        if "component_type" not in cls.__dict__:
            cls.component_type = cls.__name__

    def __post_init__(self):
        if not isinstance(self.id, str) or not self.id:
            raise ModelError(f"{self.component_type} {self.name!r} has an empty id")
        if self.metadata is not None:
            object.__setattr__(self, "metadata", copy.deepcopy(dict(self.metadata)))
        for f in fields(self):
            kind = field_kind(f)
            value = getattr(self, f.name)
            if kind in ("components", "properties") and value is not None:
                object.__setattr__(self, f.name, tuple(value))
        inputs_unset = any(f.name == "inputs" for f in fields(self)) and self.inputs is None
        outputs_unset = any(f.name == "outputs" for f in fields(self)) and self.outputs is None
        if inputs_unset:
            object.__setattr__(self, "inputs", tuple(self.inferred_inputs() or ()))
        if outputs_unset:
            object.__setattr__(self, "outputs", tuple(self.inferred_outputs() or ()))

    def _set(self, name: str, value: Any) -> None:
        object.__setattr__(self, name, value)

    def inferred_inputs(self) -> Optional[tuple[Property, ...]]:
        """Inputs implied by the configuration, or None when they are free."""
        return None

    def inferred_outputs(self) -> Optional[tuple[Property, ...]]:
        return None


def child_components(c: Component) -> Iterator[Component]:
    """Components directly referenced by ``c``, in field-definition order."""
    for f in fields(c):
        value = getattr(c, f.name)
        if isinstance(value, Component):
            yield value
        elif isinstance(value, (tuple, list)):
            for v in value:
                if isinstance(v, Component):
                    yield v


def walk_components(root: Component) -> Iterator[Component]:
    """Depth-first, definition-order traversal yielding each instance once."""
    seen: set[int] = set()
    stack = [root]
    while stack:
        c = stack.pop()
        if id(c) in seen:
            continue
        seen.add(id(c))
        yield c
        stack.extend(reversed(list(child_components(c))))


# -- llm configs --------------------------------------------------------------------

@component_class
class LlmConfig(Component):
    temperature: Optional[float] = None
    max_tokens: Optional[int] = None

    def __post_init__(self):
        super().__post_init__()
        if self.max_tokens is not None and (not isinstance(self.max_tokens, int) or self.max_tokens <= 0):
            raise ModelError(f"max_tokens must be a positive integer, got {self.max_tokens!r}")


@component_class
class VllmConfig(LlmConfig):
    url: str
    model_id: str

    def __post_init__(self):
        super().__post_init__()
        if not self.url:
            raise ModelError(f"{self.component_type} {self.name!r} needs a url")


@component_class
class OpenAiCompatibleConfig(VllmConfig):
    """Any endpoint speaking the chat-completions JSON shape."""


# -- tools ----------------------------------------------------------------------------

@component_class
class Tool(Component):
    inputs: Optional[tuple[Property, ...]] = properties_field()
    outputs: Optional[tuple[Property, ...]] = properties_field()


@component_class
class ServerTool(Tool):
    pass


@component_class
class ClientTool(Tool):
    pass


@component_class
class RemoteTool(Tool):
    url: str
    http_method: str = "GET"
    headers: dict = field(default_factory=dict)

    def __post_init__(self):
        super().__post_init__()
        if not self.url:
            raise ModelError(f"RemoteTool {self.name!r} needs a url")
        if self.http_method not in HTTP_METHODS:
            raise ModelError(f"RemoteTool {self.name!r}: unsupported http_method {self.http_method!r}")
        self._set("headers", dict(self.headers))


@component_class
class MCPTool(Tool):
    server_ref: str


# -- agent ------------------------------------------------------------------------------

@component_class
class Agent(Component):
    llm_config: Optional[LlmConfig] = component_field()
    tools: tuple[Tool, ...] = components_field()
    instructions: str = ""
    inputs: Optional[tuple[Property, ...]] = properties_field()
    outputs: Optional[tuple[Property, ...]] = properties_field()
    max_turns: int = 10

    def __post_init__(self):
        super().__post_init__()
        if not isinstance(self.max_turns, int) or self.max_turns <= 0:
            raise ModelError(f"Agent {self.name!r}: max_turns must be positive")

    def inferred_inputs(self):
        return _string_props(templating.extract_placeholders(self.instructions))

    def tool_named(self, name: str) -> Optional[Tool]:
        for t in self.tools:
            if t.name == name:
                return t
        return None


# -- nodes ------------------------------------------------------------------------------

@component_class
class Node(Component):
    inputs: Optional[tuple[Property, ...]] = properties_field()
    outputs: Optional[tuple[Property, ...]] = properties_field()


@component_class
class StartNode(Node):
    def inferred_outputs(self):
        return tuple(self.inputs)


@component_class
class EndNode(Node):
    def __post_init__(self):
        # inputs mirror outputs, so outputs must be settled first
        if self.outputs is None:
            self._set("outputs", ())
        super().__post_init__()

    def inferred_inputs(self):
        return tuple(self.outputs)


@component_class
class LlmNode(Node):
    llm_config: Optional[LlmConfig] = component_field()
    prompt_template: str = ""

    def inferred_inputs(self):
        return _string_props(templating.extract_placeholders(self.prompt_template))

    def inferred_outputs(self):
        # free name, but exactly one string output; this is only the default
        return (Property.of("generated_text", "string"),)


@component_class
class ApiNode(Node):
    url_template: str
    http_method: str = "GET"
    headers: dict = field(default_factory=dict)
    body_template: Optional[str] = None

    def __post_init__(self):
        self._set("headers", dict(self.headers))
        if self.http_method not in HTTP_METHODS:
            raise ModelError(f"ApiNode {self.name!r}: unsupported http_method {self.http_method!r}")
        super().__post_init__()

    def templates(self) -> list[str]:
        parts = [self.url_template, *self.headers.values()]
        if self.body_template is not None:
            parts.append(self.body_template)
        return [p for p in parts if isinstance(p, str)]

    def inferred_inputs(self):
        names: list[str] = []
        for t in self.templates():
            names.extend(n for n in templating.extract_placeholders(t) if n not in names)
        return _string_props(names)

    def inferred_outputs(self):
        return (Property.of("status", "integer"), Property.of("body", "string"))


@component_class
class AgentNode(Node):
    agent: Optional[Agent] = component_field()

    def inferred_inputs(self):
        return tuple(self.agent.inputs) if self.agent else None

    def inferred_outputs(self):
        return tuple(self.agent.outputs) if self.agent else None


@component_class
class FlowNode(Node):
    subflow: Optional["Flow"] = component_field()

    def inferred_inputs(self):
        return tuple(self.subflow.inputs) if self.subflow else None

    def inferred_outputs(self):
        return tuple(self.subflow.outputs) if self.subflow else None


@component_class
class MapNode(Node):
    """Runs ``subflow`` once per element of the array input ``iterated_input``."""

    subflow: Optional["Flow"] = component_field()
    iterated_input: str = ""

    def inferred_inputs(self):
        if self.subflow is None:
            return None
        return tuple(lift_to_array(p) if p.title == self.iterated_input else p
                     for p in self.subflow.inputs)

    def inferred_outputs(self):
        if self.subflow is None:
            return None
        return tuple(lift_to_array(p) for p in self.subflow.outputs)


@component_class
class BranchingNode(Node):
    branch_input: str
    mapping: dict = field(default_factory=dict)

    def __post_init__(self):
        self._set("mapping", {str(k): str(v) for k, v in dict(self.mapping).items()})
        super().__post_init__()

    def inferred_inputs(self):
        return (Property.of(self.branch_input, "string"),)

    def inferred_outputs(self):
        return ()


@component_class
class ToolNode(Node):
    tool: Optional[Tool] = component_field()

    def inferred_inputs(self):
        return tuple(self.tool.inputs) if self.tool else None

    def inferred_outputs(self):
        return tuple(self.tool.outputs) if self.tool else None


@component_class
class InputMessageNode(Node):
    message_template: Optional[str] = None

    def inferred_inputs(self):
        return _string_props(templating.extract_placeholders(self.message_template or ""))

    def inferred_outputs(self):
        return (Property.of("user_input", "string"),)


@component_class
class OutputMessageNode(Node):
    message_template: str = ""

    def inferred_inputs(self):
        return _string_props(templating.extract_placeholders(self.message_template))

    def inferred_outputs(self):
        return ()


# -- edges ------------------------------------------------------------------------------

@component_class
class ControlFlowEdge(Component):
    from_node: Node = required_component_field()
    from_branch: Optional[str] = None
    to_node: Node = required_component_field()

    @property
    def branch(self) -> str:
        return self.from_branch if self.from_branch is not None else DEFAULT_BRANCH


@component_class
class DataFlowEdge(Component):
    source_node: Node = required_component_field()
    source_output: str
    destination_node: Node = required_component_field()
    destination_input: str


# -- flow -------------------------------------------------------------------------------

@component_class
class Flow(Component):
    """Directed, possibly cyclic graph of nodes.

    ``data_flow_connections=None`` selects name-based data binding through a
    shared variable space; a tuple (possibly empty) selects explicit edges.
    """

    inputs: Optional[tuple[Property, ...]] = properties_field()
    outputs: Optional[tuple[Property, ...]] = properties_field()
    nodes: tuple[Node, ...] = components_field()
    start_node: Optional[Node] = component_field()
    control_flow_connections: tuple[ControlFlowEdge, ...] = components_field()
    data_flow_connections: Optional[tuple[DataFlowEdge, ...]] = components_field(default=None)

    def __post_init__(self):
        if self.start_node is None:
            starts = [n for n in self.nodes if isinstance(n, StartNode)]
            if len(starts) == 1:
                self._set("start_node", starts[0])
        super().__post_init__()

    @property
    def name_based(self) -> bool:
        return self.data_flow_connections is None

    @property
    def end_nodes(self) -> list[EndNode]:
        return [n for n in self.nodes if isinstance(n, EndNode)]

    def inferred_inputs(self):
        return tuple(self.start_node.inputs) if isinstance(self.start_node, StartNode) else None

    def inferred_outputs(self):
        merged: dict[str, Property] = {}
        for end in self.end_nodes:
            for p in end.outputs:
                merged.setdefault(p.title, p)
        return tuple(merged.values())


def branches_of(node: Node) -> list[str]:
    if isinstance(node, EndNode):
        return []
    if isinstance(node, BranchingNode):
        names = list(dict.fromkeys(node.mapping.values()))
        if FALLBACK_BRANCH not in names:
            names.append(FALLBACK_BRANCH)
        return names
    return [DEFAULT_BRANCH]


# -- conversation ------------------------------------------------------------------------

@dataclass(frozen=True)
class Message:
    role: str
    content: str
    sender: str = ""
    recipient: str = ""

    def __post_init__(self):
        if self.role not in MESSAGE_ROLES:
            raise ModelError(f"unknown message role {self.role!r}")
        if not self.content and self.role != "tool":
            raise ModelError(f"{self.role} message must have content")

    def to_dict(self) -> dict:
        return {"role": self.role, "content": self.content,
                "sender": self.sender, "recipient": self.recipient}


BUILTIN_TYPES: dict[str, type[Component]] = {
    cls.component_type: cls
    for cls in (
        LlmConfig, VllmConfig, OpenAiCompatibleConfig,
        ServerTool, ClientTool, RemoteTool, MCPTool,
        Agent, Flow,
        StartNode, EndNode, LlmNode, ApiNode, AgentNode, FlowNode, MapNode,
        BranchingNode, ToolNode, InputMessageNode, OutputMessageNode,
        ControlFlowEdge, DataFlowEdge,
    )
}

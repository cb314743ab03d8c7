"""JSON/YAML documents: canonical serialization, reference resolution, plugins.

Every component is written out in full at its first depth-first occurrence
(fields walked in definition order) and as ``"$component_ref:<id>"`` anywhere
after that. Keys are sorted on output, so a reference can textually precede
its declaration; the loader indexes all declarations before resolving any.
"""

from __future__ import annotations

import copy
import json
import threading
import typing
from abc import ABC, abstractmethod
from dataclasses import dataclass, field, fields
from functools import lru_cache
from pathlib import Path
from typing import Any, Iterable, Optional

import yaml

from .errors import (
    DanglingReference,
    DocumentParseError,
    DuplicateComponentId,
    DuplicateDeclaration,
    MalformedComponent,
    MissingVersion,
    ModelError,
    TemplateError,
    TypeConflict,
    UnknownComponentType,
)
from .model import BUILTIN_TYPES, Component, Property, field_kind, walk_components

AGENTSPEC_VERSION = "25.4.1"
REF_PREFIX = "$component_ref:"
FORMATS = ("json", "yaml")


@dataclass(frozen=True)
class ComponentRef:
    target_id: str

    @property
    def text(self) -> str:
        return REF_PREFIX + self.target_id

    @classmethod
    def parse(cls, value: Any) -> Optional["ComponentRef"]:
        if isinstance(value, str) and value.startswith(REF_PREFIX):
            return cls(value[len(REF_PREFIX):])
        return None


@dataclass(eq=False)
class SpecDocument:
    """A root component plus the version tag; the unit of (de)serialization."""

    root: Component
    agentspec_version: str = AGENTSPEC_VERSION
    components_by_id: dict[str, Component] = field(init=False, repr=False)

    def __post_init__(self):
        index: dict[str, Component] = {}
        for c in walk_components(self.root):
            seen = index.get(c.id)
            if seen is not None and seen is not c and seen != c:
                raise DuplicateComponentId(c.id)
            index.setdefault(c.id, c)
        self.components_by_id = index

    def __eq__(self, other):
        if not isinstance(other, SpecDocument):
            return NotImplemented
        return self.agentspec_version == other.agentspec_version and self.root == other.root

    def get(self, component_id: str) -> Component:
        return self.components_by_id[component_id]


# -- plugins ---------------------------------------------------------------------

class SerializationContext:
    """Handed to plugins so nested values follow the declare-once rules."""

    def __init__(self, serializer: "_Serializer"):
        self._serializer = serializer

    def dump(self, value: Any) -> Any:
        return self._serializer.value(value)


class DeserializationContext:
    def __init__(self, loader: "_Loader", component_id: str):
        self._loader = loader
        self._component_id = component_id

    def load_component(self, value: Any) -> Component:
        return self._loader.component(value, self._component_id)

    def load_properties(self, value: Iterable[Any]) -> tuple[Property, ...]:
        return tuple(Property(json_schema=s) for s in value)


class SerializationPlugin(ABC):
    """Adds component types outside the built-in set."""

    @property
    @abstractmethod
    def plugin_name(self) -> str: ...

    @property
    @abstractmethod
    def plugin_version(self) -> str: ...

    @abstractmethod
    def supported_component_types(self) -> list[str]: ...

    @abstractmethod
    def serialize(self, component: Component, context: SerializationContext) -> dict[str, Any]:
        """Return the component's fields; ``component_type`` is added by the caller."""

    @abstractmethod
    def deserialize(self, data: dict[str, Any], context: DeserializationContext) -> Component: ...


class PluginRegistry:
    def __init__(self):
        self._by_type: dict[str, SerializationPlugin] = {}
        self._lock = threading.Lock()

    def register(self, plugin: SerializationPlugin) -> None:
        types = list(plugin.supported_component_types())
        with self._lock:
            for t in types:
                if t in BUILTIN_TYPES:
                    raise TypeConflict(f"plugin {plugin.plugin_name!r} claims built-in type {t!r}")
                if t in self._by_type:
                    owner = self._by_type[t].plugin_name
                    raise TypeConflict(f"type {t!r} already registered by plugin {owner!r}")
            for t in types:
                self._by_type[t] = plugin

    def lookup(self, component_type: str) -> Optional[SerializationPlugin]:
        return self._by_type.get(component_type)

    def __contains__(self, component_type: str) -> bool:
        return component_type in self._by_type


default_registry = PluginRegistry()


def register_plugin(plugin: SerializationPlugin, registry: Optional[PluginRegistry] = None) -> None:
    (registry or default_registry).register(plugin)


# -- serialize ---------------------------------------------------------------------

class _Serializer:
    def __init__(self, plugins: PluginRegistry):
        self.plugins = plugins
        self.declared: set[str] = set()

    def component(self, c: Component) -> Any:
        if c.id in self.declared:
            return REF_PREFIX + c.id
        self.declared.add(c.id)
        if BUILTIN_TYPES.get(c.component_type) is type(c):
            out = {f.name: self.value(getattr(c, f.name)) for f in fields(c)}
        else:
            plugin = self.plugins.lookup(c.component_type)
            if plugin is None:
                raise UnknownComponentType(
                    f"no plugin serializes component type {c.component_type!r}", c.id)
            out = dict(plugin.serialize(c, SerializationContext(self)))
            out.setdefault("id", c.id)
        out["component_type"] = c.component_type
        return out

    def value(self, v: Any) -> Any:
        if isinstance(v, Component):
            return self.component(v)
        if isinstance(v, Property):
            return copy.deepcopy(dict(v.json_schema))
        if isinstance(v, (list, tuple)):
            return [self.value(x) for x in v]
        if isinstance(v, dict):
            return {k: self.value(x) for k, x in v.items()}
        return v


def to_dict(doc: SpecDocument, plugins: Optional[PluginRegistry] = None) -> dict[str, Any]:
    body = _Serializer(plugins or default_registry).component(doc.root)
    return {"agentspec_version": doc.agentspec_version, **body}


class _YamlDumper(yaml.SafeDumper):
    pass


_YAML_LINE_BREAKS = ("\x85", "\u2028", "\u2029")


def _represent_str(dumper: yaml.SafeDumper, value: str):
    # allow_unicode writes these breaks raw and the loader folds them; quote to escape
    if any(ch in value for ch in _YAML_LINE_BREAKS):
        return dumper.represent_scalar("tag:yaml.org,2002:str", value, style='"')
    return dumper.represent_str(value)


_YamlDumper.add_representer(str, _represent_str)


def dumps(data: Any, format: str = "json") -> str:
    if format == "json":
        return json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n"
    if format == "yaml":
        return yaml.dump(data, Dumper=_YamlDumper, sort_keys=True, allow_unicode=True,
                         default_flow_style=False)
    raise ValueError(f"unsupported format {format!r}")


def serialize(doc: SpecDocument | Component, format: str = "json",
              plugins: Optional[PluginRegistry] = None) -> str:
    if isinstance(doc, Component):
        doc = SpecDocument(doc)
    return dumps(to_dict(doc, plugins), format)


# -- deserialize -------------------------------------------------------------------

@lru_cache(maxsize=None)
def _component_field_types(cls: type) -> dict[str, tuple[type, ...]]:
    """Component classes accepted by each component-valued field of ``cls``."""
    from . import model

    hints = typing.get_type_hints(cls, vars(model))
    out: dict[str, tuple[type, ...]] = {}
    for f in fields(cls):
        if field_kind(f) not in ("component", "components"):
            continue
        stack, found = [hints[f.name]], []
        while stack:
            t = stack.pop()
            if isinstance(t, type) and issubclass(t, Component):
                found.append(t)
            else:
                stack.extend(typing.get_args(t))
        out[f.name] = tuple(found) or (Component,)
    return out


class _Loader:
    def __init__(self, raw_index: dict[str, dict], plugins: PluginRegistry):
        self.raw = raw_index
        self.plugins = plugins
        self.built: dict[str, Component] = {}
        self.building: set[str] = set()

    def component(self, value: Any, referrer: str) -> Component:
        ref = ComponentRef.parse(value)
        if ref is not None:
            if ref.target_id not in self.raw:
                raise DanglingReference(
                    f"reference to undeclared component {ref.target_id!r}", referrer)
            return self.build(ref.target_id)
        if isinstance(value, dict) and "component_type" in value:
            return self.build(value["id"])
        raise MalformedComponent(f"expected a component or reference, got {value!r}", referrer)

    def build(self, cid: str) -> Component:
        if cid in self.built:
            return self.built[cid]
        if cid in self.building:
            raise MalformedComponent(f"component {cid!r} contains itself", cid)
        self.building.add(cid)
        try:
            c = self._construct(self.raw[cid])
        finally:
            self.building.discard(cid)
        self.built[cid] = c
        return c

    def _construct(self, raw: dict) -> Component:
        ctype, cid = raw["component_type"], raw["id"]
        cls = BUILTIN_TYPES.get(ctype)
        if cls is None:
            plugin = self.plugins.lookup(ctype)
            if plugin is None:
                raise UnknownComponentType(f"unknown component type {ctype!r}", cid)
            return plugin.deserialize(copy.deepcopy(raw), DeserializationContext(self, cid))

        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(raw) - set(known) - {"component_type"})
        if unknown:
            raise MalformedComponent(f"{ctype} has unknown fields {unknown}", cid)
        accepted = _component_field_types(cls)
        kwargs: dict[str, Any] = {}
        for name, value in raw.items():
            if name == "component_type":
                continue
            kind = field_kind(known[name])
            if value is None or kind == "value":
                kwargs[name] = copy.deepcopy(value)
            elif kind == "component":
                kwargs[name] = self._typed(self.component(value, cid), accepted[name], cid, name)
            elif kind == "components":
                if not isinstance(value, list):
                    raise MalformedComponent(f"{ctype}.{name} must be a list", cid)
                kwargs[name] = tuple(self._typed(self.component(v, cid), accepted[name], cid, name)
                                     for v in value)
            elif kind == "properties":
                if not isinstance(value, list) or not all(isinstance(s, dict) for s in value):
                    raise MalformedComponent(f"{ctype}.{name} must be a list of JSON schemas", cid)
                kwargs[name] = tuple(Property(json_schema=s) for s in value)
        try:
            return cls(**kwargs)
        except (ModelError, TemplateError, TypeError) as exc:
            raise MalformedComponent(f"cannot build {ctype}: {exc}", cid) from exc

    @staticmethod
    def _typed(c: Component, accepted: tuple[type, ...], cid: str, name: str) -> Component:
        if not isinstance(c, accepted):
            want = "/".join(t.__name__ for t in accepted)
            raise MalformedComponent(f"field {name!r} expects {want}, got {c.component_type}", cid)
        return c


def _index_declarations(value: Any, out: dict[str, dict], parent: str = "") -> None:
    if isinstance(value, list):
        for v in value:
            _index_declarations(v, out, parent)
        return
    if not isinstance(value, dict):
        return
    if "component_type" in value:
        cid = value.get("id")
        if not isinstance(cid, str) or not cid:
            raise MalformedComponent(f"{value['component_type']} declaration has no id", parent)
        if not isinstance(value["component_type"], str):
            raise MalformedComponent("component_type must be a string", cid)
        if cid in out:
            raise DuplicateDeclaration(f"component {cid!r} is declared more than once", cid)
        out[cid] = value
        parent = cid
    for key, v in value.items():
        if key != "metadata":
            _index_declarations(v, out, parent)


def parse_text(text: str, format: str = "json") -> Any:
    try:
        if format == "json":
            return json.loads(text)
        if format == "yaml":
            return yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise DocumentParseError(f"invalid {format}: {exc}") from exc
    raise ValueError(f"unsupported format {format!r}")


def from_dict(data: Any, plugins: Optional[PluginRegistry] = None) -> SpecDocument:
    if not isinstance(data, dict):
        raise DocumentParseError("document must be an object at the top level")
    version = data.get("agentspec_version")
    if not isinstance(version, str) or not version:
        raise MissingVersion("top-level agentspec_version is missing")
    body = {k: v for k, v in data.items() if k != "agentspec_version"}
    if "component_type" not in body:
        raise MalformedComponent("document has no root component")
    raw_index: dict[str, dict] = {}
    _index_declarations(body, raw_index)
    root = _Loader(raw_index, plugins or default_registry).build(body["id"])
    try:
        return SpecDocument(root, version)
    except DuplicateComponentId as exc:
        raise DuplicateDeclaration(str(exc), exc.component_id) from exc


def deserialize(text: str, format: str = "json",
                plugins: Optional[PluginRegistry] = None) -> SpecDocument:
    return from_dict(parse_text(text, format), plugins)


def convert(text: str, from_format: str, to_format: str,
            plugins: Optional[PluginRegistry] = None) -> str:
    return serialize(deserialize(text, from_format, plugins), to_format, plugins)


def format_for_path(path: str | Path) -> str:
    return "yaml" if Path(path).suffix.lower() in (".yaml", ".yml") else "json"


def load_file(path: str | Path, plugins: Optional[PluginRegistry] = None) -> SpecDocument:
    return deserialize(Path(path).read_text(encoding="utf-8"), format_for_path(path), plugins)


def save_file(doc: SpecDocument | Component, path: str | Path,
              plugins: Optional[PluginRegistry] = None) -> None:
    Path(path).write_text(serialize(doc, format_for_path(path), plugins), encoding="utf-8")


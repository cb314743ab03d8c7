"""Placeholder templates: ``{{name}}`` slots inside configuration strings.

Placeholders are the only templating construct. There is no escape syntax, so a
literal ``{{`` cannot appear in a template.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Any, Iterator, Mapping

from .errors import InvalidName, UnboundPlaceholder, UnclosedPlaceholder

_NAME = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")


def _scan(raw: str) -> Iterator[tuple[int, int, str]]:
    """Yield ``(start, end, name)`` for every placeholder in ``raw``."""
    pos = 0
    while True:
        start = raw.find("{{", pos)
        if start < 0:
            return
        end = raw.find("}}", start + 2)
        if end < 0:
            raise UnclosedPlaceholder(f"'{{{{' at offset {start} is never closed")
        name = raw[start + 2:end].strip()
        if not _NAME.match(name):
            raise InvalidName(f"invalid placeholder name {name!r} at offset {start}")
        yield start, end + 2, name
        pos = end + 2


def extract_placeholders(raw: str) -> list[str]:
    """Return placeholder names in order of first occurrence, without duplicates."""
    names: list[str] = []
    for _, _, name in _scan(raw):
        if name not in names:
            names.append(name)
    return names


def render_value(value: Any) -> str:
    if isinstance(value, str):
        return value
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def render(raw: str, bindings: Mapping[str, Any]) -> str:
    """Substitute every placeholder in ``raw`` with its bound value.

    Strings are inserted verbatim; any other value is inserted as compact,
    key-sorted JSON.
    """
    out: list[str] = []
    pos = 0
    for start, end, name in _scan(raw):
        if name not in bindings:
            raise UnboundPlaceholder(name)
        out.append(raw[pos:start])
        out.append(render_value(bindings[name]))
        pos = end
    out.append(raw[pos:])
    return "".join(out)


@dataclass(frozen=True)
class Template:
    raw: str
    placeholders: tuple[str, ...] = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "placeholders", tuple(extract_placeholders(self.raw)))

    def render(self, bindings: Mapping[str, Any]) -> str:
        return render(self.raw, bindings)

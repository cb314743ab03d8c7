"""Command-line entry point: ``agentspec <command> ...``.

Exit codes: 0 success, 1 validation errors, 2 I/O or parse failure,
3 suspended run (non-interactive), 4 runtime failure.
"""

from __future__ import annotations

import argparse
import importlib
import json
import sys
from pathlib import Path
from typing import Any, Optional, Sequence, TextIO

from .backends import Backends, HttpLlm, MockLlm, MockScript, ToolRegistry
from .engine import (
    AwaitingUserInput,
    ClientToolResult,
    ExecutionSession,
    Finished,
    UserMessage,
)
from .errors import AgentSpecError, CaseLoadError, DocumentError, InvalidDocument, ToolOutputSchemaMismatch
from .harness import evaluate_dataset, load_records, run_suite
from .model import Component, Flow, Property, walk_components
from .serialization import SpecDocument, deserialize, format_for_path, serialize
from .validation import check_text, has_errors

EXIT_OK, EXIT_INVALID, EXIT_IO, EXIT_SUSPENDED, EXIT_RUNTIME = 0, 1, 2, 3, 4

DATA_DIR = Path(__file__).parent / "data"


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _read(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror or exc}", EXIT_IO) from exc


def _load(path: str) -> SpecDocument:
    text = _read(path)
    try:
        return deserialize(text, format_for_path(path))
    except DocumentError as exc:
        raise CliError(f"{path}: {exc.code}: {exc}", EXIT_IO) from exc


def _compact(value: Any) -> str:
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


# -- validate -------------------------------------------------------------------------

def cmd_validate(args, out: TextIO) -> int:
    text = _read(args.file)
    doc, diagnostics = check_text(text, format_for_path(args.file))
    for d in diagnostics:
        print(d.render(), file=out)
    if doc is None and any(d.code == "PARSE_ERROR" for d in diagnostics):
        return EXIT_IO
    if has_errors(diagnostics):
        return EXIT_INVALID
    if not diagnostics:
        print("ok", file=out)
    return EXIT_OK


# -- inspect ----------------------------------------------------------------------------

def _signature(props: Sequence[Property]) -> str:
    parts = []
    for p in props:
        kind = p.type
        items = p.json_schema.get("items")
        if kind == "array" and isinstance(items, dict) and "type" in items:
            kind = f"array<{items['type']}>"
        parts.append(f"{p.title}:{kind}" + ("=" + _compact(p.default) if p.has_default else ""))
    return ", ".join(parts) or "-"


def _io(c: Component) -> tuple[Sequence[Property], Sequence[Property]]:
    return getattr(c, "inputs", None) or (), getattr(c, "outputs", None) or ()


def inspect_table(doc: SpecDocument) -> str:
    rows = [("ID", "TYPE", "NAME", "INPUTS", "OUTPUTS")]
    for c in walk_components(doc.root):
        ins, outs = _io(c)
        rows.append((c.id, c.component_type, c.name, _signature(ins), _signature(outs)))
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows]
    return f"agentspec_version {doc.agentspec_version}\n" + "\n".join(lines) + "\n"


def _q(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'


def inspect_dot(doc: SpecDocument) -> str:
    """Graphviz digraph: control edges solid, data edges dashed."""
    flows = [c for c in walk_components(doc.root) if isinstance(c, Flow)]
    lines = ["digraph agentspec {", "  compound=true;", "  node [shape=box];"]
    for i, flow in enumerate(flows):
        lines.append(f"  subgraph cluster_{i} {{")
        lines.append(f"    label={_q(flow.name)};")
        for node in flow.nodes:
            lines.append(f"    {_q(flow.id + '/' + node.id)} [label={_q(f'{node.name} ({node.component_type})')}];")
        for edge in flow.control_flow_connections:
            label = f" [label={_q(edge.branch)}]" if edge.from_branch is not None else ""
            lines.append(f"    {_q(flow.id + '/' + edge.from_node.id)} -> {_q(flow.id + '/' + edge.to_node.id)}{label};")
        for edge in flow.data_flow_connections or ():
            label = f"{edge.source_output} -> {edge.destination_input}"
            lines.append(f"    {_q(flow.id + '/' + edge.source_node.id)} -> "
                         f"{_q(flow.id + '/' + edge.destination_node.id)} [style=dashed, label={_q(label)}];")
        lines.append("  }")
    lines.append("}")
    return "\n".join(lines) + "\n"


def cmd_inspect(args, out: TextIO) -> int:
    doc = _load(args.file)
    out.write(inspect_dot(doc) if args.dot else inspect_table(doc))
    return EXIT_OK


# -- convert ------------------------------------------------------------------------------

def cmd_convert(args, out: TextIO) -> int:
    out.write(serialize(_load(args.file), args.to))
    return EXIT_OK


# -- run --------------------------------------------------------------------------------

def parse_input(item: str) -> tuple[str, Any]:
    """``k=v``; v is taken as JSON when it parses, else as a plain string."""
    key, sep, raw = item.partition("=")
    if not sep or not key:
        raise CliError(f"--input expects key=value, got {item!r}", EXIT_IO)
    try:
        return key, json.loads(raw)
    except json.JSONDecodeError:
        return key, raw


def load_tools(module_name: Optional[str]) -> ToolRegistry:
    """Import ``module_name`` and take its ``TOOLS`` registry or call its
    ``register(registry)`` hook."""
    registry = ToolRegistry()
    if not module_name:
        return registry
    try:
        module = importlib.import_module(module_name)
    except ImportError as exc:
        raise CliError(f"cannot import tool module {module_name!r}: {exc}", EXIT_IO) from exc
    if isinstance(getattr(module, "TOOLS", None), ToolRegistry):
        return module.TOOLS
    if callable(getattr(module, "register", None)):
        module.register(registry)
        return registry
    raise CliError(f"{module_name}: define TOOLS (a ToolRegistry) or register(registry)", EXIT_IO)


def _backends(args) -> Backends:
    if args.script:
        try:
            llm: Any = MockLlm(MockScript.from_file(args.script))
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise CliError(f"cannot load mock script {args.script}: {exc}", EXIT_IO) from exc
    else:
        llm = HttpLlm()
    return Backends(llm, load_tools(getattr(args, "tools", None)))


def _chat(session: ExecutionSession, status, inp: TextIO, out: TextIO):
    """Operator loop: answer suspensions from ``inp`` until the run finishes or
    input ends."""
    while not isinstance(status, Finished):
        if isinstance(status, AwaitingUserInput):
            print(f"agent> {status.prompt}" if status.prompt else "agent> (waiting for input)", file=out)
            out.write("you> ")
            out.flush()
            line = inp.readline()
            if not line:
                return status
            status = session.resume(UserMessage(line.rstrip("\n")))
        else:
            print(f"tool call {status.call_id}: {status.tool_name} {_compact(status.args)}", file=out)
            out.write("result (JSON object)> ")
            out.flush()
            line = inp.readline()
            if not line:
                return status
            try:
                outputs = json.loads(line)
            except json.JSONDecodeError:
                print("not JSON, try again", file=out)
                continue
            try:
                status = session.resume(ClientToolResult(status.call_id, outputs))
            except ToolOutputSchemaMismatch as exc:
                print(f"rejected: {exc}", file=out)
    return status


def cmd_run(args, out: TextIO, inp: Optional[TextIO] = None) -> int:
    inp = inp or sys.stdin
    doc = _load(args.file)
    inputs = dict(parse_input(item) for item in args.input)
    session = ExecutionSession(doc, _backends(args), step_limit=args.step_limit)
    try:
        status = session.start(args.entry, inputs)
        if args.interactive:
            status = _chat(session, status, inp, out)
    except InvalidDocument as exc:
        for d in exc.diagnostics:
            print(d.render(), file=sys.stderr)
        return EXIT_INVALID
    except AgentSpecError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    finally:
        if args.trace:
            session.write_trace(args.trace)
    if isinstance(status, Finished):
        print(_compact(status.outputs), file=out)
        return EXIT_OK
    print(_compact(status.to_dict()), file=out)
    return EXIT_SUSPENDED


# -- conformance / bench -------------------------------------------------------------------

def cmd_conformance(args, out: TextIO) -> int:
    root = Path(args.dir) if args.dir else DATA_DIR / "conformance"
    if not root.is_dir():
        raise CliError(f"no such directory: {root}", EXIT_IO)
    results = run_suite(root)
    if not results:
        raise CliError(f"no conformance cases under {root}", EXIT_IO)
    for r in results:
        print(r.summary(), file=out)
    passed = sum(r.passed for r in results)
    print(f"{passed}/{len(results)} passed", file=out)
    return EXIT_OK if passed == len(results) else EXIT_RUNTIME


def cmd_bench(args, out: TextIO) -> int:
    doc = _load(args.file)
    try:
        records = load_records(args.dataset)
    except (OSError, CaseLoadError) as exc:
        raise CliError(f"cannot load dataset {args.dataset}: {exc}", EXIT_IO) from exc
    try:
        report = evaluate_dataset(doc, args.entry, records, args.metric, _backends(args),
                                  output_name=args.output_name, setup=args.setup or doc.root.name)
    except AgentSpecError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if args.output:
        Path(args.output).write_text(report.to_json(), encoding="utf-8")
    out.write(report.table())
    return EXIT_OK


# -- dispatch -------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="agentspec", description="Validate, convert and run agent and flow documents.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="run static checks")
    p.add_argument("file")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("inspect", help="list components or draw the flow graph")
    p.add_argument("file")
    p.add_argument("--dot", action="store_true", help="emit a Graphviz digraph")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("convert", help="re-serialize to JSON or YAML on stdout")
    p.add_argument("file")
    p.add_argument("--to", choices=("json", "yaml"), required=True)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("run", help="execute a flow or agent")
    p.add_argument("file")
    p.add_argument("--entry", help="component id to run (default: document root)")
    p.add_argument("--input", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--script", help="mock LLM script (JSON); omit to call the configured endpoint")
    p.add_argument("--tools", help="python module providing ServerTool implementations")
    p.add_argument("--interactive", action="store_true", help="answer suspensions from stdin")
    p.add_argument("--trace", help="write the execution trace (JSON lines) here")
    p.add_argument("--step-limit", type=int, default=1000)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("conformance", help="run a conformance-case directory")
    p.add_argument("dir", nargs="?", help="case directory (default: bundled corpus)")
    p.set_defaults(func=cmd_conformance)

    p = sub.add_parser("bench", help="evaluate a dataset and print a report table")
    p.add_argument("file")
    p.add_argument("--dataset", required=True, help="JSON lines of {id, inputs, expected}")
    p.add_argument("--entry")
    p.add_argument("--metric", choices=("exact_match", "token_f1"), default="token_f1")
    p.add_argument("--script")
    p.add_argument("--tools")
    p.add_argument("--output-name", help="output holding the prediction (if several)")
    p.add_argument("--setup", help="label for the Agent Setup column")
    p.add_argument("--output", help="write the JSON report here")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: Optional[Sequence[str]] = None, out: TextIO = None) -> int:
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    try:
        return args.func(args, out)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())

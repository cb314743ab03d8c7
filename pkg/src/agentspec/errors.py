"""Exception hierarchy shared by every layer of the package."""


class AgentSpecError(Exception):
    """Base class for all errors raised by this package."""


# -- model ------------------------------------------------------------------

class ModelError(AgentSpecError):
    pass


class MissingTitle(ModelError):
    pass


class InvalidProperty(ModelError):
    pass


class DuplicateComponentId(ModelError):
    def __init__(self, component_id: str):
        super().__init__(f"component id {component_id!r} is used by two distinct components")
        self.component_id = component_id


# -- templating -------------------------------------------------------------

class TemplateError(AgentSpecError):
    pass


class UnclosedPlaceholder(TemplateError):
    pass


class InvalidName(TemplateError):
    pass


class UnboundPlaceholder(TemplateError):
    def __init__(self, name: str):
        super().__init__(f"placeholder {{{{{name}}}}} has no binding")
        self.name = name


# -- documents --------------------------------------------------------------

class DocumentError(AgentSpecError):
    """Raised while turning text into a SpecDocument (or back)."""

    code = "DOCUMENT_ERROR"

    def __init__(self, message: str, component_id: str = ""):
        super().__init__(message)
        self.component_id = component_id


class DocumentParseError(DocumentError):
    code = "PARSE_ERROR"


class MissingVersion(DocumentError):
    code = "MISSING_VERSION"


class UnknownComponentType(DocumentError):
    code = "UNKNOWN_COMPONENT_TYPE"


class DanglingReference(DocumentError):
    code = "DANGLING_REFERENCE"


class DuplicateDeclaration(DocumentError):
    code = "DUPLICATE_DECLARATION"


class MalformedComponent(DocumentError):
    code = "MALFORMED_COMPONENT"


class TypeConflict(AgentSpecError):
    pass


# -- backends ---------------------------------------------------------------

class BackendError(AgentSpecError):
    pass


class ScriptExhausted(BackendError):
    pass


class HttpError(BackendError):
    def __init__(self, status: int | None, message: str = ""):
        super().__init__(message or f"HTTP error {status}")
        self.status = status


class MalformedModelOutput(BackendError):
    pass


class ToolNotFound(BackendError):
    pass


class ArgsSchemaMismatch(BackendError):
    pass


class OutputSchemaMismatch(BackendError):
    pass


class ToolRaised(BackendError):
    def __init__(self, tool_name: str, cause: BaseException):
        super().__init__(f"tool {tool_name!r} raised {type(cause).__name__}: {cause}")
        self.tool_name = tool_name
        self.cause = cause


# -- execution --------------------------------------------------------------

class ExecutionError(AgentSpecError):
    pass


class StepLimitExceeded(ExecutionError):
    pass


class UnboundInput(ExecutionError):
    def __init__(self, node_id: str, name: str):
        super().__init__(f"input {name!r} of node {node_id!r} has no value, edge or default")
        self.node_id = node_id
        self.name = name


class UnsupportedComponent(ExecutionError):
    pass


class NodeExecutionFailed(ExecutionError):
    def __init__(self, node_id: str, cause: BaseException):
        super().__init__(f"node {node_id!r} failed: {type(cause).__name__}: {cause}")
        self.node_id = node_id
        self.cause = cause


class MaxTurnsExceeded(ExecutionError):
    pass


class FinalOutputsSchemaMismatch(ExecutionError):
    pass


class NotSuspended(ExecutionError):
    pass


class PayloadKindMismatch(ExecutionError):
    pass


class CallIdMismatch(ExecutionError):
    pass


class ToolOutputSchemaMismatch(ExecutionError):
    pass


# -- harness ----------------------------------------------------------------

class CaseLoadError(AgentSpecError):
    pass


class EmptyInput(AgentSpecError):
    pass


class InvalidDocument(ExecutionError):
    def __init__(self, diagnostics):
        lines = "; ".join(d.render() for d in diagnostics)
        super().__init__(f"document has validation errors: {lines}")
        self.diagnostics = list(diagnostics)


class InvalidInputs(ExecutionError):
    pass

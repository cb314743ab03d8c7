"""Parse, validate, serialize and execute declarative agent and flow documents."""

from .backends import (
    Backends,
    FinalOutputs,
    HttpLlm,
    MockLlm,
    MockRule,
    MockScript,
    Text,
    ToolCall,
    ToolRegistry,
    parse_structured_response,
)
from .engine import (
    AwaitingClientTool,
    AwaitingUserInput,
    ClientToolResult,
    ExecutionSession,
    Finished,
    TraceEvent,
    UserMessage,
    compile_name_based,
    resume_run,
    start_run,
)
from .errors import *  # noqa: F401,F403
from .harness import (
    ConformanceCase,
    EvalReport,
    evaluate_dataset,
    exact_match,
    latency_stats,
    run_conformance_case,
    run_suite,
    token_f1,
)
from .model import (
    Agent,
    AgentNode,
    ApiNode,
    BranchingNode,
    ClientTool,
    Component,
    ControlFlowEdge,
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
    OpenAiCompatibleConfig,
    OutputMessageNode,
    Property,
    RemoteTool,
    ServerTool,
    StartNode,
    Tool,
    ToolNode,
    VllmConfig,
    branches_of,
)
from .serialization import (
    AGENTSPEC_VERSION,
    PluginRegistry,
    SerializationPlugin,
    SpecDocument,
    deserialize,
    load_file,
    register_plugin,
    save_file,
    serialize,
)
from .templating import extract_placeholders, render
from .validation import Diagnostic, validate_document

__version__ = "0.1.0"

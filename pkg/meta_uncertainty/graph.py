"""LangGraph workflow definition."""
import logging
from typing import Any, Callable, Dict, List, Optional, Sequence

from langgraph.graph import END, StateGraph

from .clients.artifact_store import ArtifactStore
from .config import Config
from .debug_logger import DebugLogger
from .errors import InputError
from .nodes import (
    abstention_analyzer,
    dataset_loader,
    evaluator,
    explainer,
    kb_builder,
    metafeature_extractor,
    policy_sweep,
    report_generator,
    synthetic_generator,
    trainer,
    uncertainty_estimator,
)
from .state import PipelineState

logger = logging.getLogger(__name__)

# Pipeline order of the `run` command
STAGES = ["load_datasets", "metafeatures", "synth", "kb", "train", "estimate", "eval", "abstain", "explain", "report"]

NODES: Dict[str, Callable[[PipelineState, Config], Dict[str, Any]]] = {
    "load_datasets": dataset_loader,
    "metafeatures": metafeature_extractor,
    "synth": synthetic_generator,
    "kb": kb_builder,
    "train": trainer,
    "estimate": uncertainty_estimator,
    "eval": evaluator,
    "abstain": abstention_analyzer,
    "explain": explainer,
    "report": report_generator,
    "sweep": policy_sweep,
}

# Stages each command runs
COMMANDS: Dict[str, List[str]] = {
    "run": STAGES,
    **{name: ["load_datasets", name] for name in NODES if name != "load_datasets"},
}


def _bind(node, config: Config):
    return lambda state: node(state, config)


def _continue_or_end(next_stage: str):
    def route(state: PipelineState) -> str:
        return END if state.get('workflow_status') == 'error' else next_stage

    return route


def create_pipeline_graph(config: Config, stages: Sequence[str] = STAGES):
    """Create the pipeline workflow graph.

    Args:
        config: Configuration object
        stages: Node names in execution order

    Returns:
        Compiled StateGraph
    """
    unknown = [s for s in stages if s not in NODES]
    if unknown or not stages:
        raise InputError(f"Unknown or empty stage list: {unknown or stages}")

    workflow = StateGraph(PipelineState)
    for name in stages:
        workflow.add_node(name, _bind(NODES[name], config))

    workflow.set_entry_point(stages[0])
    for current, following in zip(stages, stages[1:]):
        workflow.add_conditional_edges(current, _continue_or_end(following), {following: following, END: END})
    workflow.add_edge(stages[-1], END)

    return workflow.compile()


def run_pipeline(
    config: Config,
    command: str = "run",
    stages: Optional[Sequence[str]] = None,
    verbose: bool = False,
    debug: bool = False,
) -> Dict[str, Any]:
    """Run one command of the pipeline.

    Args:
        config: Configuration object
        command: CLI command name; names the manifest
        stages: Explicit stage list (defaults to the command's stages)
        verbose: Enable verbose output
        debug: Enable debug mode

    Returns:
        Final state dictionary
    """
    stages = list(stages or COMMANDS[command])
    store = ArtifactStore(config.out_dir)

    initial_state: PipelineState = {
        'command': command,
        'stages': stages,
        'verbose': verbose,
        'debug': debug,
        'datasets': None,
        'kb_sources': None,
        'input_files': None,
        'workflow_status': 'initialized',
        'error_message': None,
        'exit_code': 0,
        '_debug_logger': None,
        '_store': store,
    }

    if debug or config.run.debug.enabled:
        initial_state['_debug_logger'] = DebugLogger(config.debug, verbose)

    graph = create_pipeline_graph(config, stages)

    print(f"Starting '{command}'...")
    print(f"   Stages: {' -> '.join(stages)}")
    print(f"   Seed: {config.seed}")
    print(f"   Output: {config.out_dir}")
    print()

    final_state = graph.invoke(initial_state)

    if final_state.get('workflow_status') != 'error':
        inputs = list(final_state.get('input_files') or []) + list(store.read)
        store.write_manifest(command, config.seed, inputs=inputs)
    else:
        logger.error(f"'{command}' stopped: {final_state.get('error_message')}")

    return final_state

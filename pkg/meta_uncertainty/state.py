"""State definition for the uncertainty pipeline workflow."""
from typing import Any, Dict, List, Optional, TypedDict


class PipelineState(TypedDict, total=False):
    """State passed between pipeline nodes."""

    # Invocation
    command: str
    stages: List[str]
    verbose: Optional[bool]
    debug: Optional[bool]

    # Inputs
    datasets: Optional[List[Any]]
    kb_sources: Optional[List[Any]]
    input_files: Optional[List[str]]

    # Stage outputs
    metafeatures: Optional[Dict[str, Any]]
    synthetic: Optional[List[Any]]
    kb: Optional[Any]
    runs: Optional[Dict[str, Any]]
    models: Optional[Dict[str, Any]]
    estimates: Optional[Dict[str, Any]]
    reports: Optional[Dict[str, Any]]
    abstention: Optional[Dict[str, Any]]
    attributions: Optional[Dict[str, Any]]
    sweeps: Optional[Dict[str, Any]]

    # Final report
    final_report: Optional[str]

    # Workflow metadata
    workflow_status: Optional[str]
    error_message: Optional[str]
    exit_code: Optional[int]

    # Internal
    _debug_logger: Optional[Any]
    _store: Optional[Any]

"""Helpers shared by the pipeline nodes."""
from typing import Any, Dict, List

from ..clients.artifact_store import ArtifactStore
from ..config import Config
from ..estimator import FuzzyClusterModel, NestedCVResult
from ..state import PipelineState


def run_key(dataset_id: str, model_kind: str) -> str:
    return f"{dataset_id}_{model_kind}"


def store_for(state: PipelineState, config: Config) -> ArtifactStore:
    store = state.get('_store')
    if store is None:
        store = ArtifactStore(config.out_dir)
    return store


def targets(state: PipelineState) -> List[Any]:
    return list(state.get('datasets') or [])


def node_failure(state: PipelineState, stage: str, error: Exception) -> Dict[str, Any]:
    """State update for a node that could not finish."""
    debug_logger = state.get('_debug_logger')
    if debug_logger:
        debug_logger.log_error(error, stage)
    print(f"{stage} failed: {error}")
    return {
        **state,
        'workflow_status': 'error',
        'error_message': f"{stage}: {error}",
        'exit_code': getattr(error, 'exit_code', 1),
    }


def load_run(state: PipelineState, store: ArtifactStore, dataset_id: str, model_kind: str) -> NestedCVResult:
    """A nested-CV result from state, else from its results table."""
    key = run_key(dataset_id, model_kind)
    runs = state.get('runs') or {}
    if key in runs:
        return runs[key]
    return NestedCVResult.from_frame(store.read_csv(f"results/{key}.csv"), dataset_id, model_kind)


def load_model(state: PipelineState, store: ArtifactStore, key: str) -> FuzzyClusterModel:
    models = state.get('models') or {}
    if key in models:
        return models[key]
    return FuzzyClusterModel.from_json(store.read_text(f"models/{key}.json"))

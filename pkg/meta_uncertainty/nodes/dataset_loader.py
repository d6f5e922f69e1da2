"""Node for loading the configured datasets."""
from typing import Any, Dict

from ..config import Config
from ..core import DatasetSchema, load_dataset
from ..debug_logger import debug_stage
from ..errors import InputError
from ..state import PipelineState
from .common import node_failure


@debug_stage("Dataset Loader")
def dataset_loader(state: PipelineState, config: Config) -> Dict[str, Any]:
    """Read every dataset listed under ``paths.datasets``.

    Args:
        state: Current workflow state
        config: Configuration object

    Returns:
        Updated state with target datasets and knowledge-base sources
    """
    debug_logger = state.get('_debug_logger')
    entries = config.datasets
    print(f"Loading {len(entries)} dataset(s)...")

    try:
        if not entries:
            raise InputError("No datasets configured under paths.datasets")

        targets, sources, input_files = [], [], []
        for entry in entries:
            schema = DatasetSchema.from_json(entry.resolved_schema)
            ds = load_dataset(
                entry.path,
                schema,
                missing_policy=config.run.missing_policy,
                dataset_id=entry.dataset_id,
                provenance=entry.provenance,
            )
            (targets if entry.role == 'target' else sources).append(ds)
            input_files.extend([entry.path, str(entry.resolved_schema)])
            print(f"   {ds.id}: {ds.n_instances} instances, {ds.n_features} features, {ds.n_classes} classes ({entry.role})")

        if debug_logger:
            debug_logger.log_data("Datasets", {
                "Targets": [ds.id for ds in targets],
                "KB Sources": [ds.id for ds in sources],
            })

        if config.config_path:
            input_files.append(config.config_path)
        return {
            **state,
            'datasets': targets,
            'kb_sources': sources,
            'input_files': input_files,
            'workflow_status': 'datasets_loaded',
        }
    except Exception as e:
        return node_failure(state, "Dataset Loader", e)

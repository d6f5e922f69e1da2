"""Node for generating synthetic knowledge-base datasets."""
from typing import Any, Dict

from ..config import Config
from ..core import derive_seed
from ..debug_logger import debug_stage
from ..state import PipelineState
from ..synthgen import generate_grid
from .common import node_failure, store_for


@debug_stage("Synthetic Generator")
def synthetic_generator(state: PipelineState, config: Config) -> Dict[str, Any]:
    """Generate the complexity grid for every real knowledge-base source.

    Args:
        state: Current workflow state
        config: Configuration object

    Returns:
        Updated state with the synthetic datasets
    """
    debug_logger = state.get('_debug_logger')
    store = store_for(state, config)
    settings = config.run.synth

    if not settings.enabled:
        print("Synthetic generation disabled; skipping")
        return {**state, 'synthetic': [], 'workflow_status': 'synthetic_skipped'}

    templates = [ds for ds in state.get('kb_sources') or [] if ds.provenance == 'real']
    print(f"Generating synthetic datasets from {len(templates)} template(s)...")

    try:
        synthetic = []
        for template in templates:
            grid = generate_grid(
                template,
                seed=derive_seed(config.seed, template.id, "synth"),
                ga=config.run.ga_settings(),
                levels=tuple(settings.levels),
            )
            for ds in grid:
                store.write_dataset(f"synthetic/{ds.id}.csv", ds)
            infeasible = sum(bool(ds.metadata.get('infeasible')) for ds in grid)
            print(f"   {template.id}: {len(grid)} datasets ({infeasible} flagged infeasible)")
            if debug_logger:
                debug_logger.log_data(f"Synthetic grid ({template.id})", {
                    ds.id: f"f1={ds.metadata['achieved_f1']:.3f} n1={ds.metadata['achieved_n1']:.3f}" for ds in grid
                })
            synthetic.extend(grid)

        return {**state, 'synthetic': synthetic, 'workflow_status': 'synthetic_generated'}
    except Exception as e:
        return node_failure(state, "Synthetic Generator", e)

"""Node for Shapley explanations of the most uncertain instances."""
from typing import Any, Dict

import numpy as np

from ..config import Config
from ..core import derive_seed
from ..debug_logger import debug_stage
from ..explain import force_plot_data, narrate, shapley
from ..knowledgebase import KnowledgeBase
from ..state import PipelineState
from .common import load_model, load_run, node_failure, run_key, store_for, targets


def load_background(state: PipelineState, store, key: str) -> KnowledgeBase:
    runs = state.get('runs') or {}
    if key in runs and runs[key].background is not None:
        return runs[key].background
    location = f"models/{key}.background.jsonl"
    return KnowledgeBase.from_jsonl(store.read_text(location), source=str(store.path(location)))


@debug_stage("Explainer")
def explainer(state: PipelineState, config: Config) -> Dict[str, Any]:
    """Attribute the estimates of the ``explain_top`` most uncertain instances per run.

    Args:
        state: Current workflow state
        config: Configuration object

    Returns:
        Updated state with force-plot data per run
    """
    debug_logger = state.get('_debug_logger')
    store = store_for(state, config)
    top = config.run.explain_top
    print(f"Explaining the {top} most uncertain instance(s) per run...")

    try:
        attributions = {}
        for ds in targets(state):
            for spec in config.run.learners.specs():
                key = run_key(ds.id, spec.kind.value)
                result = load_run(state, store, ds.id, spec.kind.value)
                model = load_model(state, store, key)
                background = load_background(state, store, key)

                order = np.argsort(-result.uncertainty, kind="stable")[:top]
                plots, narratives = [], []
                for i in order:
                    attr = shapley(model, result.meta[i], background, config.run.explain, derive_seed(config.seed, key, "shapley"))
                    plot = force_plot_data(attr, config.run.explain.min_magnitude)
                    plots.append({"instance": int(i), "misclassified": int(result.misclassified[i]), **plot})
                    narratives.append(f"Instance {int(i)}\n{narrate(attr, config.run.explain.min_magnitude)}")

                store.write_json(f"explanations/{key}.json", {"dataset_id": ds.id, "model_kind": spec.kind.value, "instances": plots})
                store.write_text(f"explanations/{key}.txt", "\n\n".join(narratives) + "\n")
                attributions[key] = plots
                print(f"   {key}: {len(plots)} explanation(s)")
                if debug_logger and plots:
                    debug_logger.log_detail(f"Top segment ({key})", plots[0]["segments"][:1])

        return {**state, 'attributions': attributions, 'workflow_status': 'explained'}
    except Exception as e:
        return node_failure(state, "Explainer", e)

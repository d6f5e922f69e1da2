"""Node for nested cross-validated training of the uncertainty estimators."""
from typing import Any, Dict

from ..config import Config
from ..core import derive_seed
from ..debug_logger import debug_stage
from ..errors import MissingArtifactError
from ..estimator import nested_cv_run
from ..knowledgebase import KnowledgeBase
from ..state import PipelineState
from .common import node_failure, run_key, store_for, targets
from .kb_builder import kb_location


def load_knowledge_base(state: PipelineState, config: Config, store) -> KnowledgeBase:
    """The KB from state, else from disk; empty only when nothing could have produced one."""
    kb = state.get('kb')
    if kb is not None:
        return kb
    location = kb_location(config)
    if store.exists(location):
        return KnowledgeBase.from_jsonl(store.read_text(location), source=str(store.path(location)))
    if state.get('kb_sources') or config.run.paths.kb:
        raise MissingArtifactError(f"Knowledge base not found: {store.path(location)}; run the 'kb' command first")
    print("   No knowledge base configured; training on target records only")
    return KnowledgeBase()


@debug_stage("Trainer")
def trainer(state: PipelineState, config: Config) -> Dict[str, Any]:
    """Run nested cross-validation per target dataset and classifier kind.

    Args:
        state: Current workflow state
        config: Configuration object

    Returns:
        Updated state with per-run results and fitted cluster models
    """
    debug_logger = state.get('_debug_logger')
    store = store_for(state, config)
    print("Training uncertainty estimators...")

    try:
        kb = load_knowledge_base(state, config, store)
        estimator_config = config.run.estimator_config()
        runs, models = {}, {}
        for ds in targets(state):
            for spec in config.run.learners.specs():
                key = run_key(ds.id, spec.kind.value)
                if debug_logger:
                    debug_logger.log_section(f"Nested cross-validation: {key}")
                result = nested_cv_run(
                    ds,
                    kb.for_model(spec.kind.value),
                    spec,
                    estimator_config,
                    seed=derive_seed(config.seed, "train", spec.kind.value),
                    kb_config=config.run.kb_config(),
                    meta_config=config.run.metafeatures,
                )
                store.write_csv(f"results/{key}.csv", result.to_frame())
                store.write_json(f"results/{key}.folds.json", {"dataset_id": ds.id, "model_kind": spec.kind.value, "folds": result.fold_configs})
                store.write_text(f"models/{key}.json", result.final_model.to_json() + "\n")
                store.write_text(f"models/{key}.background.jsonl", result.background.to_jsonl())
                runs[key] = result
                models[key] = result.final_model
                print(
                    f"   {key}: misclassification rate {result.misclassified.mean():.3f}, "
                    f"mean uncertainty {result.uncertainty.mean():.3f}, {result.final_model.n_clusters} clusters"
                )
                if debug_logger:
                    debug_logger.log_data(f"Fold configurations ({key})", {
                        f"fold {c['fold']}": f"{c['n_clusters']} clusters, score {c['score']:.4f}" for c in result.fold_configs
                    })
                    debug_logger.save("models", key, result.final_model.to_dict())

        return {**state, 'runs': runs, 'models': models, 'workflow_status': 'trained'}
    except Exception as e:
        return node_failure(state, "Trainer", e)

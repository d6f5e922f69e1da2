"""Node for building the meta-knowledge base."""
from pathlib import Path
from typing import Any, Dict, List

from ..config import Config
from ..debug_logger import debug_stage
from ..knowledgebase import KnowledgeBase, balance_synthetic, build_kb
from ..core import derive_seed
from ..state import PipelineState
from .common import node_failure, store_for

KB_ARTIFACT = "kb/kb.jsonl"


def kb_location(config: Config) -> str:
    """Knowledge-base path relative to the output directory, or absolute when configured."""
    return config.run.paths.kb or KB_ARTIFACT


def _synthetic_from_store(store) -> List[Any]:
    folder = store.path("synthetic")
    if not folder.exists():
        return []
    return [store.read_dataset(Path("synthetic") / p.name) for p in sorted(folder.glob("*.csv"))]


@debug_stage("Knowledge Base Builder")
def kb_builder(state: PipelineState, config: Config) -> Dict[str, Any]:
    debug_logger = state.get('_debug_logger')
    store = store_for(state, config)
    print("Building knowledge base...")

    try:
        synthetic = state.get('synthetic')
        if synthetic is None:
            synthetic = _synthetic_from_store(store)
        sources = list(state.get('kb_sources') or []) + list(synthetic)
        if not sources:
            print("   No knowledge-base sources configured; writing an empty knowledge base")

        kb = KnowledgeBase()
        for spec in config.run.learners.specs():
            part = build_kb(
                sources,
                spec,
                k_folds=config.run.knowledge_base.k_folds,
                seed=derive_seed(config.seed, "kb", spec.kind.value),
                config=config.run.kb_config(),
                meta_config=config.run.metafeatures,
            )
            if config.run.knowledge_base.balance_synthetic:
                part = balance_synthetic(part, derive_seed(config.seed, "balance", spec.kind.value))
            print(f"   {spec.kind.value}: {len(part)} records, misclassification rate {part.misclassification_rate():.3f}")
            kb = kb + part

        store.write_text(kb_location(config), kb.to_jsonl())
        if debug_logger:
            debug_logger.log_data("Knowledge Base", {
                "Records": len(kb),
                "Failures": kb.failures,
                "Misclassification Rate": round(kb.misclassification_rate(), 4),
            })

        return {**state, 'kb': kb, 'workflow_status': 'kb_built'}
    except Exception as e:
        return node_failure(state, "Knowledge Base Builder", e)

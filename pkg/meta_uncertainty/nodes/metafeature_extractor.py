"""Node for computing fold-aware meta-features of every target instance."""
from typing import Any, Dict

import numpy as np
import pandas as pd

from ..config import Config
from ..core import LabelledDataset, derive_seed
from ..debug_logger import debug_stage
from ..knowledgebase import dataset_fold_passes
from ..learners import ClassifierSpec
from ..metafeatures import META_FEATURES, vectors_to_matrix
from ..state import PipelineState
from .common import node_failure, run_key, store_for, targets


def metafeature_table(ds: LabelledDataset, spec: ClassifierSpec, config: Config) -> pd.DataFrame:
    """Every instance scored against the training folds of the fold that holds it out.

    Evidence conflict needs the classifier's prediction, so each fold tunes
    and fits ``spec`` exactly as knowledge-base records are built.
    """
    meta = np.zeros((ds.n_instances, len(META_FEATURES)))
    predicted = np.zeros(ds.n_instances, dtype=int)
    passes = dataset_fold_passes(
        ds, spec, config.run.kb_config(), config.run.metafeatures, derive_seed(config.seed, "metafeatures")
    )
    for _, result in passes:
        meta[result.test_indices] = vectors_to_matrix(result.meta)
        predicted[result.test_indices] = result.predictions
    frame = pd.DataFrame(meta, columns=list(META_FEATURES))
    frame.insert(0, "id", np.arange(ds.n_instances))
    frame["predicted"] = [ds.classes[c] for c in predicted]
    return frame


@debug_stage("Meta-feature Extractor")
def metafeature_extractor(state: PipelineState, config: Config) -> Dict[str, Any]:
    debug_logger = state.get('_debug_logger')
    store = store_for(state, config)
    print("Computing meta-features...")

    try:
        tables = {}
        for ds in targets(state):
            for spec in config.run.learners.specs():
                key = run_key(ds.id, spec.kind.value)
                frame = metafeature_table(ds, spec, config)
                store.write_csv(f"metafeatures/{key}.csv", frame)
                tables[key] = frame
                print(f"   {key}: {len(frame)} rows")
                if debug_logger:
                    debug_logger.log_data(f"Meta-feature means ({key})", frame[list(META_FEATURES)].mean().round(4).to_dict())

        return {**state, 'metafeatures': tables, 'workflow_status': 'metafeatures_computed'}
    except Exception as e:
        return node_failure(state, "Meta-feature Extractor", e)

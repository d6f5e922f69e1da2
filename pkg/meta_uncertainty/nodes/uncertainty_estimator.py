"""Node for applying fitted cluster models to meta-feature tables."""
from typing import Any, Dict

import pandas as pd

from ..config import Config
from ..debug_logger import debug_stage
from ..estimator import estimate_batch
from ..metafeatures import META_FEATURES
from ..state import PipelineState
from .common import load_model, node_failure, run_key, store_for, targets


@debug_stage("Uncertainty Estimator")
def uncertainty_estimator(state: PipelineState, config: Config) -> Dict[str, Any]:
    debug_logger = state.get('_debug_logger')
    store = store_for(state, config)
    print("Estimating uncertainty...")

    try:
        tables = state.get('metafeatures') or {}
        estimates = {}
        for ds in targets(state):
            for spec in config.run.learners.specs():
                key = run_key(ds.id, spec.kind.value)
                frame = tables.get(key)
                if frame is None:
                    frame = store.read_csv(f"metafeatures/{key}.csv")
                model = load_model(state, store, key)
                values = estimate_batch(model, frame[list(META_FEATURES)].to_numpy(dtype=float))
                out = pd.DataFrame({"id": frame["id"], "uncertainty": values})
                store.write_csv(f"estimates/{key}.csv", out)
                estimates[key] = out
                print(f"   {key}: mean {values.mean():.4f}, max {values.max():.4f}")
                if debug_logger:
                    debug_logger.log_detail(f"Estimates ({key})", len(out))

        return {**state, 'estimates': estimates, 'workflow_status': 'estimated'}
    except Exception as e:
        return node_failure(state, "Uncertainty Estimator", e)

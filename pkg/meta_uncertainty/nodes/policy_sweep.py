"""Node for the knowledge-base sampling policy sweep."""
from typing import Any, Dict

import pandas as pd

from ..config import Config
from ..core import derive_seed
from ..debug_logger import debug_stage
from ..errors import MetaUncertaintyError
from ..estimator import nested_cv_run
from ..evalstats import detection_metrics
from ..knowledgebase import policy_grid
from ..state import PipelineState
from .common import node_failure, run_key, store_for, targets
from .trainer import load_knowledge_base


@debug_stage("Policy Sweep")
def policy_sweep(state: PipelineState, config: Config) -> Dict[str, Any]:
    """Nested-CV detection metrics under each of the 48 sampling policies.

    A policy whose realness filter leaves nothing to sample is reported
    with empty metrics and its error.
    """
    debug_logger = state.get('_debug_logger')
    store = store_for(state, config)
    policies = policy_grid()
    print(f"Sweeping {len(policies)} sampling policies...")

    try:
        kb = load_knowledge_base(state, config, store)
        cap = config.run.estimator.or_cap
        sweeps = {}
        for ds in targets(state):
            for spec in config.run.learners.specs():
                key = run_key(ds.id, spec.kind.value)
                rows = []
                for policy in policies:
                    row = {"m": policy.m, "q": policy.q, "realness": policy.realness}
                    try:
                        result = nested_cv_run(
                            ds,
                            kb.for_model(spec.kind.value),
                            spec,
                            config.run.estimator_config().model_copy(update={"sampling": policy}),
                            seed=derive_seed(config.seed, "train", spec.kind.value),
                            kb_config=config.run.kb_config(),
                            meta_config=config.run.metafeatures,
                        )
                        row.update(detection_metrics(result.uncertainty, result.misclassified, cap))
                        row["error"] = ""
                    except MetaUncertaintyError as e:
                        row.update({"or": None, "auroc": None, "auprc": None, "improvement": None, "error": str(e)})
                    rows.append(row)
                    if debug_logger:
                        debug_logger.log_detail(f"{key} m={policy.m} q={policy.q} {policy.realness}", row.get("auroc"))

                table = pd.DataFrame(rows)
                store.write_csv(f"sweep/{key}.csv", table)
                sweeps[key] = table
                best = table.dropna(subset=["auroc"]).sort_values("auroc", ascending=False, kind="stable").head(1)
                if len(best):
                    b = best.iloc[0]
                    print(f"   {key}: best AUROC {b['auroc']:.3f} at m={b['m']}, q={b['q']}, {b['realness']}")
                else:
                    print(f"   {key}: no policy produced metrics")

        return {**state, 'sweeps': sweeps, 'workflow_status': 'swept'}
    except Exception as e:
        return node_failure(state, "Policy Sweep", e)

"""Node for the abstention curve of each run."""
from typing import Any, Dict

from ..config import Config
from ..debug_logger import debug_stage
from ..evalstats import abstention_curve
from ..state import PipelineState
from .common import load_run, node_failure, run_key, store_for, targets


@debug_stage("Abstention Analyzer")
def abstention_analyzer(state: PipelineState, config: Config) -> Dict[str, Any]:
    store = store_for(state, config)
    print("Computing abstention curves...")

    try:
        curves = {}
        for ds in targets(state):
            for spec in config.run.learners.specs():
                key = run_key(ds.id, spec.kind.value)
                result = load_run(state, store, ds.id, spec.kind.value)
                curve = abstention_curve(result.uncertainty, result.misclassified)
                store.write_csv(f"abstention/{key}.csv", curve.to_frame())
                curves[key] = curve
                print(
                    f"   {key}: {curve.misclassified_pct[4]:.2f}% misclassified at the 25th percentile, "
                    f"{curve.misclassified_pct[-1]:.2f}% at the 95th"
                )

        return {**state, 'abstention': curves, 'workflow_status': 'abstention_computed'}
    except Exception as e:
        return node_failure(state, "Abstention Analyzer", e)

"""Node for the statistical evaluation of each run."""
from typing import Any, Dict

import numpy as np

from ..config import Config
from ..core import derive_seed
from ..debug_logger import debug_stage
from ..evalstats import build_report, ism_flags
from ..state import PipelineState
from .common import load_run, node_failure, run_key, store_for, targets


@debug_stage("Evaluator")
def evaluator(state: PipelineState, config: Config) -> Dict[str, Any]:
    """Odds ratios, correlations and detection metrics, with and without ISMs.

    Args:
        state: Current workflow state
        config: Configuration object

    Returns:
        Updated state with one EvaluationReport per run
    """
    debug_logger = state.get('_debug_logger')
    store = store_for(state, config)
    print("Evaluating runs...")

    try:
        reports = {}
        for ds in targets(state):
            verdicts = ism_flags(ds, k=config.run.metafeatures.k, seed=derive_seed(config.seed, ds.id, "ism"))
            ism_mask = np.asarray([v.is_ism for v in verdicts])
            for spec in config.run.learners.specs():
                key = run_key(ds.id, spec.kind.value)
                result = load_run(state, store, ds.id, spec.kind.value)
                report = build_report(
                    result.meta,
                    result.misclassified,
                    result.uncertainty,
                    result.confidence,
                    dataset_id=ds.id,
                    model_kind=spec.kind.value,
                    ism_mask=ism_mask,
                    cap=config.run.estimator.or_cap,
                )
                store.write_text(f"reports/{key}.json", report.to_json() + "\n")
                store.write_text(f"reports/{key}.md", report.to_markdown())
                store.write_csv(f"reports/{key}.metrics.csv", report.metrics_frame())
                reports[key] = report

                estimator_auroc = report.metrics["estimator"]["auroc"]
                baseline_auroc = report.metrics["baseline"]["auroc"]
                print(
                    f"   {key}: AUROC {_fmt(estimator_auroc)} (baseline {_fmt(baseline_auroc)}), "
                    f"{report.n_ism} ISMs"
                )
                if debug_logger:
                    debug_logger.log_data(f"Metrics ({key})", report.metrics["estimator"])

        return {**state, 'reports': reports, 'workflow_status': 'evaluated'}
    except Exception as e:
        return node_failure(state, "Evaluator", e)


def _fmt(value) -> str:
    return "n/a" if value is None else f"{value:.3f}"

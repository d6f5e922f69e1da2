"""Node for the run summary."""
from typing import Any, Dict, List

from ..config import Config
from ..debug_logger import debug_stage
from ..state import PipelineState
from .common import node_failure, store_for


def _cell(value) -> str:
    return "n/a" if value is None else f"{value:.3f}"


@debug_stage("Report Generator")
def report_generator(state: PipelineState, config: Config) -> Dict[str, Any]:
    """Summarize every evaluated run into ``report.md``."""
    store = store_for(state, config)
    print("Generating report...")

    try:
        reports = state.get('reports') or {}
        report_lines: List[str] = [
            "# Uncertainty Estimation Report",
            "",
            f"**Seed:** {config.seed}",
            f"**Datasets:** {', '.join(ds.id for ds in state.get('datasets') or []) or 'none'}",
            f"**Knowledge base records:** {len(state['kb']) if state.get('kb') is not None else 'not built in this run'}",
            "",
            "## Detection of misclassifications",
            "",
            "| Run | Instances | Error rate | Estimator AUROC | Baseline AUROC | Estimator AUPRC | Baseline AUPRC | ISMs |",
            "|---|---|---|---|---|---|---|---|",
        ]
        for key in sorted(reports):
            report = reports[key]
            est, base = report.metrics["estimator"], report.metrics["baseline"]
            report_lines.append(
                f"| {key} | {report.n_instances} | {report.misclassification_rate:.3f} | "
                f"{_cell(est['auroc'])} | {_cell(base['auroc'])} | {_cell(est['auprc'])} | {_cell(base['auprc'])} | "
                f"{report.n_ism if report.n_ism is not None else 'n/a'} |"
            )
        if not reports:
            report_lines.append("| (no evaluated runs) | | | | | | | |")

        abstention = state.get('abstention') or {}
        if abstention:
            report_lines.extend(["", "## Abstention", "", "| Run | Misclassified % at 50th percentile | at 95th percentile |", "|---|---|---|"])
            for key in sorted(abstention):
                curve = abstention[key]
                report_lines.append(f"| {key} | {curve.misclassified_pct[9]:.2f} | {curve.misclassified_pct[-1]:.2f} |")

        attributions = state.get('attributions') or {}
        if attributions:
            report_lines.extend(["", "## Explanations", ""])
            for key in sorted(attributions):
                report_lines.append(f"- {key}: {len(attributions[key])} instance(s), see `explanations/{key}.txt`")

        final_report = "\n".join(report_lines) + "\n"
        store.write_text("report.md", final_report)
        return {**state, 'final_report': final_report, 'workflow_status': 'completed'}
    except Exception as e:
        return node_failure(state, "Report Generator", e)

"""Statistical evaluation: odds ratios, rank metrics, abstention and the ISM filter."""
import json
import logging
import warnings
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import statsmodels.api as sm
from scipy.stats import rankdata
from sklearn.metrics import average_precision_score, pairwise_distances, roc_auc_score

from .core import FeatureScaler, LabelledDataset, Seed, zscore
from .errors import DegenerateInputError, InputError, LengthMismatchError
from .learners import ClassConditionalDensities, grow_tree
from .metafeatures import META_FEATURES

logger = logging.getLogger(__name__)

OR_CAP = 1e3
ABSTENTION_PERCENTILES = tuple(range(5, 100, 5))
LOG_DENSITY_FLOOR = -700.0


def _binary(scores: Sequence[float], flags: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=float).ravel()
    f = np.asarray(flags).ravel().astype(int)
    if len(s) != len(f):
        raise LengthMismatchError(f"{len(s)} scores but {len(f)} flags")
    if not np.all(np.isin(f, (0, 1))):
        raise InputError("Flags must be 0/1")
    return s, f


def _require_both(f: np.ndarray, what: str) -> None:
    if f.size == 0 or f.min() == f.max():
        raise DegenerateInputError(f"{what} needs both flag values present")


@dataclass(frozen=True)
class OddsRatioResult:
    odds_ratio: float
    ci_low: float
    ci_high: float
    p_value: float
    coef: float = 0.0
    flags: Tuple[str, ...] = ()

    @property
    def clamped(self) -> bool:
        return "clamped" in self.flags

    def to_dict(self) -> Dict[str, Any]:
        return {
            "or": self.odds_ratio,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "p_value": self.p_value,
            "coef": self.coef,
            "flags": list(self.flags),
        }


def _clamped_or(direction: int, cap: float) -> OddsRatioResult:
    value = cap if direction > 0 else 1.0 / cap
    return OddsRatioResult(value, value, value, 0.0, float(np.log(value)), ("clamped",))


def univariate_or(x: Sequence[float], flags: Sequence[int], cap: float = OR_CAP) -> OddsRatioResult:
    """Odds ratio per standard deviation of ``x`` from ``flags ~ zscore(x)``.

    Fitted as a binomial GLM by IRLS (100 iterations, tolerance 1e-8) with
    Wald 95% intervals. Complete separation, or a coefficient beyond
    ``log(cap)``, returns the cap (or its inverse) flagged ``clamped``.
    """
    x, f = _binary(x, flags)
    _require_both(f, "Odds ratio")
    z, degenerate = zscore(x)
    if degenerate:
        return OddsRatioResult(1.0, 1.0, 1.0, 1.0, 0.0, ("zero_variance",))

    if z[f == 0].max() < z[f == 1].min():
        return _clamped_or(+1, cap)
    if z[f == 1].max() < z[f == 0].min():
        return _clamped_or(-1, cap)

    exog = sm.add_constant(z, has_constant="add")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        try:
            fit = sm.GLM(f, exog, family=sm.families.Binomial()).fit(method="IRLS", maxiter=100, tol=1e-8)
        except Exception as e:
            logger.warning(f"Odds ratio: logistic fit failed ({e}); treating as separated")
            return _clamped_or(1 if np.corrcoef(z, f)[0, 1] >= 0 else -1, cap)

    beta = float(fit.params[1])
    se = float(fit.bse[1])
    if not np.isfinite(beta) or abs(beta) > np.log(cap) or not np.isfinite(se):
        return _clamped_or(1 if beta >= 0 else -1, cap)
    p_value = float(fit.pvalues[1])
    return OddsRatioResult(
        odds_ratio=float(np.exp(beta)),
        ci_low=float(np.exp(beta - 1.959963984540054 * se)),
        ci_high=float(np.exp(beta + 1.959963984540054 * se)),
        p_value=float(np.clip(p_value, 0.0, 1.0)) if np.isfinite(p_value) else 1.0,
        coef=beta,
    )


def auroc(scores: Sequence[float], flags: Sequence[int]) -> float:
    s, f = _binary(scores, flags)
    _require_both(f, "AUROC")
    return float(roc_auc_score(f, s))


@dataclass(frozen=True)
class AuprcResult:
    auprc: float
    prevalence: float

    @property
    def improvement(self) -> float:
        return self.auprc - self.prevalence


def auprc(scores: Sequence[float], flags: Sequence[int]) -> AuprcResult:
    """Step-wise area under the precision-recall curve and the prevalence baseline."""
    s, f = _binary(scores, flags)
    if f.sum() == 0:
        raise DegenerateInputError("AUPRC needs at least one positive flag")
    return AuprcResult(auprc=float(average_precision_score(f, s)), prevalence=float(f.mean()))


@dataclass(frozen=True)
class SpearmanResult:
    matrix: np.ndarray
    names: Tuple[str, ...]
    constant_columns: Tuple[str, ...] = ()

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.matrix, index=list(self.names), columns=list(self.names))


def spearman_matrix(columns: np.ndarray, names: Sequence[str] = META_FEATURES) -> SpearmanResult:
    """Rank correlations between columns; a constant column correlates 0 with the rest."""
    columns = np.asarray(columns, dtype=float)
    if columns.ndim != 2 or columns.shape[0] < 3:
        raise InputError(f"Spearman matrix needs at least 3 rows, got shape {columns.shape}")
    if len(names) != columns.shape[1]:
        names = tuple(f"v{j}" for j in range(columns.shape[1]))
    ranks = rankdata(columns, axis=0)
    sd = ranks.std(axis=0)
    constant = sd == 0
    centered = ranks - ranks.mean(axis=0)
    safe = np.where(constant, 1.0, sd)
    standardized = np.where(constant, 0.0, centered / safe)
    rho = standardized.T @ standardized / columns.shape[0]
    rho = np.clip((rho + rho.T) / 2.0, -1.0, 1.0)
    np.fill_diagonal(rho, 1.0)
    flagged = tuple(name for name, c in zip(names, constant) if c)
    if flagged:
        logger.warning(f"Spearman matrix: constant columns {list(flagged)} set to 0")
    return SpearmanResult(matrix=rho, names=tuple(names), constant_columns=flagged)


@dataclass(frozen=True)
class AbstentionCurve:
    percentiles: Tuple[int, ...]
    thresholds: np.ndarray
    misclassified_pct: np.ndarray
    retained_pct: np.ndarray

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "percentile": list(self.percentiles),
                "threshold": self.thresholds,
                "misclassified_pct": self.misclassified_pct,
                "retained_pct": self.retained_pct,
            }
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "percentile": [int(p) for p in self.percentiles],
            "threshold": [float(t) for t in self.thresholds],
            "misclassified_pct": [float(v) for v in self.misclassified_pct],
            "retained_pct": [float(v) for v in self.retained_pct],
        }


def abstention_curve(uncertainty: Sequence[float], flags: Sequence[int]) -> AbstentionCurve:
    """Misclassified share among instances kept at each uncertainty percentile."""
    u, f = _binary(uncertainty, flags)
    if u.size == 0:
        raise InputError("Abstention curve needs at least one instance")
    thresholds = np.percentile(u, ABSTENTION_PERCENTILES)
    misclassified, retained = [], []
    for t in thresholds:
        kept = u <= t
        retained.append(100.0 * kept.mean())
        misclassified.append(100.0 * f[kept].mean() if kept.any() else 0.0)
    return AbstentionCurve(
        percentiles=ABSTENTION_PERCENTILES,
        thresholds=np.asarray(thresholds, dtype=float),
        misclassified_pct=np.asarray(misclassified),
        retained_pct=np.asarray(retained),
    )


def _log_likelihoods(densities: ClassConditionalDensities, x: np.ndarray) -> Tuple[np.ndarray, bool]:
    log_f, zero = densities.log_density(x, laplace_alpha=1.0)
    log_f = np.where(np.isfinite(log_f), log_f, LOG_DENSITY_FLOOR)
    log_f = np.maximum(log_f, LOG_DENSITY_FLOOR)
    return log_f.sum(axis=1), bool(zero.any())


def class_likelihood(
    x: Sequence[float],
    c: int,
    train: LabelledDataset,
    densities: Optional[ClassConditionalDensities] = None,
) -> float:
    """Log of the product of per-feature class-``c`` densities at ``x``.

    Zero-probability cells take a Laplace floor (alpha 1) for nominal features
    and a fixed log floor for continuous ones; both are logged.
    """
    if not 0 <= c < train.n_classes:
        raise InputError(f"Class code {c} outside 0..{train.n_classes - 1}")
    densities = densities or ClassConditionalDensities.fit(
        train.X, train.y, train.schema.feature_kinds, train.n_classes
    )
    values, floored = _log_likelihoods(densities, np.asarray(x, dtype=float))
    if floored:
        logger.debug(f"{train.id}: class likelihood used a density floor")
    return float(values[c])


def disagreeing_neighbors(ds: LabelledDataset, k: int = 5) -> np.ndarray:
    """Leave-one-out fraction of each instance's ``k`` nearest neighbours with another label."""
    if not 1 <= k < ds.n_instances:
        raise InputError(f"k={k} needs 1 <= k < {ds.n_instances}")
    Z = FeatureScaler.for_dataset(ds).transform(ds.X)
    D = pairwise_distances(Z)
    np.fill_diagonal(D, np.inf)
    neighbours = np.argsort(D, axis=1, kind="stable")[:, :k]
    return (ds.y[neighbours] != ds.y[:, None]).mean(axis=1)


@dataclass(frozen=True)
class IsmVerdict:
    dcp: float
    cld: float
    ds: float
    kdn: float
    is_ism: bool
    flags: Tuple[str, ...] = ()

    @staticmethod
    def condition(dcp: float, cld: float, ds: float, kdn: float) -> bool:
        return cld < 0 and ((ds == 0 and dcp < 0.5) or kdn > 0.8)


def ism_flags(ds: LabelledDataset, k: int = 5, seed: Seed = 0) -> List[IsmVerdict]:
    """Instances that should be misclassified, judged against the full dataset.

    DS and DCP come from one unpruned tree grown on every instance, CLD
    from class-conditional densities of the full data and kDN from
    leave-one-out neighbours. This kDN is the fraction of the k neighbours
    whose label disagrees with the instance, not the neighbourhood
    class diversity used as a meta-feature.
    """
    tree = grow_tree(ds, pruned=False, seed=seed)
    largest = tree.largest_leaf_size
    densities = ClassConditionalDensities.fit(ds.X, ds.y, ds.schema.feature_kinds, ds.n_classes)
    kdn = disagreeing_neighbors(ds, min(k, ds.n_instances - 1))

    verdicts = []
    for i in range(ds.n_instances):
        leaf = int(tree.train_leaves[i])
        counts = tree.leaf_class_counts[leaf]
        size = float(counts.sum())
        dcp = float(counts[ds.y[i]] / size) if size else 0.0
        disjunct = (size - 1) / (largest - 1) if largest > 1 else 0.0

        log_cl, floored = _log_likelihoods(densities, ds.X[i])
        others = np.delete(log_cl, ds.y[i])
        cld = float(log_cl[ds.y[i]] - others.max()) if others.size else 0.0
        verdicts.append(
            IsmVerdict(
                dcp=dcp,
                cld=cld,
                ds=float(disjunct),
                kdn=float(kdn[i]),
                is_ism=bool(IsmVerdict.condition(dcp, cld, disjunct, float(kdn[i]))),
                flags=("cl_floor",) if floored else (),
            )
        )
    logger.info(f"{ds.id}: {sum(v.is_ism for v in verdicts)} of {ds.n_instances} instances flagged as ISMs")
    return verdicts


def misclassification_score(confidence: Sequence[float]) -> np.ndarray:
    """``0.5 - |p - 0.5|``: the probability baseline oriented so higher means more likely wrong."""
    return 0.5 - np.asarray(confidence, dtype=float)


@dataclass
class EvaluationReport:
    """Odds ratios, correlation and estimator-vs-baseline metrics for one run."""

    dataset_id: str
    model_kind: str
    n_instances: int
    misclassification_rate: float
    odds_ratios: Dict[str, OddsRatioResult]
    spearman: SpearmanResult
    metrics: Dict[str, Dict[str, Optional[float]]]
    abstention: Optional[AbstentionCurve] = None
    n_ism: Optional[int] = None
    notes: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "dataset_id": self.dataset_id,
            "model_kind": self.model_kind,
            "n_instances": self.n_instances,
            "misclassification_rate": self.misclassification_rate,
            "odds_ratios": {name: r.to_dict() for name, r in self.odds_ratios.items()},
            "spearman": {
                "names": list(self.spearman.names),
                "matrix": self.spearman.matrix.tolist(),
                "constant_columns": list(self.spearman.constant_columns),
            },
            "metrics": self.metrics,
            "abstention": self.abstention.to_dict() if self.abstention else None,
            "n_ism": self.n_ism,
            "notes": self.notes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def metrics_frame(self) -> pd.DataFrame:
        rows = [{"method": method, **values} for method, values in self.metrics.items()]
        return pd.DataFrame(rows)

    def to_markdown(self) -> str:
        report_lines = [
            f"# Uncertainty evaluation: {self.dataset_id} ({self.model_kind})",
            "",
            f"- Instances: {self.n_instances}",
            f"- Misclassification rate: {self.misclassification_rate:.4f}",
        ]
        if self.n_ism is not None:
            report_lines.append(f"- Instances that should be misclassified: {self.n_ism}")
        report_lines.extend(["", "## Odds ratios (per standard deviation)", "", "| Measure | OR | 95% CI | p |", "|---|---|---|---|"])
        for name, r in self.odds_ratios.items():
            mark = " (clamped)" if r.clamped else ""
            report_lines.append(f"| {name} | {r.odds_ratio:.3f}{mark} | {r.ci_low:.3f} - {r.ci_high:.3f} | {r.p_value:.4f} |")
        report_lines.extend(["", "## Misclassification detection", "", "| Method | OR | AUROC | AUPRC | Improvement |", "|---|---|---|---|---|"])
        for method, values in self.metrics.items():
            cells = [_fmt(values.get(key)) for key in ("or", "auroc", "auprc", "improvement")]
            report_lines.append(f"| {method} | " + " | ".join(cells) + " |")
        report_lines.extend(["", "## Spearman correlation", ""])
        names = list(self.spearman.names)
        report_lines.append("| | " + " | ".join(names) + " |")
        report_lines.append("|---" * (len(names) + 1) + "|")
        for name, row in zip(names, self.spearman.matrix):
            report_lines.append(f"| {name} | " + " | ".join(f"{v:.2f}" for v in row) + " |")
        if self.abstention is not None:
            report_lines.extend(["", "## Abstention", "", "| Percentile | Retained % | Misclassified % |", "|---|---|---|"])
            for p, kept, wrong in zip(self.abstention.percentiles, self.abstention.retained_pct, self.abstention.misclassified_pct):
                report_lines.append(f"| {p} | {kept:.1f} | {wrong:.2f} |")
        if self.notes:
            report_lines.extend(["", "## Notes", ""])
            report_lines.extend(f"- {note}" for note in self.notes)
        return "\n".join(report_lines) + "\n"


def _fmt(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value:.3f}"


def detection_metrics(scores: Sequence[float], flags: Sequence[int], cap: float = OR_CAP) -> Dict[str, Optional[float]]:
    """OR, AUROC, AUPRC and AUPRC improvement of ``scores`` as a misclassification detector."""
    s, f = _binary(scores, flags)
    if f.size == 0 or f.min() == f.max():
        return {"or": None, "auroc": None, "auprc": None, "improvement": None}
    pr = auprc(s, f)
    return {
        "or": univariate_or(s, f, cap).odds_ratio,
        "auroc": auroc(s, f),
        "auprc": pr.auprc,
        "improvement": pr.improvement,
    }


def build_report(
    meta: np.ndarray,
    flags: Sequence[int],
    uncertainty: Sequence[float],
    confidence: Sequence[float],
    dataset_id: str = "dataset",
    model_kind: str = "unknown",
    ism_mask: Optional[Sequence[bool]] = None,
    cap: float = OR_CAP,
) -> EvaluationReport:
    """Evaluation of one nested-CV run.

    Args:
        meta: Meta-feature matrix, one row per instance
        flags: Misclassification flags
        uncertainty: Estimated uncertainty per instance
        confidence: ``|p - 0.5|`` of the predicted class per instance
        dataset_id: Name used in the rendered report
        model_kind: Classifier kind used in the rendered report
        ism_mask: Optional ISM verdicts; adds metrics with ISMs removed
        cap: Odds-ratio clamp

    Returns:
        EvaluationReport
    """
    meta = np.asarray(meta, dtype=float)
    u, f = _binary(uncertainty, flags)
    baseline = misclassification_score(confidence)
    if len(meta) != len(f) or len(baseline) != len(f):
        raise LengthMismatchError("Meta-features, flags, uncertainty and confidence must align")

    notes: List[str] = []
    odds: Dict[str, OddsRatioResult] = {}
    if f.min() != f.max():
        for j, name in enumerate(META_FEATURES):
            odds[name] = univariate_or(meta[:, j], f, cap)
    else:
        notes.append("Every instance shares one misclassification flag; odds ratios and detection metrics are undefined")

    metrics = {"estimator": detection_metrics(u, f, cap), "baseline": detection_metrics(baseline, f, cap)}
    n_ism = None
    if ism_mask is not None:
        keep = ~np.asarray(ism_mask, dtype=bool)
        n_ism = int((~keep).sum())
        metrics["estimator_without_ism"] = detection_metrics(u[keep], f[keep], cap)
        metrics["baseline_without_ism"] = detection_metrics(baseline[keep], f[keep], cap)

    return EvaluationReport(
        dataset_id=dataset_id,
        model_kind=model_kind,
        n_instances=len(f),
        misclassification_rate=float(f.mean()) if f.size else 0.0,
        odds_ratios=odds,
        spearman=spearman_matrix(meta),
        metrics=metrics,
        abstention=abstention_curve(u, f) if f.size else None,
        n_ism=n_ism,
        notes=notes,
    )

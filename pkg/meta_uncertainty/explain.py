"""Exact Shapley attribution of estimated uncertainty to the seven meta-heuristics."""
import logging
from dataclasses import dataclass
from itertools import product
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field
from scipy.special import factorial

from .core import Seed, make_rng
from .errors import EmptyPoolError, InputError
from .estimator import FuzzyClusterModel, MetaInput, meta_matrix
from .knowledgebase import KnowledgeBase
from .metafeatures import META_FEATURES

logger = logging.getLogger(__name__)

PHRASES = {
    "kdn": "diversity in the class outcomes of similar instances",
    "ds": "the size of the decision-tree disjunct covering the instance",
    "dcd": "class diversity within the pruned-tree disjunct covering the instance",
    "ol": "how far the instance lies from the density of its neighbourhood",
    "clol": "how equally outlying the instance is to every class",
    "ec": "conflicting evidence between individual features",
    "hd": "the distance to the separating hyperplane",
}


class ExplainConfig(BaseModel):
    background_cap: int = Field(default=256, ge=1)
    min_magnitude: float = Field(default=1e-4, ge=0)


@dataclass(frozen=True)
class Attribution:
    base_value: float
    contributions: np.ndarray
    fx: float
    names: Tuple[str, ...] = META_FEATURES

    def to_dict(self) -> Dict[str, Any]:
        return {
            "base_value": self.base_value,
            "fx": self.fx,
            "contributions": dict(zip(self.names, (float(c) for c in self.contributions))),
        }


def _coalitions(n: int) -> np.ndarray:
    return np.asarray(list(product((False, True), repeat=n)), dtype=bool)


def background_sample(background: KnowledgeBase, cap: int = 256, seed: Seed = 0) -> np.ndarray:
    """Background meta-feature rows, uniformly subsampled to ``cap``."""
    if len(background) == 0:
        raise EmptyPoolError("Shapley values need a non-empty background")
    rows = background.matrix()
    if len(rows) > cap:
        keep = np.sort(make_rng(seed, "shapley_background").choice(len(rows), size=cap, replace=False))
        rows = rows[keep]
    return rows


def coalition_values(model: FuzzyClusterModel, meta: MetaInput, rows: np.ndarray) -> Dict[Tuple[bool, ...], float]:
    """Mean estimate over ``rows`` with the coalition's columns taken from ``meta``, for every coalition."""
    x = meta_matrix(meta)[0]
    masks = _coalitions(len(x))
    composite = np.where(masks[:, None, :], x[None, None, :], rows[None, :, :])
    estimates = model.estimate(composite.reshape(-1, len(x))).reshape(len(masks), len(rows))
    return {tuple(mask): float(v) for mask, v in zip(masks, estimates.mean(axis=1))}


def shapley(
    model: FuzzyClusterModel,
    meta: MetaInput,
    background: KnowledgeBase,
    config: Optional[ExplainConfig] = None,
    seed: Seed = 0,
) -> Attribution:
    """Exact interventional Shapley values over all 128 coalitions.

    ``v(S)`` is the mean estimated uncertainty over background rows with
    the features in ``S`` replaced by the instance's values; the base value
    is ``v`` of the empty coalition.
    """
    config = config or ExplainConfig()
    rows = background_sample(background, config.background_cap, seed)
    values = coalition_values(model, meta, rows)
    n = rows.shape[1]
    weights = factorial(np.arange(n)) * factorial(n - 1 - np.arange(n)) / factorial(n)

    phi = np.zeros(n)
    for mask, v in values.items():
        size = sum(mask)
        for i in range(n):
            if mask[i]:
                continue
            with_i = list(mask)
            with_i[i] = True
            phi[i] += weights[size] * (values[tuple(with_i)] - v)

    base = values[(False,) * n]
    fx = values[(True,) * n]
    gap = abs(base + phi.sum() - fx)
    if gap > 1e-6:
        logger.warning(f"Shapley efficiency gap {gap:.2e}")
    return Attribution(base_value=base, contributions=phi, fx=fx)


def force_plot_data(attr: Attribution, min_magnitude: float = 1e-4) -> Dict[str, Any]:
    """Segments ordered by magnitude; those below ``min_magnitude`` are left out."""
    order = np.argsort(-np.abs(attr.contributions), kind="stable")
    segments = [
        {
            "name": attr.names[i],
            "value": float(attr.contributions[i]),
            "direction": "increases uncertainty" if attr.contributions[i] > 0 else "decreases uncertainty",
        }
        for i in order
        if abs(attr.contributions[i]) >= min_magnitude
    ]
    return {"base_value": attr.base_value, "fx": attr.fx, "segments": segments}


def narrate(attr: Attribution, min_magnitude: float = 1e-4) -> str:
    lines: List[str] = [f"Estimated uncertainty is {attr.fx:.3f} against a base value of {attr.base_value:.3f}."]
    segments = force_plot_data(attr, min_magnitude)["segments"]
    if not segments:
        lines.append("No factor materially changed the uncertainty.")
    for segment in segments:
        phrase = PHRASES.get(segment["name"], segment["name"])
        verb = "increased" if segment["value"] > 0 else "lowered"
        lines.append(f"{phrase[0].upper()}{phrase[1:]} ({segment['name']}) {verb} the uncertainty by {abs(segment['value']):.3f}.")
    return "\n".join(lines)


def explain_many(
    model: FuzzyClusterModel,
    meta: np.ndarray,
    background: KnowledgeBase,
    config: Optional[ExplainConfig] = None,
    seed: Seed = 0,
) -> List[Attribution]:
    meta = np.atleast_2d(np.asarray(meta, dtype=float))
    if meta.shape[1] != len(META_FEATURES):
        raise InputError(f"Expected {len(META_FEATURES)} meta-feature columns, got {meta.shape[1]}")
    return [shapley(model, row, background, config, seed) for row in meta]

"""Pipeline nodes."""
from .abstention_analyzer import abstention_analyzer
from .dataset_loader import dataset_loader
from .evaluator import evaluator
from .explainer import explainer
from .kb_builder import kb_builder
from .metafeature_extractor import metafeature_extractor
from .policy_sweep import policy_sweep
from .report_generator import report_generator
from .synthetic_generator import synthetic_generator
from .trainer import trainer
from .uncertainty_estimator import uncertainty_estimator

__all__ = [
    'abstention_analyzer',
    'dataset_loader',
    'evaluator',
    'explainer',
    'kb_builder',
    'metafeature_extractor',
    'policy_sweep',
    'report_generator',
    'synthetic_generator',
    'trainer',
    'uncertainty_estimator',
]

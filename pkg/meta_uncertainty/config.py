"""Configuration management for uncertainty runs."""
import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError, field_validator

from .errors import ConfigError, MissingArtifactError
from .estimator import EstimatorConfig
from .explain import ExplainConfig
from .knowledgebase import KnowledgeBaseConfig, SamplingPolicy
from .learners import ClassifierKind, ClassifierSpec
from .metafeatures import MetaFeatureConfig
from .synthgen import GRID_LEVELS, GASettings

ENV_OVERRIDES = {
    "META_UNCERTAINTY_SEED": "seed",
    "META_UNCERTAINTY_THREADS": "threads",
    "META_UNCERTAINTY_OUT_DIR": "paths.out_dir",
}


class DatasetEntry(BaseModel):
    """One CSV dataset. ``role`` separates evaluation targets from knowledge-base sources."""

    path: str
    schema_file: Optional[str] = None
    id: Optional[str] = None
    role: Literal["target", "kb"] = "target"
    provenance: Literal["real", "synthetic"] = "real"

    @property
    def dataset_id(self) -> str:
        return self.id or Path(self.path).stem

    @property
    def resolved_schema(self) -> Path:
        return Path(self.schema_file) if self.schema_file else Path(self.path).with_suffix(".schema.json")


class PathsConfig(BaseModel):
    datasets: List[DatasetEntry] = Field(default_factory=list)
    kb: Optional[str] = None
    out_dir: str = "out"


class LearnerConfig(BaseModel):
    kinds: List[ClassifierKind] = Field(default_factory=lambda: list(ClassifierKind))

    def specs(self) -> List[ClassifierSpec]:
        return [ClassifierSpec.default(kind) for kind in self.kinds]


class SynthConfig(BaseModel):
    enabled: bool = True
    levels: List[float] = Field(default_factory=lambda: list(GRID_LEVELS))
    ga: GASettings = Field(default_factory=GASettings)


class LoggingConfig(BaseModel):
    level: str = "INFO"
    format: str = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


class DebugConfig(BaseModel):
    enabled: bool = False
    level: str = "DEBUG"
    log_state: bool = False
    log_errors_full: bool = True
    outputs: Dict[str, Any] = Field(default_factory=lambda: {"file": False, "file_path": "debug/debug.log"})
    save_intermediate: Dict[str, Any] = Field(
        default_factory=lambda: {"enabled": False, "path": "debug/intermediate", "formats": ["json"]}
    )


class RunConfig(BaseModel):
    seed: int
    threads: Optional[int] = None
    missing_policy: Literal["reject", "impute"] = "reject"
    explain_top: int = Field(default=3, ge=0)
    paths: PathsConfig = Field(default_factory=PathsConfig)
    metafeatures: MetaFeatureConfig = Field(default_factory=MetaFeatureConfig)
    learners: LearnerConfig = Field(default_factory=LearnerConfig)
    synth: SynthConfig = Field(default_factory=SynthConfig)
    knowledge_base: KnowledgeBaseConfig = Field(default_factory=KnowledgeBaseConfig)
    sampling: SamplingPolicy = Field(default_factory=SamplingPolicy)
    estimator: EstimatorConfig = Field(default_factory=EstimatorConfig)
    explain: ExplainConfig = Field(default_factory=ExplainConfig)
    logging: LoggingConfig = Field(default_factory=LoggingConfig)
    debug: DebugConfig = Field(default_factory=DebugConfig)

    @field_validator("threads")
    @classmethod
    def _positive_threads(cls, value: Optional[int]) -> Optional[int]:
        if value is not None and value < 1:
            raise ValueError("threads must be at least 1")
        return value

    @property
    def n_jobs(self) -> int:
        return self.threads or os.cpu_count() or 1

    def estimator_config(self) -> EstimatorConfig:
        return self.estimator.model_copy(update={"sampling": self.sampling, "n_jobs": self.n_jobs})

    def kb_config(self) -> KnowledgeBaseConfig:
        return self.knowledge_base.model_copy(update={"n_jobs": self.n_jobs})

    def ga_settings(self) -> GASettings:
        return self.synth.ga.model_copy(update={"n_jobs": self.n_jobs})


class Config:
    """Configuration manager.

    Values come from the YAML file, then ``META_UNCERTAINTY_*`` environment
    variables, then explicit overrides (command-line flags).
    """

    def __init__(self, config_path: Optional[str] = "config/config.yaml", overrides: Optional[Dict[str, Any]] = None):
        load_dotenv()
        self.config_path = config_path
        self._config = self._load_config(overrides or {})
        try:
            self.run = RunConfig.model_validate(self._config)
        except ValidationError as e:
            raise ConfigError(f"Invalid configuration {config_path or '<defaults>'}: {e}")

    def _load_config(self, overrides: Dict[str, Any]) -> Dict[str, Any]:
        """Load configuration from YAML file."""
        config: Dict[str, Any] = {}
        if self.config_path:
            if not Path(self.config_path).exists():
                raise MissingArtifactError(f"Config file not found: {self.config_path}")
            with open(self.config_path, "r", encoding="utf-8") as f:
                try:
                    config = yaml.safe_load(f) or {}
                except yaml.YAMLError as e:
                    raise ConfigError(f"Config file {self.config_path} is not valid YAML: {e}")
            if not isinstance(config, dict):
                raise ConfigError(f"Config file {self.config_path} must hold a mapping")

        # Override with environment variables, then explicit values
        for env, key in ENV_OVERRIDES.items():
            if os.getenv(env):
                _set_dotted(config, key, os.environ[env])
        for key, value in overrides.items():
            if value is not None:
                _set_dotted(config, key, value)
        return config

    def get(self, key: str, default: Any = None) -> Any:
        """Get configuration value by key."""
        keys = key.split(".")
        value: Any = self.run.model_dump(mode="json")
        for k in keys:
            if isinstance(value, dict):
                value = value.get(k, default)
            else:
                return default
        return value

    @property
    def seed(self) -> int:
        return self.run.seed

    @property
    def out_dir(self) -> Path:
        return Path(self.run.paths.out_dir)

    @property
    def datasets(self) -> List[DatasetEntry]:
        return self.run.paths.datasets

    @property
    def debug(self) -> Dict[str, Any]:
        return {"debug": self.run.debug.model_dump()}


def _set_dotted(config: Dict[str, Any], key: str, value: Any) -> None:
    node = config
    parts = key.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
    node[parts[-1]] = value

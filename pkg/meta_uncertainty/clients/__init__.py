"""File-system adapters for datasets and run artifacts."""

from .artifact_store import ArtifactStore, atomic_write_text, file_sha256
from .dataset_reader import DatasetReader

__all__ = ['ArtifactStore', 'DatasetReader', 'atomic_write_text', 'file_sha256']

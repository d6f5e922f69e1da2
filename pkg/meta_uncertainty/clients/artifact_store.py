"""Atomic artifact I/O, format-version checks and run manifests."""
import hashlib
import json
import logging
import os
import tempfile
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Union

import pandas as pd

from ..core import DatasetSchema, FeatureKind, LabelledDataset
from ..errors import MissingArtifactError, VersionMismatchError

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.10g"
MANIFEST_FORMAT_VERSION = 1

PathLike = Union[str, Path]


def atomic_write_text(path: Path, text: str) -> Path:
    """Write ``text`` through a temporary file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def file_sha256(path: PathLike) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def dataset_frame(ds: LabelledDataset) -> pd.DataFrame:
    """The dataset in its CSV layout: schema columns, category names restored, class labels last."""
    columns: Dict[str, Any] = {}
    for j, spec in enumerate(ds.schema.features):
        values = ds.X[:, j]
        names = ds.categories.get(spec.name) or spec.levels
        if spec.kind != FeatureKind.CONTINUOUS and names:
            columns[spec.name] = [names[int(v)] for v in values]
        else:
            columns[spec.name] = values
    columns[ds.schema.class_column] = ds.labels
    return pd.DataFrame(columns)


class ArtifactStore:
    """Output directory of one run."""

    def __init__(self, root: PathLike, tool_version: Optional[str] = None):
        self.root = Path(root)
        if tool_version is None:
            from .. import __version__ as tool_version
        self.tool_version = tool_version
        self.written: List[Path] = []
        self.read: List[Path] = []

    def path(self, relative: PathLike) -> Path:
        return self.root / relative

    def exists(self, relative: PathLike) -> bool:
        return self.path(relative).exists()

    def write_text(self, relative: PathLike, text: str) -> Path:
        path = atomic_write_text(self.path(relative), text)
        self.written.append(path)
        logger.debug(f"Wrote {path}")
        return path

    def write_json(self, relative: PathLike, data: Any) -> Path:
        return self.write_text(relative, json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n")

    def write_csv(self, relative: PathLike, frame: pd.DataFrame) -> Path:
        return self.write_text(relative, frame.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n"))

    def write_dataset(self, relative: PathLike, ds: LabelledDataset) -> Path:
        """CSV plus ``.schema.json`` and ``.meta.json`` sidecars."""
        path = self.write_csv(relative, dataset_frame(ds))
        self.write_text(Path(relative).with_suffix(".schema.json"), ds.schema.model_dump_json(indent=2) + "\n")
        self.write_json(
            Path(relative).with_suffix(".meta.json"),
            {"id": ds.id, "provenance": ds.provenance, "metadata": ds.metadata},
        )
        return path

    def read_text(self, relative: PathLike) -> str:
        path = self.path(relative)
        if not path.exists():
            raise MissingArtifactError(f"Artifact not found: {path}")
        self.read.append(path)
        return path.read_text(encoding="utf-8")

    def read_json(self, relative: PathLike, kind: Optional[str] = None, version: Optional[int] = None) -> Dict[str, Any]:
        data = json.loads(self.read_text(relative))
        if kind is not None and data.get("kind") != kind:
            raise VersionMismatchError(f"{self.path(relative)}: expected a '{kind}' artifact, got '{data.get('kind')}'")
        if version is not None and data.get("format_version") != version:
            raise VersionMismatchError(
                f"{self.path(relative)}: format_version {data.get('format_version')}, expected {version}"
            )
        return data

    def read_csv(self, relative: PathLike) -> pd.DataFrame:
        path = self.path(relative)
        if not path.exists():
            raise MissingArtifactError(f"Artifact not found: {path}")
        self.read.append(path)
        return pd.read_csv(path)

    def read_dataset(self, relative: PathLike, missing_policy: str = "reject") -> LabelledDataset:
        from .dataset_reader import DatasetReader

        csv_path = self.path(relative)
        self.read.append(csv_path)
        schema = DatasetSchema.from_json(csv_path.with_suffix(".schema.json"))
        meta_path = Path(relative).with_suffix(".meta.json")
        sidecar = json.loads(self.read_text(meta_path)) if self.exists(meta_path) else {}
        ds = DatasetReader(csv_path, schema, missing_policy).read(
            dataset_id=sidecar.get("id", csv_path.stem), provenance=sidecar.get("provenance", "real")
        )
        if sidecar.get("metadata"):
            ds.metadata.update(sidecar["metadata"])
        return ds

    def write_manifest(
        self,
        command: str,
        seed: int,
        inputs: Iterable[PathLike] = (),
        outputs: Optional[Iterable[PathLike]] = None,
    ) -> Path:
        """Record input and output hashes; ``content_hash`` covers everything except the timestamp."""
        outputs = list(outputs) if outputs is not None else list(self.written)
        body = {
            "format_version": MANIFEST_FORMAT_VERSION,
            "kind": "manifest",
            "command": command,
            "seed": int(seed),
            "tool_version": self.tool_version,
            "inputs": {
                _relative(Path(p), self.root): file_sha256(p) for p in sorted({str(p) for p in inputs}) if Path(p).is_file()
            },
            "outputs": {
                _relative(Path(p), self.root): file_sha256(p) for p in sorted({str(p) for p in outputs}) if Path(p).is_file()
            },
        }
        body["content_hash"] = hashlib.sha256(json.dumps(body, sort_keys=True).encode("utf-8")).hexdigest()
        body["timestamp"] = datetime.now(timezone.utc).isoformat()
        path = atomic_write_text(self.path(f"manifests/{command}.json"), json.dumps(body, indent=2, sort_keys=True) + "\n")
        logger.info(f"Manifest for '{command}': {len(body['outputs'])} outputs, content hash {body['content_hash'][:12]}")
        return path


def _relative(path: Path, root: Path) -> str:
    try:
        return path.resolve().relative_to(root.resolve()).as_posix()
    except ValueError:
        return str(path)


def _json_default(value: Any) -> Any:
    if hasattr(value, "tolist"):
        return value.tolist()
    if hasattr(value, "item"):
        return value.item()
    return str(value)

"""
Experiment artifacts.

Atomic file writes (temp file in the destination directory, then rename),
CSV series, SHA-256 provenance, and the per-experiment directory layout::

    <out_dir>/<experiment_id>/
        config.json      snapshot of every parameter and seed
        <series>.csv     one file per metric series, header row first
        manifest.json    experiment id, provenance, file list with hashes

Nothing time-dependent is written, so identical inputs give identical files.
"""

import csv
import hashlib
import io
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

from logging_config import get_logger

logger = get_logger(__name__)

CODE_VERSION = "1.0.0"

PathLike = Union[str, Path]


def atomic_write_bytes(path: PathLike, data: bytes) -> Path:
    """Write ``data`` to ``path`` so readers never observe a partial file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    return path


def atomic_write_text(path: PathLike, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def csv_text(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(list(header))
    for row in rows:
        writer.writerow([_format_cell(v) for v in row])
    return buffer.getvalue()


def _format_cell(value: Any) -> Any:
    if hasattr(value, "item"):
        value = value.item()
    if isinstance(value, float):
        return repr(value)
    return value


def write_csv(path: PathLike, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    """Atomically write a CSV file with a header row."""
    return atomic_write_text(path, csv_text(header, rows))


def read_csv(path: PathLike) -> List[Dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: PathLike) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass
class Series:
    """One CSV-backed metric series."""

    header: List[str]
    rows: List[List[Any]] = field(default_factory=list)

    def add(self, *row: Any):
        self.rows.append(list(row))


@dataclass
class ExperimentReport:
    """
    Metric outputs of one experiment in a stable serialized form.

    Attributes
    ----------
    experiment_id: directory name of the experiment
    config: snapshot of every parameter and seed used
    series: metric series by name (written as <name>.csv)
    model_sha256: hash of the input model file, when there is one
    code_version: toolkit version string

    Example
    -------
        >>> report = ExperimentReport("table1", {"s": 50})
        >>> report.series["table1"] = Series(["config", "mse"])
        >>> report.write("runs")
    """

    experiment_id: str
    config: Dict[str, Any]
    series: Dict[str, Series] = field(default_factory=dict)
    model_sha256: Optional[str] = None
    code_version: str = CODE_VERSION
    extra_files: Dict[str, bytes] = field(default_factory=dict)

    def new_series(self, name: str, header: Sequence[str]) -> Series:
        series = Series(list(header))
        self.series[name] = series
        return series

    def write(self, out_dir: PathLike) -> Path:
        """Write config, series and manifest; returns the experiment directory."""
        exp_dir = Path(out_dir) / self.experiment_id
        exp_dir.mkdir(parents=True, exist_ok=True)

        files: Dict[str, str] = {}
        config_bytes = json.dumps(self.config, indent=2, sort_keys=True, default=_json_default).encode("utf-8")
        atomic_write_bytes(exp_dir / "config.json", config_bytes)
        files["config.json"] = sha256_bytes(config_bytes)

        for name, series in sorted(self.series.items()):
            data = csv_text(series.header, series.rows).encode("utf-8")
            atomic_write_bytes(exp_dir / f"{name}.csv", data)
            files[f"{name}.csv"] = sha256_bytes(data)

        for name, data in sorted(self.extra_files.items()):
            atomic_write_bytes(exp_dir / name, data)
            files[name] = sha256_bytes(data)

        manifest = {
            "experiment_id": self.experiment_id,
            "code_version": self.code_version,
            "model_sha256": self.model_sha256,
            "seed": self.config.get("seed"),
            "files": files,
        }
        atomic_write_text(exp_dir / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True))
        logger.info(f"Wrote experiment '{self.experiment_id}' ({len(files)} files) to {exp_dir}")
        return exp_dir


def _json_default(value: Any):
    if hasattr(value, "tolist"):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    if hasattr(value, "__dict__"):
        return vars(value)
    raise TypeError(f"not JSON serialisable: {type(value).__name__}")

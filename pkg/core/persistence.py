"""
Result persistence - reports, checkpoints and the operator cache on disk.

Reports are CSV tables plus JSON documents written with fixed column order
and sorted keys, so equal results give byte-identical files. Checkpoints use a
small versioned binary layout. The operator cache stores assembled collocation
blocks as .npz files under CACHE_DIR/v{ARTIFACT_VERSION}.
"""

import csv
import io
import json
import logging
import pathlib
import struct
import zipfile
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict

from .config import settings
from .errors import InvalidArgumentError, ReportWriteError
from .models import ReportBundle, RunManifest

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"SHSTCKPT"
CHECKPOINT_VERSION = 1
CHECKPOINT_HEADER = struct.Struct("<8sIIIdd")

MANIFEST_NAME = "manifest.json"
SUMMARY_NAME = "summary.json"


def _format_cell(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return "%.17g" % value
    return str(value)


def _write_text(path: pathlib.Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            f.write(text)
    except OSError as e:
        raise ReportWriteError(str(path), str(e)) from e


def write_csv(path: pathlib.Path, columns: Sequence[str], rows: Iterable[Sequence]) -> None:
    """Write a CSV table with a header row and full-precision floats."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        if len(row) != len(columns):
            raise InvalidArgumentError(f"Row has {len(row)} cells, table has {len(columns)} columns")
        writer.writerow([_format_cell(v) for v in row])
    _write_text(pathlib.Path(path), buffer.getvalue())


def write_json(path: pathlib.Path, data) -> None:
    """Write a model or plain dict as sorted, indented JSON."""
    if isinstance(data, BaseModel):
        data = data.model_dump(mode="json")
    _write_text(pathlib.Path(path), json.dumps(data, indent=2, sort_keys=True) + "\n")


def emit_report(results: ReportBundle, out_dir: pathlib.Path, manifest: RunManifest) -> List[str]:
    """Write the tables, the summary and exactly one manifest into ``out_dir``.

    Returns the names of the files written, manifest last.
    """
    out_dir = pathlib.Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ReportWriteError(str(out_dir), str(e)) from e

    outputs = []
    for name in sorted(results.tables):
        table = results.tables[name]
        filename = f"{name}.csv"
        write_csv(out_dir / filename, table.columns, table.rows)
        outputs.append(filename)

    summary = dict(results.summary)
    summary["checks"] = dict(sorted(results.checks.items()))
    summary["passed"] = results.passed
    write_json(out_dir / SUMMARY_NAME, summary)
    outputs.append(SUMMARY_NAME)

    manifest = manifest.model_copy(update={"outputs": outputs + [MANIFEST_NAME]})
    write_json(out_dir / MANIFEST_NAME, manifest)
    outputs.append(MANIFEST_NAME)
    logger.info(f"✓ Wrote {len(outputs)} files to {out_dir}")
    return outputs


# ============================================================================
# Checkpoints
# ============================================================================


class Checkpoint(BaseModel):
    """Raw checkpoint contents: slot 0 is u1_0, slot k >= 1 is omega_k."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    k_max: int
    n: int
    nu: float
    time: float
    slots: np.ndarray


def save_checkpoint(path: pathlib.Path, checkpoint: Checkpoint) -> None:
    slots = np.asarray(checkpoint.slots)
    if slots.shape != (checkpoint.k_max + 1, checkpoint.n):
        raise InvalidArgumentError(
            f"Checkpoint slots have shape {slots.shape}, expected {(checkpoint.k_max + 1, checkpoint.n)}"
        )
    header = CHECKPOINT_HEADER.pack(
        CHECKPOINT_MAGIC, CHECKPOINT_VERSION, checkpoint.k_max, checkpoint.n, checkpoint.nu, checkpoint.time
    )
    payload = slots.astype("<c8").tobytes()
    path = pathlib.Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as f:
            f.write(header + payload)
    except OSError as e:
        raise ReportWriteError(str(path), str(e)) from e


def load_checkpoint(path: pathlib.Path) -> Checkpoint:
    """Read a checkpoint, rejecting foreign or truncated files."""
    data = pathlib.Path(path).read_bytes()
    if len(data) < CHECKPOINT_HEADER.size:
        raise InvalidArgumentError(f"{path} is too short to be a checkpoint")
    magic, version, k_max, n, nu, t = CHECKPOINT_HEADER.unpack_from(data)
    if magic != CHECKPOINT_MAGIC:
        raise InvalidArgumentError(f"{path} is not a checkpoint file")
    if version != CHECKPOINT_VERSION:
        raise InvalidArgumentError(f"{path} has checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    payload = data[CHECKPOINT_HEADER.size :]
    expected = (k_max + 1) * n * 8
    if len(payload) != expected:
        raise InvalidArgumentError(f"{path} payload has {len(payload)} bytes, expected {expected}")
    slots = np.frombuffer(payload, dtype="<c8").reshape(k_max + 1, n).astype(complex)
    return Checkpoint(k_max=k_max, n=n, nu=nu, time=t, slots=slots)


def list_checkpoints(directory: pathlib.Path) -> List[pathlib.Path]:
    """Checkpoint files in a directory, oldest simulation time first."""
    found = []
    for path in pathlib.Path(directory).glob("*.ckpt"):
        try:
            with open(path, "rb") as f:
                head = f.read(CHECKPOINT_HEADER.size)
            magic, _, _, _, _, t = CHECKPOINT_HEADER.unpack(head)
        except (OSError, struct.error):
            # Skip unreadable files
            continue
        if magic == CHECKPOINT_MAGIC:
            found.append((t, path.name, path))
    return [path for _, _, path in sorted(found)]


# ============================================================================
# Operator cache
# ============================================================================


class OperatorCache:
    """On-disk store of assembled collocation blocks, one .npz file per key."""

    def __init__(self, root: Optional[pathlib.Path] = None, version: Optional[int] = None):
        root = pathlib.Path(root if root is not None else settings.CACHE_DIR)
        self.directory = root / f"v{version if version is not None else settings.ARTIFACT_VERSION}"

    def _path(self, key: str) -> pathlib.Path:
        return self.directory / f"{key}.npz"

    def load(self, key: str) -> Optional[Dict[str, np.ndarray]]:
        path = self._path(key)
        if not path.exists():
            return None
        try:
            with np.load(path) as data:
                return {name: data[name] for name in data.files}
        except (OSError, ValueError, EOFError, zipfile.BadZipFile) as e:
            # Skip corrupted files
            logger.warning(f"Ignoring corrupt cache entry {path}: {e}")
            return None

    def store(self, key: str, **arrays: np.ndarray) -> None:
        path = self._path(key)
        try:
            self.directory.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(".tmp.npz")
            np.savez(tmp, **arrays)
            tmp.replace(path)
        except OSError as e:
            logger.warning(f"Could not write cache entry {path}: {e}")

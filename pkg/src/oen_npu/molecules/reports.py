"""
Deterministic CSV/JSON emission and run manifests.

Data files never contain timestamps, so identical runs produce identical bytes. The
manifest written next to each data file records how it was produced.
"""

import csv
import datetime
import io
import json
import logging
import math
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, Field

from .. import __version__

logger = logging.getLogger(__name__)

MANIFEST_SUFFIX = ".manifest.json"


class RunManifest(BaseModel):
    """Reproducibility record of one CLI run."""

    tool_version: str = __version__
    subcommand: str
    arguments: Dict[str, Any] = Field(default_factory=dict)
    seed: Optional[int] = None
    config_path: Optional[str] = None
    config: Dict[str, Any] = Field(default_factory=dict)
    outputs: List[str] = Field(default_factory=list)
    created_at: str = Field(
        default_factory=lambda: datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")
    )


def jsonable(value: Any) -> Any:
    """
    Convert a value to plain JSON types.

    numpy scalars and arrays become Python numbers and lists, enums their values,
    pydantic models their JSON dump. Non-finite floats become None.
    """
    if isinstance(value, BaseModel):
        return jsonable(value.model_dump(mode="python"))
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return jsonable(value.tolist())
    if isinstance(value, np.generic):
        return jsonable(value.item())
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, Path):
        return str(value)
    return value


def _cell(value: Any) -> str:
    value = jsonable(value)
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def csv_text(rows: Sequence[Union[Dict[str, Any], Sequence[Any]]], columns: Sequence[str]) -> str:
    """
    Render rows as RFC 4180 CSV (CRLF line endings, minimal quoting).

    Args:
        rows: Dictionaries keyed by column, or sequences in column order
        columns: Header

    Returns:
        CSV text
    """
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\r\n", quoting=csv.QUOTE_MINIMAL)
    writer.writerow(columns)
    for row in rows:
        values = [row.get(c) for c in columns] if isinstance(row, dict) else list(row)
        if len(values) != len(columns):
            raise ValueError(f"Row has {len(values)} values for {len(columns)} columns")
        writer.writerow([_cell(v) for v in values])
    return buffer.getvalue()


def json_text(data: Any) -> str:
    """Render data as sorted, indented JSON with a trailing newline."""
    return json.dumps(jsonable(data), sort_keys=True, indent=2, allow_nan=False) + "\n"


def _write(path: Union[str, Path], text: str) -> Path:
    file_path = Path(path)
    file_path.parent.mkdir(parents=True, exist_ok=True)
    with open(file_path, "w", encoding="utf-8", newline="") as f:
        f.write(text)
    logger.debug(f"Wrote {file_path}")
    return file_path


def write_csv(path: Union[str, Path], rows: Sequence[Any], columns: Sequence[str]) -> Path:
    return _write(path, csv_text(rows, columns))


def write_json(path: Union[str, Path], data: Any) -> Path:
    return _write(path, json_text(data))


def manifest_path(output: Union[str, Path]) -> Path:
    output = Path(output)
    return output.with_name(output.name + MANIFEST_SUFFIX)


def write_manifest(output: Union[str, Path], manifest: RunManifest) -> Path:
    """
    Write the manifest that accompanies an output file.

    Args:
        output: The data file the manifest describes
        manifest: Manifest; the output path is appended to its outputs

    Returns:
        Path of the manifest file
    """
    outputs = list(manifest.outputs)
    if str(output) not in outputs:
        outputs.append(str(output))
    record = manifest.model_copy(update={"outputs": outputs})
    return _write(manifest_path(output), json_text(record))

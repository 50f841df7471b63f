import csv
import io
import json
import math
import sys
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel

from .._version import SCHEMA_VERSION

SIGNIFICANT_DIGITS = 12


def _fixed(x: float) -> Optional[float]:
    if not math.isfinite(x):
        return None
    return float(format(x, f".{SIGNIFICANT_DIGITS}g"))


def normalize(obj: Any) -> Any:
    """Round every float to 12 significant digits; numpy and pydantic become plain data."""
    if isinstance(obj, BaseModel):
        return normalize(obj.model_dump(mode="json", by_alias=True))
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, dict):
        return {str(k): normalize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [normalize(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return normalize(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _fixed(float(obj))
    return obj


def make_envelope(command: str, payload: Union[BaseModel, Dict[str, Any]]) -> dict:
    """
    Wrap one command result in the output envelope.

    * ``schema_version`` and ``command`` come first, then the payload fields in
      declaration order.
    * Floats are fixed at 12 significant digits.
    """
    body = normalize(payload)
    if not isinstance(body, dict):
        body = {"result": body}
    return {"schema_version": SCHEMA_VERSION, "command": command, **body}


def dumps(envelope: dict) -> str:
    return json.dumps(envelope, ensure_ascii=False, allow_nan=False) + "\n"


def format_cell(value: Any) -> str:
    if isinstance(value, (float, np.floating)):
        return format(float(value), f".{SIGNIFICANT_DIGITS}g")
    return str(value)


def csv_text(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_cell(v) for v in row])
    return buffer.getvalue()


def density_header(n: int, K: int) -> list:
    return ["t"] + [f"u[{k}][{i}]" for k in range(K + 1) for i in range(n)]


def emit(text: str, out: Optional[Path] = None) -> None:
    """Write ``text`` to ``out`` or to standard output."""
    if out is None:
        sys.stdout.write(text)
        return
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text, encoding="utf-8")

# src/backends/fs_backend.py
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Any, Iterable, List, Sequence

from src.core.errors import ValidationError


def format_float(value: Any, float_format: str = "repr") -> str:
    """Render one CSV cell; floats use repr (shortest round-trip) unless a format spec is given."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return repr(value) if float_format == "repr" else format(value, float_format)
    return str(value)


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if hasattr(obj, "tolist"):
        return _jsonable(obj.tolist())
    return obj


def dumps_json(obj: Any) -> str:
    """Deterministic JSON text: sorted keys, repr floats, NaN/inf written as null."""
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True, ensure_ascii=False, allow_nan=False) + "\n"


def csv_text(header: Sequence[str], rows: Iterable[Sequence[Any]], float_format: str = "repr") -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(header))
    for row in rows:
        if len(row) != len(header):
            raise ValidationError(f"csv row has {len(row)} cells, header has {len(header)}")
        w.writerow([format_float(v, float_format) for v in row])
    return buf.getvalue()


def atomic_write_text(path: Path, text: str) -> None:
    """Write via a temporary file in the target folder, then rename over the destination."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=str(path.parent))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: Path, obj: Any) -> None:
    atomic_write_text(path, dumps_json(obj))


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]], float_format: str = "repr") -> None:
    atomic_write_text(path, csv_text(header, rows, float_format))


def read_csv(path: Path) -> List[dict]:
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()

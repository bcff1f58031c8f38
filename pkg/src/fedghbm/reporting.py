"""CSV / JSON writers. Files are written to a temp name and renamed into place."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

RUN_COLUMNS = ("round", "train_loss", "test_loss", "test_accuracy", "deviation", "bytes_cum")


def fmt(value) -> str:
    """Cell text: ints verbatim, reals with 17 significant digits, None empty."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return format(value, ".17g")
    return str(value)


def _atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    _atomic_write(path, csv_text(header, rows))


def write_json(path, obj) -> None:
    _atomic_write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def run_rows(result):
    for r in result.records:
        yield (r.round, r.train_loss, r.test_loss, r.test_accuracy, r.deviation, r.bytes_cum)


def run_csv_text(result) -> str:
    return csv_text(RUN_COLUMNS, run_rows(result))


def write_run_csv(path, result) -> None:
    _atomic_write(path, run_csv_text(result))

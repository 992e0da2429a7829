"""
Writers for run artifacts: CSV tables with '#' metadata headers, JSON documents and
flat little-endian float64 carpets with a JSON sidecar.

Outputs carry no timestamps, so identical inputs give byte-identical files.
"""
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Sequence
import csv
import json
import logging
import math

import numpy as np

from app.core.config import settings

logger = logging.getLogger(__name__)


class ExportService:
    """Writes artifacts into one output directory."""

    def __init__(self, out_dir: str, float_format: Optional[str] = None):
        self.out_dir = Path(out_dir)
        self.float_format = float_format or settings.CSV_FLOAT_FORMAT
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.written = []

    def path(self, name: str) -> Path:
        return self.out_dir / name

    def _format(self, value: Any) -> str:
        if isinstance(value, (bool, np.bool_)):
            return "1" if value else "0"
        if isinstance(value, (int, np.integer)):
            return str(int(value))
        value = float(value)
        if math.isnan(value):
            return ""
        return self.float_format % value

    def _record(self, path: Path) -> Path:
        self.written.append(path.name)
        logger.debug(f"Wrote {path}")
        return path

    def write_csv(
        self,
        name: str,
        columns: Mapping[str, Sequence[Any]],
        metadata: Optional[Mapping[str, Any]] = None
    ) -> Path:
        """
        Write a table with one '# key=value' line per metadata entry.

        NaN cells are written as empty fields; infinities as 'inf' / '-inf'.

        Args:
            name: File name inside the output directory
            columns: Ordered column name -> values, all of equal length
            metadata: Header entries

        Returns:
            Path of the written file
        """
        names = list(columns)
        data = [np.asarray(columns[c]) for c in names]
        rows = {len(col) for col in data}
        if len(rows) > 1:
            raise ValueError(f"columns of {name} have different lengths: {sorted(rows)}")

        path = self.path(name)
        with path.open("w", newline="", encoding="utf-8") as f:
            for key, value in (metadata or {}).items():
                f.write(f"# {key}={value}\n")
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(names)
            for i in range(rows.pop() if rows else 0):
                writer.writerow([self._format(col[i]) for col in data])
        return self._record(path)

    def write_json(self, name: str, payload: Any) -> Path:
        path = self.path(name)
        path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n")
        return self._record(path)

    def write_matrix(self, name: str, matrix: np.ndarray, sidecar: Dict[str, Any]) -> Path:
        """Row-major little-endian float64 dump plus a <stem>.json sidecar."""
        path = self.path(name)
        np.ascontiguousarray(matrix, dtype="<f8").tofile(path)
        self._record(path)
        meta = dict(sidecar)
        meta.update({"dtype": "float64", "byteorder": "little", "order": "C", "shape": list(matrix.shape)})
        self.write_json(Path(name).with_suffix(".json").name, meta)
        return path


def _json_default(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"{type(value).__name__} is not JSON serialisable")

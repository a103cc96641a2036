"""Serialization of run results: JSON reports and plot-ready CSV tables."""
import json
import logging
import os
from typing import Any, Dict, List, Sequence

import numpy as np

from hetero_melnikov.spec_file import SCHEMA_VERSION

logger = logging.getLogger(__name__)


def _to_builtin(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def write_json(payload: Dict, output_path: str) -> None:
    """Json serialization of a report, stamped with the schema version."""
    assert os.path.isdir(os.path.dirname(output_path)), f"folder {os.path.dirname(output_path)} doesn't exist."
    with open(output_path, "w") as f:
        json.dump({"schema_version": SCHEMA_VERSION, **payload}, f, sort_keys=True, indent=2, default=_to_builtin)
        f.write("\n")
    logger.debug(f"wrote {output_path}")


def write_csv(header: Sequence[str], rows: List[Sequence[float]], output_path: str) -> None:
    """Comma-separated table with a header line; floats keep full precision, no locale."""
    assert os.path.isdir(os.path.dirname(output_path)), f"folder {os.path.dirname(output_path)} doesn't exist."
    table = np.array(rows, dtype=float).reshape(len(rows), len(header))
    np.savetxt(output_path, table, fmt="%.17g", delimiter=",", header=",".join(header), comments="")
    logger.debug(f"wrote {len(rows)} rows to {output_path}")

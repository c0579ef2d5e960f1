#  Copyright (c) 2025. TechDev Andrade Ltda.
#  All rights reserved.
#  This source code is the intellectual property of TechDev Andrade Ltda and is intended for private use, research, or internal projects only. Redistribution and use in source or binary forms are not permitted without prior written permission.

"""Schema-versioned CSV logs.

Every file starts with ``# schema: <name> v<version>`` followed by the header row.
Values are written without timestamps so identical runs give identical files.
"""

import csv
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

SCHEMAS: Dict[str, Tuple[int, Tuple[str, ...]]] = {
    "pretrain": (1, ("step", "mode", "loss", "retrieval_acc", "masked", "lr_encoder", "lr_transformer")),
    "drift": (1, ("step", "drift", "retrieval_acc", "snapshot")),
    "teach": (1, ("env_step", "update", "return", "surrogate", "value_loss", "lr")),
    "distill": (1, ("env_step", "update", "alpha", "return", "l_rl", "kl", "total", "lr")),
    "episodes": (1, ("episode", "seed", "cause", "steps", "return", "path_length", "optimal_length",
                     "terminal_distance", "min_distance")),
    "report": (1, ("policy", "episodes", "ne", "os", "sr", "spl", "cr", "tts")),
    "trajectories": (1, ("episode", "step", "x", "y", "heading", "v_x", "v_y", "omega_z", "reward", "cause")),
}


def format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return f"{value:.10g}"
    return str(value)


class CsvLog:
    """Append-only writer for one schema; the file is recreated on open."""

    def __init__(self, path, schema: str) -> None:
        version, columns = SCHEMAS[schema]
        self.path = Path(path)
        self.columns = columns
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._handle = open(self.path, "w", encoding="utf-8", newline="")
        self._handle.write(f"# schema: {schema} v{version}\n")
        self._writer = csv.writer(self._handle, lineterminator="\n")
        self._writer.writerow(columns)

    def write(self, row: Dict[str, object]) -> None:
        self._writer.writerow([format_value(row.get(column)) for column in self.columns])
        self._handle.flush()

    def write_many(self, rows: Sequence[Dict[str, object]]) -> None:
        for row in rows:
            self.write(row)

    def close(self) -> None:
        self._handle.close()

    def __enter__(self) -> "CsvLog":
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        self.close()


def read_csv(path) -> Tuple[str, int, List[Dict[str, str]]]:
    """Return ``(schema, version, rows)`` of a log written by :class:`CsvLog`."""
    with open(path, "r", encoding="utf-8", newline="") as handle:
        first = handle.readline().strip()
        schema, version = "", 0
        if first.startswith("# schema:"):
            name, _, tag = first[len("# schema:"):].strip().partition(" v")
            schema, version = name, int(tag or 0)
        else:
            handle.seek(0)
        rows = list(csv.DictReader(handle))
    return schema, version, rows

"""Atomic, provenance-stamped text outputs.

Every data file starts with ``#`` comment lines carrying the library version,
the command and the fully resolved configuration.  Timestamps go only into a
separate metadata file so that data files are byte-identical across reruns.
"""

from __future__ import annotations

import json
import os
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__

NUMBER_FORMAT = ".17g"


def atomic_write_text(path, text: str) -> Path:
    """Write via a temporary file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def provenance_lines(command: str, config_text: str, derived: dict | None = None) -> list[str]:
    lines = [f"nvwgm {__version__}", f"command: {command}", "config:"]
    lines += [f"  {line}" for line in config_text.splitlines()]
    if derived:
        lines.append("derived:")
        lines += [f"  {k} = {format_cell(v)}" for k, v in derived.items()]
    return [f"# {line}" if line else "#" for line in lines]


def format_cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return format(float(v), NUMBER_FORMAT)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (tuple, list, np.ndarray)):
        return " ".join(format_cell(x) for x in v)
    return str(v)


def render_csv(header: list[str], columns: list[str], rows) -> str:
    out = list(header)
    out.append(",".join(columns))
    for row in rows:
        out.append(",".join(format_cell(v) for v in row))
    return "\n".join(out) + "\n"


def write_csv(path, header: list[str], columns: list[str], rows) -> Path:
    return atomic_write_text(path, render_csv(header, columns, rows))


def write_report(path, header: list[str], body: list[str]) -> Path:
    return atomic_write_text(path, "\n".join(list(header) + list(body)) + "\n")


def read_csv_table(path) -> tuple[list[str], np.ndarray]:
    """Column names and float data of a CSV written by :func:`write_csv`."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise ValueError(f"{path}: no table found")
    columns = lines[0].split(",")
    data = np.array([[float(x) for x in ln.split(",")] for ln in lines[1:]], dtype=float)
    return columns, data.reshape(-1, len(columns))


def write_metadata(out_dir, command: str, argv, outputs, started: float, extra: dict | None = None) -> Path:
    """Run metadata (timestamps, argv, files written) as JSON."""
    meta = {
        "version": __version__,
        "command": command,
        "argv": list(argv),
        "started_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(started)),
        "elapsed_s": round(time.time() - started, 3),
        "outputs": [Path(p).name for p in outputs],
    }
    if extra:
        meta.update(extra)
    return atomic_write_text(Path(out_dir) / f"run_metadata_{command}.json", json.dumps(meta, indent=2) + "\n")

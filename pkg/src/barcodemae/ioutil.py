"""Small I/O helpers: atomic writes and TSV rows.

Every output file in the package goes through `atomic_write` so an error
mid-write never leaves a truncated file behind.
"""

from __future__ import annotations

import os
from contextlib import contextmanager
from pathlib import Path


@contextmanager
def atomic_write(path, mode: str = "w"):
    """Write to `path` via a temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    kwargs = {} if "b" in mode else {"encoding": "utf-8", "newline": "\n"}
    try:
        with open(tmp, mode, **kwargs) as handle:
            yield handle
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise


def write_tsv(path, header, rows):
    """Write a TSV file atomically.  Cells are used as-is (pre-formatted)."""
    with atomic_write(path) as handle:
        handle.write("\t".join(header) + "\n")
        for row in rows:
            handle.write("\t".join(str(cell) for cell in row) + "\n")


def fmt_float(x) -> str:
    """Deterministic shortest round-trip float formatting for TSV output."""
    return repr(float(x))

"""Directory-based weight archives.

Layout::

    <dir>/manifest.txt     one line per entry: ``name kind shape``
    <dir>/<name>.bin       little-endian float32, row-major (tensor entries only)

``shape`` is a comma-joined list of extents, or ``-`` for entries that carry
no data (activation or pooling layers). Blank lines and ``#`` comments are
ignored.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

MANIFEST = "manifest.txt"


class ArchiveError(ValueError):
    pass


@dataclass
class Entry:
    name: str
    kind: str
    data: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...] | None:
        return None if self.data is None else tuple(self.data.shape)


def _check_name(name: str) -> None:
    if not name or any(ch.isspace() for ch in name) or "/" in name or name.startswith("."):
        raise ArchiveError(f"invalid entry name {name!r}")


def write_archive(directory, entries: list[Entry]) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    seen = set()
    for entry in entries:
        _check_name(entry.name)
        if entry.name in seen:
            raise ArchiveError(f"duplicate entry {entry.name!r}")
        seen.add(entry.name)
        if entry.data is None:
            lines.append(f"{entry.name} {entry.kind} -")
            continue
        arr = np.ascontiguousarray(entry.data, dtype="<f4")
        shape = ",".join(str(d) for d in arr.shape) if arr.ndim else "1"
        lines.append(f"{entry.name} {entry.kind} {shape}")
        (directory / f"{entry.name}.bin").write_bytes(arr.tobytes())
    (directory / MANIFEST).write_text("\n".join(lines) + "\n")
    return directory


def read_archive(directory) -> list[Entry]:
    directory = Path(directory)
    manifest = directory / MANIFEST
    if not manifest.is_file():
        raise ArchiveError(f"no {MANIFEST} in {directory}")
    entries = []
    for lineno, line in enumerate(manifest.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ArchiveError(f"{manifest}:{lineno}: expected 'name kind shape'")
        name, kind, shape_txt = parts
        _check_name(name)
        if shape_txt == "-":
            entries.append(Entry(name, kind))
            continue
        try:
            shape = tuple(int(d) for d in shape_txt.split(","))
        except ValueError:
            raise ArchiveError(f"{manifest}:{lineno}: bad shape {shape_txt!r}") from None
        blob = directory / f"{name}.bin"
        if not blob.is_file():
            raise ArchiveError(f"missing data file {blob}")
        raw = np.frombuffer(blob.read_bytes(), dtype="<f4")
        if raw.size != int(np.prod(shape)):
            raise ArchiveError(f"{blob}: {raw.size} values, manifest says {shape}")
        entries.append(Entry(name, kind, raw.reshape(shape).astype(np.float32)))
    return entries

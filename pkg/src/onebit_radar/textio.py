"""Plain-text formats used by the command line.

* complex vectors: one sample per line, ``re im``;
* stacks of vectors (threshold banks, comparator outputs): blocks separated by a blank line;
* complex matrices: CSV rows whose cells are ``re im``, separated by ``;``.
"""

from __future__ import annotations

from pathlib import Path
from typing import List

import numpy as np


def _write(path, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8", newline="\n")


def format_vector(v) -> str:
    v = np.asarray(v, dtype=complex).ravel()
    return "".join(f"{float(z.real)!r} {float(z.imag)!r}\n" for z in v)


def parse_vector(text: str) -> np.ndarray:
    vals = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) == 1:
            parts.append("0")
        if len(parts) != 2:
            raise ValueError(f"line {lineno}: expected 're im', got {line!r}")
        vals.append(complex(float(parts[0]), float(parts[1])))
    if not vals:
        raise ValueError("no samples found")
    return np.array(vals)


def write_vector(path, v) -> None:
    _write(path, format_vector(v))


def read_vector(path) -> np.ndarray:
    return parse_vector(Path(path).read_text(encoding="utf-8"))


def write_stack(path, rows) -> None:
    rows = np.atleast_2d(np.asarray(rows, dtype=complex))
    _write(path, "\n".join(format_vector(r) for r in rows))


def read_stack(path) -> np.ndarray:
    blocks: List[str] = []
    cur: List[str] = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            cur.append(line)
        elif cur:
            blocks.append("\n".join(cur))
            cur = []
    if cur:
        blocks.append("\n".join(cur))
    if not blocks:
        raise ValueError(f"{path}: no vectors found")
    vecs = [parse_vector(b) for b in blocks]
    if len({v.size for v in vecs}) != 1:
        raise ValueError(f"{path}: vectors have different lengths")
    return np.vstack(vecs)


def write_matrix(path, M) -> None:
    M = np.atleast_2d(np.asarray(M, dtype=complex))
    _write(path, "".join(";".join(f"{float(z.real)!r} {float(z.imag)!r}" for z in row) + "\n" for row in M))


def read_matrix(path) -> np.ndarray:
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        cells = [c.split() for c in line.split(";")]
        rows.append([complex(float(c[0]), float(c[1]) if len(c) > 1 else 0.0) for c in cells])
    M = np.array(rows)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"{path}: expected a square matrix")
    return M

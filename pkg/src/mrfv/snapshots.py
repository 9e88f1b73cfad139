"""Snapshot files: a text header, then the raw row-major float64 grid.

The header is `key value` lines terminated by a line reading `DATA`; the
payload is grid.tobytes() with shape (nx, ny, n_species).  Leaf dumps are
plain text, one `level i j status values...` line per node.
"""

from __future__ import annotations

import numpy as np


def save_grid(path, grid: np.ndarray, meta: dict | None = None) -> None:
    grid = np.ascontiguousarray(grid, dtype=np.float64)
    if grid.ndim == 2:
        grid = grid[..., None]
    header = {"nx": grid.shape[0], "ny": grid.shape[1],
              "n_species": grid.shape[2]}
    if meta:
        header.update(meta)
    with open(path, "wb") as fh:
        for k, v in header.items():
            fh.write(f"{k} {v}\n".encode())
        fh.write(b"DATA\n")
        fh.write(grid.tobytes())


def load_grid(path) -> tuple[np.ndarray, dict]:
    meta: dict = {}
    with open(path, "rb") as fh:
        while True:
            line = fh.readline()
            if not line:
                raise ValueError(f"{path}: no DATA marker")
            line = line.decode().strip()
            if line == "DATA":
                break
            k, v = line.split(None, 1)
            meta[k] = v
        raw = fh.read()
    shape = (int(meta["nx"]), int(meta["ny"]), int(meta["n_species"]))
    grid = np.frombuffer(raw, dtype=np.float64).reshape(shape)
    return grid, meta


def save_leaves(path, tree) -> None:
    with open(path, "w") as fh:
        fh.write(tree.dump_leaves())


def load_leaves(path) -> list[tuple]:
    rows = []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            rows.append((int(parts[0]), int(parts[1]), int(parts[2]),
                         parts[3], [float(x) for x in parts[4:]]))
    return rows

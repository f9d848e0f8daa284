"""Plain-text matrix and label files shared by the command-line tools.

Matrix format: a header line ``M N`` followed by M rows of N decimal
numbers separated by whitespace.  Values are written with 17 significant
digits so a write/read round trip reproduces float64 values exactly.
Label files hold one integer per line.
"""

from __future__ import annotations

import os

import numpy as np

__all__ = ["read_matrix", "write_matrix", "read_labels", "write_labels"]


def write_matrix(path: str | os.PathLike, matrix: np.ndarray) -> None:
    mat = np.asarray(matrix, dtype=float)
    if mat.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {mat.shape}")
    rows, cols = mat.shape
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"{rows} {cols}\n")
        for row in mat:
            fh.write(" ".join(format(v, ".17g") for v in row))
            fh.write("\n")


def read_matrix(path: str | os.PathLike) -> np.ndarray:
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise ValueError(f"{path}: malformed header, expected 'M N'")
        rows, cols = int(header[0]), int(header[1])
        if rows < 1 or cols < 1:
            raise ValueError(f"{path}: matrix dimensions must be positive")
        out = np.empty((rows, cols), dtype=float)
        for i in range(rows):
            parts = fh.readline().split()
            if len(parts) != cols:
                raise ValueError(f"{path}: row {i} has {len(parts)} values, expected {cols}")
            out[i] = [float(p) for p in parts]
    return out


def write_labels(path: str | os.PathLike, labels: np.ndarray) -> None:
    arr = np.asarray(labels)
    if arr.ndim != 1:
        raise ValueError("labels must be a vector")
    with open(path, "w", encoding="ascii") as fh:
        for v in arr:
            fh.write(f"{int(v)}\n")


def read_labels(path: str | os.PathLike) -> np.ndarray:
    with open(path, "r", encoding="ascii") as fh:
        values = [int(line) for line in fh if line.strip()]
    return np.asarray(values, dtype=int)

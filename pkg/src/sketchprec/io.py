"""File formats: Matrix Market for sparse matrices, raw float64 blocks for dense data.

A dense block ``name.bin`` holds little-endian float64 values in C order
and is accompanied by ``name.json`` with ``{"shape": [...], "dtype": "<f8"}``.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse as sp

__all__ = ["read_block", "read_json", "read_mtx", "write_block", "write_json", "write_mtx"]


def write_block(path, array) -> Path:
    path = Path(path).with_suffix(".bin")
    a = np.ascontiguousarray(np.asarray(array, dtype="<f8"))
    path.write_bytes(a.tobytes(order="C"))
    write_json(path.with_suffix(".json"), {"shape": list(a.shape), "dtype": "<f8"})
    return path


def read_block(path) -> np.ndarray:
    path = Path(path).with_suffix(".bin")
    header = read_json(path.with_suffix(".json"))
    data = np.frombuffer(path.read_bytes(), dtype=header.get("dtype", "<f8"))
    return data.reshape(header["shape"]).astype(float)


def write_mtx(path, A) -> Path:
    path = Path(path).with_suffix(".mtx")
    A = sp.coo_matrix(A, dtype=float)
    # 17 significant digits round-trip float64 exactly
    scipy.io.mmwrite(str(path), A, precision=17)
    return path


def read_mtx(path) -> sp.csr_matrix:
    A = sp.csr_matrix(scipy.io.mmread(str(Path(path).with_suffix(".mtx"))), dtype=float)
    A.sort_indices()
    return A


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def read_json(path):
    return json.loads(Path(path).read_text())

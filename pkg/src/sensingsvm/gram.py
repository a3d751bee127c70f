"""Gram matrix assembly and serialization.

Symmetric Grams are computed once per unordered pair and mirrored, so
``values[i, j] == values[j, i]`` holds bitwise.  Rectangular blocks
(test rows vs. training columns) are supported for prediction but cannot
be serialized; the on-disk formats carry square self-Grams only.
"""

from __future__ import annotations

import struct

import numpy as np

from .counts import CountVector
from .errors import DataError, UsageError
from .kernels import KernelSpec, kernel_value

__all__ = ["GramMatrix", "build_gram", "save_gram", "load_gram", "save_gram_text", "load_gram_text"]

_MAGIC = b"SGRM"
_VERSION = 1


class GramMatrix:
    """Dense matrix of kernel values with row/column document identity."""

    __slots__ = ("values", "row_ids", "col_ids", "fingerprint")

    def __init__(self, values, row_ids=None, col_ids=None, fingerprint=None, _check_symmetry=True):
        values = np.array(values, dtype=np.float64, copy=True)
        if values.ndim != 2:
            raise UsageError("Gram values must be a 2-d array")
        if not np.isfinite(values).all():
            raise DataError("Gram matrix contains non-finite entries")
        if row_ids is not None and len(row_ids) != values.shape[0]:
            raise UsageError("row_ids length must match row count")
        if col_ids is not None and len(col_ids) != values.shape[1]:
            raise UsageError("col_ids length must match column count")
        if _check_symmetry and self._self_gram(values, row_ids, col_ids):
            if not np.array_equal(values, values.T):
                raise UsageError("square self-Gram must be exactly symmetric")
        values.setflags(write=False)
        self.values = values
        self.row_ids = list(row_ids) if row_ids is not None else None
        self.col_ids = list(col_ids) if col_ids is not None else None
        self.fingerprint = bytes(fingerprint) if fingerprint is not None else None

    @staticmethod
    def _self_gram(values, row_ids, col_ids):
        if values.shape[0] != values.shape[1]:
            return False
        return row_ids == col_ids  # both None, or identical id lists

    @property
    def shape(self):
        return self.values.shape

    def is_square(self) -> bool:
        return self.values.shape[0] == self.values.shape[1]

    def __repr__(self):
        fp = self.fingerprint.hex()[:8] if self.fingerprint else "none"
        return f"GramMatrix(shape={self.values.shape}, spec={fp})"


def _pair_kernel(a, b, spec):
    from .pyramid import PyramidDoc, pyramid_kernel  # local import avoids a cycle

    if isinstance(a, PyramidDoc):
        return pyramid_kernel(a, b, spec)
    return kernel_value(a, b, spec)


def build_gram(docs_a, docs_b=None, spec: KernelSpec = None, row_ids=None, col_ids=None) -> GramMatrix:
    """Assemble kernel values for all pairs of documents.

    With ``docs_b`` omitted (or the same list object), the result is the
    symmetric self-Gram of ``docs_a``; otherwise a rectangular
    rows-vs-columns block.  Kernel errors are re-raised with the offending
    pair identified.
    """
    if spec is None:
        raise UsageError("build_gram requires a KernelSpec")
    docs_a = list(docs_a)
    if not docs_a:
        raise UsageError("cannot build a Gram matrix over zero documents")
    symmetric = docs_b is None or docs_b is docs_a
    docs_b_list = docs_a if symmetric else list(docs_b)
    if not symmetric and not docs_b_list:
        raise UsageError("cannot build a Gram matrix over zero documents")

    def _name(ids, k):
        return ids[k] if ids is not None else k

    n, m = len(docs_a), len(docs_b_list)
    values = np.empty((n, m), dtype=np.float64)
    for i in range(n):
        j_start = i if symmetric else 0
        for j in range(j_start, m):
            try:
                v = _pair_kernel(docs_a[i], docs_b_list[j], spec)
            except (UsageError, DataError) as exc:
                raise type(exc)(
                    f"kernel evaluation failed for pair ({_name(row_ids, i)}, "
                    f"{_name(col_ids if not symmetric else row_ids, j)}): {exc}"
                ) from exc
            values[i, j] = v
            if symmetric:
                values[j, i] = v
    return GramMatrix(
        values,
        row_ids=row_ids,
        col_ids=row_ids if symmetric else col_ids,
        fingerprint=spec.fingerprint(),
        _check_symmetry=False,
    )


def save_gram(gram: GramMatrix, path) -> None:
    """Write a square self-Gram in the binary container format.

    Layout: magic ``SGRM``, version u32, M u64, 32-byte spec fingerprint,
    then M*M little-endian float64 values in row-major order.
    """
    if not gram.is_square():
        raise UsageError("only square self-Grams are serializable")
    if not np.array_equal(gram.values, gram.values.T):
        raise UsageError("only symmetric self-Grams are serializable")
    fp = gram.fingerprint if gram.fingerprint is not None else bytes(32)
    m = gram.values.shape[0]
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        fh.write(struct.pack("<Q", m))
        fh.write(fp)
        fh.write(np.ascontiguousarray(gram.values, dtype="<f8").tobytes())


def load_gram(path) -> GramMatrix:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise DataError(f"not a Gram file (bad magic {magic!r})")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != _VERSION:
            raise DataError(f"unsupported Gram file version {version}")
        (m,) = struct.unpack("<Q", fh.read(8))
        fp = fh.read(32)
        if len(fp) != 32:
            raise DataError("truncated Gram file header")
        raw = fh.read(8 * m * m)
        if len(raw) != 8 * m * m:
            raise DataError("truncated Gram file payload")
    values = np.frombuffer(raw, dtype="<f8").reshape(m, m)
    return GramMatrix(values, fingerprint=fp)


def save_gram_text(gram: GramMatrix, path) -> None:
    """Debugging format: one row per line, 17 significant digits."""
    with open(path, "w", encoding="ascii") as fh:
        for row in gram.values:
            fh.write(" ".join(f"{v:.17g}" for v in row))
            fh.write("\n")


def load_gram_text(path) -> GramMatrix:
    rows = []
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append([float(tok) for tok in line.split()])
    if not rows:
        raise DataError("empty Gram text file")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise DataError("ragged rows in Gram text file")
    return GramMatrix(np.array(rows, dtype=np.float64), _check_symmetry=False)

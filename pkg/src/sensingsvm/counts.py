"""Sparse count and frequency vectors over a fixed integer vocabulary.

Documents are stored as parallel ``(word_ids, values)`` arrays sorted by
word id; zero entries are never materialized.  Both types are immutable
after construction and validate their invariants eagerly, so downstream
code can assume well-formed input.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .errors import UsageError

__all__ = ["CountVector", "FrequencyVector"]

_FREQ_SUM_TOL = 1e-12


def _checked_ids(word_ids, vocab_size: int) -> np.ndarray:
    ids = np.array(word_ids, dtype=np.int64, copy=True)
    if ids.ndim != 1:
        raise UsageError("word_ids must be one-dimensional")
    if ids.size:
        if np.any(ids[:-1] >= ids[1:]):
            raise UsageError("word_ids must be strictly increasing")
        if ids[0] < 0 or ids[-1] >= vocab_size:
            raise UsageError(f"word_ids must lie in [0, {vocab_size})")
    return ids


class CountVector:
    """Per-document word counts x over a vocabulary of size W."""

    __slots__ = ("word_ids", "counts", "vocab_size", "total", "_key")

    def __init__(self, word_ids, counts, vocab_size):
        vocab_size = int(vocab_size)
        if vocab_size < 1:
            raise UsageError("vocab_size must be a positive integer")
        ids = _checked_ids(word_ids, vocab_size)
        cnt = np.array(counts, dtype=np.int64, copy=True)
        if cnt.shape != ids.shape:
            raise UsageError("word_ids and counts must have equal length")
        if cnt.size and int(cnt.min()) < 1:
            raise UsageError("sparse counts must be >= 1 (omit zero entries)")
        ids.setflags(write=False)
        cnt.setflags(write=False)
        self.word_ids = ids
        self.counts = cnt
        self.vocab_size = vocab_size
        self.total = int(cnt.sum())
        self._key = None

    @classmethod
    def from_dense(cls, dense) -> "CountVector":
        dense = np.asarray(dense)
        if dense.ndim != 1:
            raise UsageError("dense count vector must be one-dimensional")
        ids = np.flatnonzero(dense)
        return cls(ids, dense[ids], dense.shape[0])

    @classmethod
    def empty(cls, vocab_size: int) -> "CountVector":
        return cls(np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64), vocab_size)

    def to_dense(self) -> np.ndarray:
        dense = np.zeros(self.vocab_size, dtype=np.int64)
        dense[self.word_ids] = self.counts
        return dense

    def frequencies(self) -> "FrequencyVector":
        return FrequencyVector.from_counts(self)

    def content_key(self) -> bytes:
        """Stable 32-byte digest of (W, ids, counts); used to key derived
        random substreams and to order kernel arguments canonically."""
        if self._key is None:
            h = hashlib.sha256()
            h.update(self.vocab_size.to_bytes(8, "little"))
            h.update(self.word_ids.tobytes())
            h.update(self.counts.tobytes())
            self._key = h.digest()
        return self._key

    def __eq__(self, other):
        if not isinstance(other, CountVector):
            return NotImplemented
        return (
            self.vocab_size == other.vocab_size
            and np.array_equal(self.word_ids, other.word_ids)
            and np.array_equal(self.counts, other.counts)
        )

    def __hash__(self):
        return hash(self.content_key())

    def __repr__(self):
        return f"CountVector(nnz={self.word_ids.size}, N={self.total}, W={self.vocab_size})"


class FrequencyVector:
    """Normalized word frequencies of one document (entries sum to 1)."""

    __slots__ = ("word_ids", "freqs", "vocab_size", "_key")

    def __init__(self, word_ids, freqs, vocab_size):
        vocab_size = int(vocab_size)
        if vocab_size < 1:
            raise UsageError("vocab_size must be a positive integer")
        ids = _checked_ids(word_ids, vocab_size)
        f = np.array(freqs, dtype=np.float64, copy=True)
        if f.shape != ids.shape:
            raise UsageError("word_ids and freqs must have equal length")
        if f.size == 0:
            raise UsageError("empty document has no frequency vector")
        if float(f.min()) <= 0.0:
            raise UsageError("sparse frequencies must be > 0 (omit zero entries)")
        if abs(float(f.sum()) - 1.0) > _FREQ_SUM_TOL:
            raise UsageError("frequencies must sum to 1 within 1e-12")
        ids.setflags(write=False)
        f.setflags(write=False)
        self.word_ids = ids
        self.freqs = f
        self.vocab_size = vocab_size
        self._key = None

    @classmethod
    def from_counts(cls, cv: CountVector) -> "FrequencyVector":
        if cv.total == 0:
            raise UsageError("empty document has no frequency vector")
        return cls(cv.word_ids, cv.counts / cv.total, cv.vocab_size)

    def to_dense(self) -> np.ndarray:
        dense = np.zeros(self.vocab_size, dtype=np.float64)
        dense[self.word_ids] = self.freqs
        return dense

    def content_key(self) -> bytes:
        if self._key is None:
            h = hashlib.sha256()
            h.update(self.vocab_size.to_bytes(8, "little"))
            h.update(self.word_ids.tobytes())
            h.update(self.freqs.tobytes())
            self._key = h.digest()
        return self._key

    def __eq__(self, other):
        if not isinstance(other, FrequencyVector):
            return NotImplemented
        return (
            self.vocab_size == other.vocab_size
            and np.array_equal(self.word_ids, other.word_ids)
            and np.array_equal(self.freqs, other.freqs)
        )

    def __hash__(self):
        return hash(self.content_key())

    def __repr__(self):
        return f"FrequencyVector(nnz={self.word_ids.size}, W={self.vocab_size})"

"""Kernel functions for bag-of-words documents.

The exact kernel treats each document as iid draws from an unknown
distribution over the vocabulary and integrates the product of the two
document likelihoods over all such distributions.  The integral has a
closed form in Gamma-function ratios; evaluating it directly overflows
double precision already for modest documents, so every code path here
works with log-Gamma sums instead.

Kernel families
---------------
``sensing-exact``  exp of the log-space closed form (a true inner product,
                   hence positive semidefinite).
``sensing0``       the log of the exact kernel, used directly as a kernel
                   value (compresses dynamic range; not guaranteed PSD).
``sensing1``       log form evaluated on length-normalized counts scaled
                   by a constant ``n`` (removes document-length imbalance).
``sensing2``       log form after resampling both documents to a common
                   length ``N`` from their empirical word frequencies.
``rbf``            Gaussian kernel on frequency vectors (baseline).
``ppk``            product kernel on plug-in frequency estimates raised to
                   a power ``rho`` (``rho=0.5`` is the Bhattacharyya
                   affinity).
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .counts import CountVector, FrequencyVector
from .errors import UsageError

__all__ = [
    "FAMILIES",
    "KernelSpec",
    "log_kernel_exact",
    "kernel_sensing0",
    "kernel_sensing1",
    "kernel_sensing2",
    "kernel_rbf",
    "kernel_ppk",
    "kernel_value",
    "resample_counts",
]

FAMILIES = ("sensing-exact", "sensing0", "sensing1", "sensing2", "rbf", "ppk")

_MASK64 = (1 << 64) - 1


def _require_same_vocab(a, b):
    if a.vocab_size != b.vocab_size:
        raise UsageError(
            f"vocabulary sizes differ: {a.vocab_size} vs {b.vocab_size}"
        )


def _ordered(a, b):
    # Canonical argument order so k(a, b) and k(b, a) run the identical
    # floating-point computation (bitwise-equal results).
    if a.content_key() <= b.content_key():
        return a, b
    return b, a


def _require_nonempty(doc, name="document"):
    if doc.total == 0:
        raise UsageError(f"empty {name} (N=0) is not admissible for this kernel")


def _intersection(a_ids, b_ids):
    _, ia, ib = np.intersect1d(a_ids, b_ids, assume_unique=True, return_indices=True)
    return ia, ib


def log_kernel_exact(a: CountVector, b: CountVector) -> float:
    """Log of the exact bag-of-words kernel between two count vectors.

    Computed as::

        sum_w [lgamma(a_w + b_w + 1) - lgamma(a_w + 1) - lgamma(b_w + 1)]
        + lgamma(N_a + 1) + lgamma(N_b + 1) - lgamma(N_a + N_b + W)

    A word present in only one document contributes
    ``lgamma(x+1) - lgamma(x+1) - lgamma(1) = 0`` exactly, so the per-word
    sum only needs the intersection of the two supports.
    """
    _require_same_vocab(a, b)
    a, b = _ordered(a, b)
    ia, ib = _intersection(a.word_ids, b.word_ids)
    xa = a.counts[ia].astype(np.float64)
    xb = b.counts[ib].astype(np.float64)
    per_word = gammaln(xa + xb + 1.0) - gammaln(xa + 1.0) - gammaln(xb + 1.0)
    na = float(a.total)
    nb = float(b.total)
    tail = gammaln(na + 1.0) + gammaln(nb + 1.0) - gammaln(na + nb + float(a.vocab_size))
    return float(np.sum(per_word) + tail)


def kernel_sensing0(a: CountVector, b: CountVector) -> float:
    """Log-transformed exact kernel, used directly as a kernel value."""
    return log_kernel_exact(a, b)


def kernel_sensing1(a: CountVector, b: CountVector, n: int) -> float:
    """Log-Gamma kernel on frequency vectors scaled to a common length n.

    Depends on the two documents only through their word frequencies, so
    it is invariant under rescaling of raw counts.  Words outside the
    support intersection contribute exactly zero (same cancellation as in
    :func:`log_kernel_exact`); there is no document-length tail term.
    """
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise UsageError("n must be a positive integer")
    _require_same_vocab(a, b)
    _require_nonempty(a)
    _require_nonempty(b)
    a, b = _ordered(a, b)
    ia, ib = _intersection(a.word_ids, b.word_ids)
    za = n * (a.counts[ia] / a.total)
    zb = n * (b.counts[ib] / b.total)
    per_word = gammaln(za + zb + 1.0) - gammaln(za + 1.0) - gammaln(zb + 1.0)
    return float(np.sum(per_word))


def _substream(seed: int, key: bytes) -> np.random.Generator:
    # One independent stream per (global seed, document content) pair, so a
    # document resamples identically in every pair of a Gram build no
    # matter the evaluation schedule.
    words = np.frombuffer(key, dtype="<u4").tolist()
    return np.random.default_rng(np.random.SeedSequence([int(seed) & _MASK64, *words]))


def resample_counts(doc: CountVector, size: int, seed: int) -> CountVector:
    """Redraw ``size`` words iid from the document's empirical frequencies.

    The random stream is keyed by (seed, document content), making the
    result a pure function of its arguments.
    """
    if not isinstance(size, (int, np.integer)) or size < 1:
        raise UsageError("resample size must be a positive integer")
    _require_nonempty(doc)
    rng = _substream(seed, doc.content_key())
    pvals = doc.counts / doc.total
    pvals = pvals / pvals.sum()
    draw = rng.multinomial(size, pvals)
    nz = draw > 0
    return CountVector(doc.word_ids[nz], draw[nz], doc.vocab_size)


def kernel_sensing2(a: CountVector, b: CountVector, resample_n: int, seed: int) -> float:
    """Exact log kernel after resampling both documents to a common length."""
    _require_same_vocab(a, b)
    a_hat = resample_counts(a, resample_n, seed)
    b_hat = resample_counts(b, resample_n, seed)
    return log_kernel_exact(a_hat, b_hat)


def kernel_rbf(a: FrequencyVector, b: FrequencyVector, sigma: float) -> float:
    """Gaussian kernel exp(-||a - b||^2 / (2 sigma^2)) on frequency vectors."""
    if not sigma > 0:
        raise UsageError("sigma must be > 0")
    _require_same_vocab(a, b)
    a, b = _ordered(a, b)
    union = np.union1d(a.word_ids, b.word_ids)
    va = np.zeros(union.size)
    vb = np.zeros(union.size)
    va[np.searchsorted(union, a.word_ids)] = a.freqs
    vb[np.searchsorted(union, b.word_ids)] = b.freqs
    d2 = float(np.sum((va - vb) ** 2))
    return math.exp(-d2 / (2.0 * sigma * sigma))


def kernel_ppk(a: CountVector, b: CountVector, rho: float = 1.0) -> float:
    """Product kernel sum_w (fa_w * fb_w)^rho on plug-in frequency estimates."""
    if not rho > 0:
        raise UsageError("rho must be > 0")
    _require_same_vocab(a, b)
    _require_nonempty(a)
    _require_nonempty(b)
    a, b = _ordered(a, b)
    ia, ib = _intersection(a.word_ids, b.word_ids)
    fa = a.counts[ia] / a.total
    fb = b.counts[ib] / b.total
    return float(np.sum((fa * fb) ** rho))


@dataclass(frozen=True)
class KernelSpec:
    """Tagged choice of kernel family plus its hyperparameters.

    Only the parameters relevant to ``family`` are required; the rest are
    ignored (and excluded from the fingerprint).  ``pyramid_levels`` and
    ``pyramid_weights`` are set when the kernel is composed over a spatial
    pyramid; they then apply on top of any family.
    """

    family: str
    n: int | None = None
    resample_n: int | None = None
    rng_seed: int | None = None
    sigma: float | None = None
    ppk_rho: float = 1.0
    pyramid_levels: int | None = None
    pyramid_weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise UsageError(f"unknown kernel family {self.family!r}; valid: {FAMILIES}")
        if self.family == "sensing1":
            if not isinstance(self.n, (int, np.integer)) or self.n < 1:
                raise UsageError("sensing1 requires a positive integer n")
        if self.family == "sensing2":
            if not isinstance(self.resample_n, (int, np.integer)) or self.resample_n < 1:
                raise UsageError("sensing2 requires a positive integer resample_n")
            if self.rng_seed is None:
                raise UsageError("sensing2 requires rng_seed for reproducibility")
        if self.family == "rbf":
            if self.sigma is None or not self.sigma > 0:
                raise UsageError("rbf requires sigma > 0")
        if self.family == "ppk" and not self.ppk_rho > 0:
            raise UsageError("ppk requires rho > 0")
        if self.pyramid_weights is not None:
            object.__setattr__(self, "pyramid_weights", tuple(float(w) for w in self.pyramid_weights))
            if self.pyramid_levels is None:
                raise UsageError("pyramid_weights given without pyramid_levels")
            if len(self.pyramid_weights) != self.pyramid_levels + 1:
                raise UsageError("pyramid_weights must have length pyramid_levels + 1")
            if any(w < 0 for w in self.pyramid_weights):
                raise UsageError("pyramid_weights must be non-negative")

    def _relevant(self) -> list[tuple[str, str]]:
        parts = [("family", self.family)]
        if self.family == "sensing1":
            parts.append(("n", repr(int(self.n))))
        elif self.family == "sensing2":
            parts.append(("resample_n", repr(int(self.resample_n))))
            parts.append(("rng_seed", repr(int(self.rng_seed))))
        elif self.family == "rbf":
            parts.append(("sigma", repr(float(self.sigma))))
        elif self.family == "ppk":
            parts.append(("rho", repr(float(self.ppk_rho))))
        if self.pyramid_levels is not None:
            parts.append(("levels", repr(int(self.pyramid_levels))))
        if self.pyramid_weights is not None:
            parts.append(("weights", repr(tuple(self.pyramid_weights))))
        return parts

    def fingerprint(self) -> bytes:
        """32-byte digest identifying the family and its relevant parameters."""
        text = ";".join(f"{k}={v}" for k, v in self._relevant())
        return hashlib.sha256(text.encode("utf-8")).digest()

    def describe(self) -> str:
        return " ".join(f"{k}={v}" for k, v in self._relevant())

    # Convenience constructors mirroring the family tags.
    @classmethod
    def sensing_exact(cls, **kw) -> "KernelSpec":
        return cls(family="sensing-exact", **kw)

    @classmethod
    def sensing0(cls, **kw) -> "KernelSpec":
        return cls(family="sensing0", **kw)

    @classmethod
    def sensing1(cls, n: int, **kw) -> "KernelSpec":
        return cls(family="sensing1", n=n, **kw)

    @classmethod
    def sensing2(cls, resample_n: int, rng_seed: int, **kw) -> "KernelSpec":
        return cls(family="sensing2", resample_n=resample_n, rng_seed=rng_seed, **kw)

    @classmethod
    def rbf(cls, sigma: float, **kw) -> "KernelSpec":
        return cls(family="rbf", sigma=sigma, **kw)

    @classmethod
    def ppk(cls, rho: float = 1.0, **kw) -> "KernelSpec":
        return cls(family="ppk", ppk_rho=rho, **kw)


def kernel_value(a: CountVector, b: CountVector, spec: KernelSpec) -> float:
    """Evaluate the kernel named by ``spec`` on two count vectors."""
    fam = spec.family
    if fam == "sensing-exact":
        return math.exp(log_kernel_exact(a, b))
    if fam == "sensing0":
        return kernel_sensing0(a, b)
    if fam == "sensing1":
        return kernel_sensing1(a, b, spec.n)
    if fam == "sensing2":
        return kernel_sensing2(a, b, spec.resample_n, spec.rng_seed)
    if fam == "rbf":
        return kernel_rbf(a.frequencies(), b.frequencies(), spec.sigma)
    if fam == "ppk":
        return kernel_ppk(a, b, spec.ppk_rho)
    raise UsageError(f"unknown kernel family {fam!r}")

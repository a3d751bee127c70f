"""Spatial-pyramid bag-of-features representations.

Consumes pre-extracted local descriptors (grid SIFT or similar), builds a
visual vocabulary by k-means, quantizes each descriptor to its nearest
centroid, bins the resulting visual words into per-level grid cells, and
composes per-level kernels into a weighted pyramid kernel.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .counts import CountVector
from .errors import DataError, UsageError
from .kernels import KernelSpec, kernel_value

__all__ = [
    "DescriptorSet",
    "VisualVocabulary",
    "PyramidDoc",
    "kmeans_fit",
    "quantize",
    "build_pyramid",
    "pyramid_level_kernel",
    "pyramid_kernel",
    "default_pyramid_weights",
    "save_descriptors",
    "load_descriptors",
    "save_descriptors_text",
    "load_descriptors_text",
    "save_visual_vocabulary",
    "load_visual_vocabulary",
]

_DESC_MAGIC = b"SDSC"
_DESC_VERSION = 1


@dataclass
class DescriptorSet:
    """Local descriptors of one image with their pixel positions."""

    image_id: str
    width: int
    height: int
    positions: np.ndarray  # (n, 2) float64, columns x, y
    descriptors: np.ndarray  # (n, d) float64

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.descriptors = np.asarray(self.descriptors, dtype=np.float64)
        if self.width < 1 or self.height < 1:
            raise UsageError("image dimensions must be positive")
        if self.positions.ndim != 2 or self.positions.shape[1] != 2:
            raise UsageError("positions must be an (n, 2) array")
        if self.descriptors.ndim != 2 or self.descriptors.shape[0] != self.positions.shape[0]:
            raise UsageError("descriptors must align with positions")
        x, y = self.positions[:, 0], self.positions[:, 1]
        if self.positions.size and (
            x.min() < 0 or x.max() > self.width or y.min() < 0 or y.max() > self.height
        ):
            raise DataError(f"descriptor position outside image bounds for {self.image_id}")

    def __len__(self):
        return self.positions.shape[0]


@dataclass
class VisualVocabulary:
    """k-means centroids over descriptor space, with fit metadata."""

    centroids: np.ndarray
    iterations: int
    inertia: float
    seed: int

    def __post_init__(self):
        self.centroids = np.asarray(self.centroids, dtype=np.float64)
        if self.centroids.ndim != 2 or self.centroids.shape[0] < 2:
            raise UsageError("a visual vocabulary needs at least 2 centroids")
        if not np.isfinite(self.centroids).all():
            raise DataError("visual vocabulary contains non-finite centroids")

    @property
    def size(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]


def _assign(samples: np.ndarray, centroids: np.ndarray, chunk: int = 8192):
    """Nearest-centroid labels and squared distances, chunked for memory."""
    n = samples.shape[0]
    labels = np.empty(n, dtype=np.int64)
    dists = np.empty(n, dtype=np.float64)
    c_sq = np.einsum("ij,ij->i", centroids, centroids)
    for start in range(0, n, chunk):
        block = samples[start : start + chunk]
        d2 = c_sq[None, :] - 2.0 * (block @ centroids.T)
        d2 += np.einsum("ij,ij->i", block, block)[:, None]
        lab = np.argmin(d2, axis=1)  # first minimum = lowest word id
        labels[start : start + chunk] = lab
        dists[start : start + chunk] = np.maximum(d2[np.arange(block.shape[0]), lab], 0.0)
    return labels, dists


def _plus_plus_seeds(samples, w, rng):
    n = samples.shape[0]
    centroids = np.empty((w, samples.shape[1]))
    first = int(rng.integers(n))
    centroids[0] = samples[first]
    d2 = np.einsum("ij,ij->i", samples - centroids[0], samples - centroids[0])
    for k in range(1, w):
        total = d2.sum()
        if total <= 0:
            # All remaining mass sits on chosen points; fall back to uniform.
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centroids[k] = samples[idx]
        alt = np.einsum("ij,ij->i", samples - centroids[k], samples - centroids[k])
        d2 = np.minimum(d2, alt)
    return centroids


def kmeans_fit(samples, w: int, seed: int, max_iters: int = 100, tol: float = 1e-6) -> VisualVocabulary:
    """Lloyd's algorithm with k-means++ seeding; deterministic per seed.

    Empty clusters are re-seeded from the sample currently farthest from
    its assigned centroid.  Terminates on ``max_iters`` or when the
    largest centroid shift drops below ``tol``.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2:
        raise UsageError("samples must be an (n, d) array")
    if samples.shape[0] < w:
        raise UsageError(f"need at least {w} samples to fit {w} centroids")
    if w < 2:
        raise UsageError("vocabulary size must be >= 2")
    rng = np.random.default_rng(seed)
    centroids = _plus_plus_seeds(samples, w, rng)
    labels, dists = _assign(samples, centroids)
    iterations = 0
    for iterations in range(1, max_iters + 1):
        new_centroids = np.zeros_like(centroids)
        counts = np.bincount(labels, minlength=w).astype(np.float64)
        np.add.at(new_centroids, labels, samples)
        empty = np.flatnonzero(counts == 0)
        nonzero = counts > 0
        new_centroids[nonzero] /= counts[nonzero, None]
        if empty.size:
            order = np.argsort(-dists, kind="stable")  # farthest points first
            for slot, point_idx in zip(empty, order[: empty.size]):
                new_centroids[slot] = samples[point_idx]
        shift = float(np.max(np.abs(new_centroids - centroids)))
        centroids = new_centroids
        labels, dists = _assign(samples, centroids)
        if shift < tol:
            break
    return VisualVocabulary(
        centroids=centroids,
        iterations=iterations,
        inertia=float(dists.sum()),
        seed=int(seed),
    )


def quantize(descs: DescriptorSet, vocab: VisualVocabulary) -> list[tuple[float, float, int]]:
    """Assign each descriptor the id of its nearest centroid (ties: lowest id)."""
    if len(descs) and descs.descriptors.shape[1] != vocab.dim:
        raise UsageError(
            f"descriptor dimension {descs.descriptors.shape[1]} does not match vocabulary {vocab.dim}"
        )
    if not len(descs):
        return []
    labels, _ = _assign(descs.descriptors, vocab.centroids)
    return [
        (float(x), float(y), int(wid))
        for (x, y), wid in zip(descs.positions, labels)
    ]


@dataclass
class PyramidDoc:
    """Per-level, per-cell count vectors for one image.

    Level l splits the image into 2^l x 2^l cells stored row-major; every
    word lands in exactly one cell per level, so per-level totals all
    equal the level-0 total.
    """

    image_id: str
    vocab_size: int
    cells: list[list[CountVector]]  # cells[l] has 4**l entries

    def __post_init__(self):
        if not self.cells:
            raise UsageError("pyramid must have at least level 0")
        for lvl, row in enumerate(self.cells):
            if len(row) != 4**lvl:
                raise UsageError(f"level {lvl} must have {4 ** lvl} cells")
            for cv in row:
                if cv.vocab_size != self.vocab_size:
                    raise UsageError("all cells must share the vocabulary size")
        base = self.total
        for lvl, row in enumerate(self.cells):
            if sum(cv.total for cv in row) != base:
                raise UsageError(f"level {lvl} cell counts do not conserve the word total")

    @property
    def levels(self) -> int:
        return len(self.cells) - 1

    @property
    def total(self) -> int:
        return self.cells[0][0].total


def build_pyramid(quantized, width: int, height: int, levels: int, vocab_size: int, image_id: str = "") -> PyramidDoc:
    """Bin positioned visual words into grid cells for levels 0..levels.

    Cell index at level l is (floor(y*2^l/height), floor(x*2^l/width));
    cells are right/bottom-open except that the image's own right and
    bottom edges fall into the last cell.
    """
    if levels < 0:
        raise UsageError("levels must be >= 0")
    if width < 1 or height < 1:
        raise UsageError("image dimensions must be positive")
    quantized = list(quantized)
    xs = np.array([q[0] for q in quantized], dtype=np.float64)
    ys = np.array([q[1] for q in quantized], dtype=np.float64)
    wids = np.array([q[2] for q in quantized], dtype=np.int64)
    if xs.size and (xs.min() < 0 or xs.max() > width or ys.min() < 0 or ys.max() > height):
        raise DataError(f"word position outside image bounds for {image_id or 'image'}")
    if wids.size and (wids.min() < 0 or wids.max() >= vocab_size):
        raise DataError("word id outside vocabulary")
    cells = []
    for lvl in range(levels + 1):
        grid = 2**lvl
        col = np.minimum(np.floor(xs * grid / width).astype(np.int64), grid - 1) if xs.size else xs.astype(np.int64)
        row = np.minimum(np.floor(ys * grid / height).astype(np.int64), grid - 1) if ys.size else ys.astype(np.int64)
        cell_of_word = row * grid + col
        level_cells = []
        for cell in range(grid * grid):
            mask = cell_of_word == cell
            if mask.any():
                counts = np.bincount(wids[mask], minlength=vocab_size)
                level_cells.append(CountVector.from_dense(counts))
            else:
                level_cells.append(CountVector.empty(vocab_size))
        cells.append(level_cells)
    return PyramidDoc(image_id=image_id, vocab_size=vocab_size, cells=cells)


def _cell_kernel(a: CountVector, b: CountVector, base: KernelSpec) -> float:
    # An empty cell paired with anything contributes 0 for every family
    # (the log kernels have no natural empty-document value; the rule is
    # applied uniformly so pyramid kernels stay symmetric).
    if a.total == 0 or b.total == 0:
        return 0.0
    return kernel_value(a, b, base)


def pyramid_level_kernel(a: PyramidDoc, b: PyramidDoc, base: KernelSpec, level: int) -> float:
    """Sum of base-kernel values over corresponding cells of one level."""
    if a.vocab_size != b.vocab_size:
        raise UsageError("pyramid vocabulary sizes differ")
    if level < 0 or level > a.levels or level > b.levels:
        raise UsageError(f"level {level} not present in both pyramids")
    return float(sum(_cell_kernel(ca, cb, base) for ca, cb in zip(a.cells[level], b.cells[level])))


def pyramid_kernel(a: PyramidDoc, b: PyramidDoc, base: KernelSpec, weights=None) -> float:
    """Weighted sum over levels of per-level summed cell kernels."""
    if a.levels != b.levels:
        raise UsageError(f"pyramid levels differ: {a.levels} vs {b.levels}")
    if weights is None:
        weights = base.pyramid_weights
    if weights is None:
        raise UsageError("pyramid_kernel needs level weights")
    weights = [float(w) for w in weights]
    if len(weights) != a.levels + 1:
        raise UsageError(f"need {a.levels + 1} weights, got {len(weights)}")
    total = 0.0
    for lvl, w in enumerate(weights):
        if w == 0.0:
            continue
        total += w * pyramid_level_kernel(a, b, base, lvl)
    return total


def default_pyramid_weights(levels: int) -> tuple[float, ...]:
    """Standard spatial-pyramid weights: 2^-L for level 0, 2^(l-L-1) above."""
    if levels < 0:
        raise UsageError("levels must be >= 0")
    if levels == 0:
        return (1.0,)
    return tuple([2.0 ** (-levels)] + [2.0 ** (l - levels - 1) for l in range(1, levels + 1)])


# ---------------------------------------------------------------------------
# Descriptor and vocabulary files
# ---------------------------------------------------------------------------

def save_descriptors(descs: DescriptorSet, path) -> None:
    """Binary descriptor container (little-endian f32 payload)."""
    id_bytes = descs.image_id.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_DESC_MAGIC)
        fh.write(struct.pack("<I", _DESC_VERSION))
        fh.write(struct.pack("<H", len(id_bytes)))
        fh.write(id_bytes)
        fh.write(struct.pack("<IIIQ", descs.width, descs.height, descs.descriptors.shape[1], len(descs)))
        payload = np.hstack([descs.positions, descs.descriptors]).astype("<f4")
        fh.write(payload.tobytes())


def load_descriptors(path) -> DescriptorSet:
    with open(path, "rb") as fh:
        if fh.read(4) != _DESC_MAGIC:
            raise DataError(f"not a descriptor file: {path}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != _DESC_VERSION:
            raise DataError(f"unsupported descriptor file version {version}")
        (id_len,) = struct.unpack("<H", fh.read(2))
        image_id = fh.read(id_len).decode("utf-8")
        width, height, dim, count = struct.unpack("<IIIQ", fh.read(20))
        raw = fh.read(4 * count * (dim + 2))
        if len(raw) != 4 * count * (dim + 2):
            raise DataError(f"truncated descriptor file: {path}")
    flat = np.frombuffer(raw, dtype="<f4").reshape(count, dim + 2).astype(np.float64)
    return DescriptorSet(image_id, width, height, flat[:, :2], flat[:, 2:])


def save_descriptors_text(descs: DescriptorSet, path) -> None:
    """Text form: header line, then `x y d1 ... dd` per descriptor."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(
            f"{descs.image_id} {descs.width} {descs.height} "
            f"{descs.descriptors.shape[1]} {len(descs)}\n"
        )
        for (x, y), vec in zip(descs.positions, descs.descriptors):
            fh.write(f"{x:.9g} {y:.9g} " + " ".join(f"{v:.9g}" for v in vec) + "\n")


def load_descriptors_text(path) -> DescriptorSet:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 5:
            raise DataError(f"bad descriptor text header in {path}")
        image_id, width, height, dim, count = header[0], int(header[1]), int(header[2]), int(header[3]), int(header[4])
        rows = np.loadtxt(fh, ndmin=2) if count else np.empty((0, dim + 2))
    if rows.shape != (count, dim + 2):
        raise DataError(f"descriptor text payload does not match header in {path}")
    return DescriptorSet(image_id, width, height, rows[:, :2], rows[:, 2:])


def save_visual_vocabulary(vocab: VisualVocabulary, path) -> None:
    """One centroid per line, plus a metadata comment header."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# kmeans iterations={vocab.iterations} inertia={vocab.inertia:.17g} seed={vocab.seed}\n")
        for row in vocab.centroids:
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def load_visual_vocabulary(path) -> VisualVocabulary:
    meta = {"iterations": 0, "inertia": 0.0, "seed": 0}
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for tok in line[1:].split():
                    if "=" in tok:
                        key, val = tok.split("=", 1)
                        if key in meta:
                            meta[key] = type(meta[key])(float(val)) if key != "seed" else int(val)
                continue
            rows.append([float(v) for v in line.split()])
    if not rows:
        raise DataError(f"empty visual vocabulary file: {path}")
    return VisualVocabulary(
        centroids=np.array(rows, dtype=np.float64),
        iterations=int(meta["iterations"]),
        inertia=float(meta["inertia"]),
        seed=int(meta["seed"]),
    )

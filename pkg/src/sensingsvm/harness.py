"""Cross-validation and experiment driver.

Everything derived from data (text vocabulary, k-means codebook, RBF
bandwidth) is re-fit on each fold's training portion, so no information
leaks from validation or test documents.  Fold assignment, featurization
and training are pure functions of the inputs and the seed, which makes
reports byte-reproducible.
"""

from __future__ import annotations

import hashlib
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .counts import CountVector
from .errors import DataError, UsageError
from .gram import build_gram
from .kernels import KernelSpec
from .svm import TrainConfig, predict_multiclass, train_one_vs_all
from .text import Corpus, TokenDoc, Vocabulary, build_corpus, build_vocabulary

__all__ = [
    "DocSet",
    "TextFeaturizer",
    "PrecomputedFeaturizer",
    "AutoRbf",
    "assign_folds",
    "median_frequency_distance",
    "resolve_kernel",
    "CvRow",
    "CvResult",
    "cross_validate",
    "ExperimentConfig",
    "Report",
    "run_experiment",
    "write_report",
    "DEFAULT_C_GRID",
]

log = logging.getLogger(__name__)

DEFAULT_C_GRID = (0.01, 0.1, 1.0, 10.0, 100.0)


@dataclass
class DocSet:
    """Aligned ids, labels and per-document payloads (tokens or vectors)."""

    ids: list[str]
    labels: list[str]
    payloads: list

    def __post_init__(self):
        if not (len(self.ids) == len(self.labels) == len(self.payloads)):
            raise UsageError("ids, labels and payloads must align")

    def __len__(self):
        return len(self.ids)

    def subset(self, indices) -> "DocSet":
        return DocSet(
            ids=[self.ids[i] for i in indices],
            labels=[self.labels[i] for i in indices],
            payloads=[self.payloads[i] for i in indices],
        )

    @classmethod
    def from_corpus(cls, corpus: Corpus) -> "DocSet":
        return cls(ids=list(corpus.doc_ids), labels=list(corpus.labels), payloads=list(corpus.vectors))

    @classmethod
    def from_token_docs(cls, docs) -> "DocSet":
        return cls(
            ids=[d.doc_id for d in docs],
            labels=[d.label for d in docs],
            payloads=[tuple(d.tokens) for d in docs],
        )


class TextFeaturizer:
    """Builds a vocabulary from training tokens and vectorizes against it."""

    def __init__(self, min_count: int = 1):
        self.min_count = min_count

    def fit(self, payloads) -> "_FittedText":
        vocab = build_vocabulary(payloads, min_count=self.min_count)
        return _FittedText(vocab)


class _FittedText:
    def __init__(self, vocab: Vocabulary):
        self.vocab = vocab
        self.fingerprint = vocab.fingerprint

    def transform(self, payloads):
        from .text import vectorize

        return [vectorize(tokens, self.vocab) for tokens in payloads]


class PrecomputedFeaturizer:
    """Payloads are already CountVectors over a data-independent vocabulary."""

    def __init__(self, vocab_size: int):
        self.vocab_size = vocab_size

    def fit(self, payloads) -> "PrecomputedFeaturizer":
        return self

    @property
    def fingerprint(self) -> str:
        return f"precomputed-W{self.vocab_size}"

    def transform(self, payloads):
        for cv in payloads:
            if not isinstance(cv, CountVector) or cv.vocab_size != self.vocab_size:
                raise UsageError("precomputed payloads must be CountVectors over the declared vocabulary")
        return list(payloads)


@dataclass(frozen=True)
class AutoRbf:
    """RBF entry whose bandwidth is the median pairwise distance times a factor.

    The median is measured on the training portion only, per fold.
    """

    factor: float = 1.0

    def describe(self) -> str:
        return f"family=rbf sigma=auto*{self.factor:g}"


def median_frequency_distance(vectors, seed: int, max_pairs: int = 2000) -> float:
    """Median Euclidean distance between frequency vectors of sampled pairs."""
    vectors = [v for v in vectors if v.total > 0]
    if len(vectors) < 2:
        raise UsageError("need at least two non-empty documents")
    rng = np.random.default_rng(seed)
    n = len(vectors)
    n_pairs = min(max_pairs, n * (n - 1) // 2)
    dists = np.empty(n_pairs)
    for k in range(n_pairs):
        i = int(rng.integers(n))
        j = int(rng.integers(n - 1))
        if j >= i:
            j += 1
        fa, fb = vectors[i].frequencies(), vectors[j].frequencies()
        union = np.union1d(fa.word_ids, fb.word_ids)
        va = np.zeros(union.size)
        vb = np.zeros(union.size)
        va[np.searchsorted(union, fa.word_ids)] = fa.freqs
        vb[np.searchsorted(union, fb.word_ids)] = fb.freqs
        dists[k] = np.sqrt(np.sum((va - vb) ** 2))
    med = float(np.median(dists))
    return med if med > 0 else 1.0


def resolve_kernel(entry, train_vectors, seed: int) -> KernelSpec:
    """Turn a grid entry into a concrete KernelSpec for one training set."""
    if isinstance(entry, KernelSpec):
        return entry
    if isinstance(entry, AutoRbf):
        sigma = entry.factor * median_frequency_distance(train_vectors, seed)
        return KernelSpec.rbf(sigma=sigma)
    raise UsageError(f"unknown kernel grid entry: {entry!r}")


def _entry_description(entry) -> str:
    return entry.describe()


def assign_folds(ids, labels, folds: int, seed: int) -> np.ndarray:
    """Stratified fold per document, independent of input order.

    Within each class, documents are ranked by a keyed hash of
    (seed, doc id) and dealt round-robin, so the assignment depends only
    on the set of (id, label) pairs and the seed.
    """
    if folds < 2:
        raise UsageError("folds must be >= 2")
    ids = list(ids)
    labels = list(labels)
    if len(set(ids)) != len(ids):
        raise UsageError("doc ids must be unique for fold assignment")
    out = np.empty(len(ids), dtype=np.int64)
    by_class: dict[str, list[int]] = {}
    for idx, lb in enumerate(labels):
        by_class.setdefault(lb, []).append(idx)
    for lb, members in by_class.items():
        if len(members) < folds:
            raise UsageError(f"class {lb!r} has {len(members)} docs; needs >= {folds} for {folds}-fold CV")
        keyed = sorted(
            members,
            key=lambda i: hashlib.blake2b(f"{seed}|{ids[i]}".encode("utf-8"), digest_size=8).digest(),
        )
        for rank, idx in enumerate(keyed):
            out[idx] = rank % folds
    return out


@dataclass
class CvRow:
    entry_index: int
    description: str
    C: float
    fold_correct: list[int]
    fold_total: list[int]

    @property
    def mean_ccr(self) -> float:
        ccrs = [c / t for c, t in zip(self.fold_correct, self.fold_total)]
        return float(np.mean(ccrs))


@dataclass
class CvResult:
    rows: list[CvRow]
    selected_entry: int
    selected_c: float
    fold_fingerprints: list[str]

    def selected_row(self) -> CvRow:
        for row in self.rows:
            if row.entry_index == self.selected_entry and row.C == self.selected_c:
                return row
        raise RuntimeError("selected grid point missing from rows")


def _evaluate_split(train_vectors, train_labels, train_ids, val_vectors, val_labels, spec, c_grid, tolerance):
    gram_train = build_gram(train_vectors, spec=spec, row_ids=train_ids)
    gram_val = build_gram(val_vectors, train_vectors, spec=spec, col_ids=train_ids)
    results = []
    for c in c_grid:
        cfg = TrainConfig(C=c, tolerance=tolerance)
        model = train_one_vs_all(gram_train, train_labels, cfg)
        preds = predict_multiclass(model, gram_val)
        correct = sum(1 for p, t in zip(preds, val_labels) if p == t)
        results.append((correct, len(val_labels)))
    return results


def cross_validate(docset: DocSet, featurizer, kernel_grid, c_grid=DEFAULT_C_GRID, folds: int = 5,
                   seed: int = 0, tolerance: float = 1e-3) -> CvResult:
    """Grid search by stratified k-fold CV; returns per-point mean CCRs.

    Selection: highest mean CCR, ties broken by smaller C, then by grid
    order.  The featurizer (and any data-derived kernel parameter) is
    re-fit on each fold's training portion.
    """
    kernel_grid = list(kernel_grid)
    c_grid = list(c_grid)
    if not kernel_grid or not c_grid:
        raise UsageError("kernel and C grids must be non-empty")
    fold_of = assign_folds(docset.ids, docset.labels, folds, seed)
    cells: dict[tuple[int, float], tuple[list[int], list[int]]] = {
        (e, c): ([], []) for e in range(len(kernel_grid)) for c in c_grid
    }
    fold_fingerprints = []
    for fold in range(folds):
        train_idx = np.flatnonzero(fold_of != fold)
        val_idx = np.flatnonzero(fold_of == fold)
        train = docset.subset(train_idx)
        val = docset.subset(val_idx)
        fitted = featurizer.fit(train.payloads)
        fold_fingerprints.append(fitted.fingerprint)
        train_feats = fitted.transform(train.payloads)
        val_feats = fitted.transform(val.payloads)
        train_keep = [i for i, v in enumerate(train_feats) if v is not None]
        val_keep = [i for i, v in enumerate(val_feats) if v is not None]
        if len(train_keep) < len(train_feats):
            log.warning("fold %d: dropped %d empty training docs", fold, len(train_feats) - len(train_keep))
        t_vec = [train_feats[i] for i in train_keep]
        t_lab = [train.labels[i] for i in train_keep]
        t_ids = [train.ids[i] for i in train_keep]
        v_vec = [val_feats[i] for i in val_keep]
        v_lab = [val.labels[i] for i in val_keep]
        if not v_vec:
            raise DataError(f"fold {fold}: no validation documents survive featurization")
        for e_idx, entry in enumerate(kernel_grid):
            spec = resolve_kernel(entry, t_vec, seed)
            for (correct, total), c in zip(
                _evaluate_split(t_vec, t_lab, t_ids, v_vec, v_lab, spec, c_grid, tolerance), c_grid
            ):
                cells[(e_idx, c)][0].append(correct)
                cells[(e_idx, c)][1].append(total)
    rows = [
        CvRow(e, _entry_description(kernel_grid[e]), c, cells[(e, c)][0], cells[(e, c)][1])
        for e in range(len(kernel_grid))
        for c in c_grid
    ]
    best = max(
        rows,
        key=lambda r: (r.mean_ccr, -r.C, -(r.entry_index * len(c_grid) + c_grid.index(r.C))),
    )
    return CvResult(rows=rows, selected_entry=best.entry_index, selected_c=best.C,
                    fold_fingerprints=fold_fingerprints)


@dataclass
class ExperimentConfig:
    """End-to-end settings: grids, folds, seed and output directory."""

    kernel_grid: list
    c_grid: tuple = DEFAULT_C_GRID
    folds: int = 5
    seed: int = 0
    tolerance: float = 1e-3
    output_dir: str | None = None

    def __post_init__(self):
        if not list(self.kernel_grid) or not list(self.c_grid):
            raise UsageError("kernel and C grids must be non-empty")
        if self.folds < 2:
            raise UsageError("folds must be >= 2")


@dataclass
class Report:
    """CV table, selected configuration and held-out evaluation."""

    cv: CvResult
    cv_descriptions: list[str]
    selected_description: str
    selected_c: float
    classes: list[str]
    confusion: np.ndarray
    test_correct: int
    test_total: int
    test_dropped: int
    predictions: list[tuple[str, str, str]]
    timings: dict[str, float] = field(default_factory=dict)

    @property
    def test_ccr(self) -> float:
        return self.test_correct / self.test_total


def run_experiment(train: DocSet, test: DocSet, featurizer, config: ExperimentConfig) -> Report:
    """CV-select on the training set, retrain on it fully, evaluate on test."""
    timings: dict[str, float] = {}

    def _staged(stage, fn):
        t0 = time.perf_counter()
        try:
            result = fn()
        except (UsageError, DataError) as exc:
            raise type(exc)(f"[stage {stage}] {exc}") from exc
        timings[stage] = time.perf_counter() - t0
        return result

    if len(test) == 0:
        raise UsageError("[stage evaluate] empty test set")

    cv = _staged(
        "cross-validate",
        lambda: cross_validate(
            train, featurizer, config.kernel_grid, config.c_grid,
            folds=config.folds, seed=config.seed, tolerance=config.tolerance,
        ),
    )
    entry = list(config.kernel_grid)[cv.selected_entry]

    def _retrain():
        fitted = featurizer.fit(train.payloads)
        feats = fitted.transform(train.payloads)
        keep = [i for i, v in enumerate(feats) if v is not None]
        vectors = [feats[i] for i in keep]
        labels = [train.labels[i] for i in keep]
        ids = [train.ids[i] for i in keep]
        spec = resolve_kernel(entry, vectors, config.seed)
        gram = build_gram(vectors, spec=spec, row_ids=ids)
        cfg = TrainConfig(C=cv.selected_c, tolerance=config.tolerance)
        model = train_one_vs_all(gram, labels, cfg)
        return fitted, vectors, ids, spec, model

    fitted, train_vectors, train_ids, spec, model = _staged("train", _retrain)

    def _evaluate():
        feats = fitted.transform(test.payloads)
        keep = [i for i, v in enumerate(feats) if v is not None]
        dropped = len(feats) - len(keep)
        if dropped:
            log.warning("test split: dropped %d empty documents", dropped)
        if not keep:
            raise UsageError("empty test set")
        vectors = [feats[i] for i in keep]
        labels = [test.labels[i] for i in keep]
        ids = [test.ids[i] for i in keep]
        gram = build_gram(vectors, train_vectors, spec=spec, col_ids=train_ids)
        preds = predict_multiclass(model, gram)
        return ids, labels, preds, dropped

    ids, labels, preds, dropped = _staged("evaluate", _evaluate)

    classes = sorted(set(labels) | set(model.classes))
    confusion = np.zeros((len(classes), len(classes)), dtype=np.int64)
    class_of = {c: k for k, c in enumerate(classes)}
    correct = 0
    for t, p in zip(labels, preds):
        confusion[class_of[t], class_of[p]] += 1
        correct += t == p
    return Report(
        cv=cv,
        cv_descriptions=[_entry_description(e) for e in config.kernel_grid],
        selected_description=_entry_description(entry),
        selected_c=cv.selected_c,
        classes=classes,
        confusion=confusion,
        test_correct=int(correct),
        test_total=len(labels),
        test_dropped=dropped,
        predictions=list(zip(ids, labels, preds)),
        timings=timings,
    )


def _report_body(report: Report) -> str:
    lines = ["experiment report", ""]
    lines.append("cross-validation (mean CCR over folds):")
    for row in report.cv.rows:
        folds = " ".join(f"{c}/{t}" for c, t in zip(row.fold_correct, row.fold_total))
        lines.append(f"  {row.description} C={row.C:g} mean={row.mean_ccr:.6f} folds: {folds}")
    lines.append("")
    lines.append(f"selected: {report.selected_description} C={report.selected_c:g}")
    lines.append(f"test correct {report.test_correct}/{report.test_total}"
                 + (f" (dropped {report.test_dropped})" if report.test_dropped else ""))
    lines.append(f"test ccr {100.0 * report.test_ccr:.4f}%")
    lines.append("")
    lines.append("confusion matrix (rows true, cols predicted):")
    header = "  true\\pred " + " ".join(f"{c:>12s}" for c in report.classes)
    lines.append(header)
    for k, cls in enumerate(report.classes):
        row = " ".join(f"{int(v):>12d}" for v in report.confusion[k])
        lines.append(f"  {cls:>9s} {row}")
    lines.append("")
    return "\n".join(lines)


def _report_kv(report: Report) -> str:
    lines = []
    for row in report.cv.rows:
        key = f"cv.{row.entry_index}.{row.C:g}"
        lines.append(f"{key}.mean={row.mean_ccr:.10f}")
        lines.append(f"{key}.correct={sum(row.fold_correct)}")
        lines.append(f"{key}.total={sum(row.fold_total)}")
    lines.append(f"selected.kernel={report.selected_description}")
    lines.append(f"selected.C={report.selected_c:g}")
    lines.append(f"test.correct={report.test_correct}")
    lines.append(f"test.total={report.test_total}")
    lines.append(f"test.dropped={report.test_dropped}")
    lines.append(f"test.ccr={report.test_ccr:.10f}")
    return "\n".join(lines) + "\n"


def write_report(report: Report, out_dir) -> None:
    """Write report.txt / report.kv (deterministic) and timings.txt (not)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(_report_body(report), encoding="utf-8")
    (out / "report.kv").write_text(_report_kv(report), encoding="utf-8")
    timing_lines = "".join(f"{k}={v:.3f}s\n" for k, v in report.timings.items())
    (out / "timings.txt").write_text(timing_lines, encoding="utf-8")
    pred_lines = "".join(f"{i}\t{t}\t{p}\n" for i, t, p in report.predictions)
    (out / "predictions.tsv").write_text(pred_lines, encoding="utf-8")

"""Soft-margin kernel SVM training on precomputed Gram matrices.

The trainer solves the standard C-SVC dual

    min_a  0.5 a'Qa - sum(a)   s.t.  y'a = 0,  0 <= a_i <= C,
    Q_ij = y_i y_j K_ij

by sequential minimal optimization with second-order working-set
selection (maximal-violating-pair refined by the largest decrease of the
objective).  Ties break to the lowest index, so training is fully
deterministic.  Possibly indefinite kernel values (the log-transformed
families) are handled by flooring the pairwise quadratic term at a small
tau instead of clipping the spectrum.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, UsageError
from .gram import GramMatrix

__all__ = [
    "TrainConfig",
    "SvmModel",
    "MulticlassModel",
    "train_binary",
    "decision_values",
    "train_one_vs_all",
    "predict_multiclass",
    "save_model",
    "load_model",
    "save_multiclass",
    "load_multiclass",
]

log = logging.getLogger(__name__)

_TAU = 1e-12
_SHRINK_EVERY = 1000


@dataclass
class TrainConfig:
    """Solver settings: C is the soft-margin weight, tolerance the KKT gap."""

    C: float
    tolerance: float = 1e-3
    max_passes: int = 10_000_000
    shrinking: bool = False

    def __post_init__(self):
        if not self.C > 0:
            raise UsageError("C must be > 0")
        if not self.tolerance > 0:
            raise UsageError("tolerance must be > 0")
        if self.max_passes < 1:
            raise UsageError("max_passes must be >= 1")


@dataclass
class SvmModel:
    """Trained binary classifier: decision(x) = sum_i beta_i K(x, x_i) + bias."""

    sv_indices: np.ndarray
    sv_betas: np.ndarray
    bias: float
    C: float
    fingerprint: bytes | None
    train_doc_ids: list[str] | None
    n_train: int
    class_label: str = "+1"
    dual_objective: float = 0.0

    @property
    def dual_coefs(self) -> list[tuple[int, float]]:
        return list(zip(self.sv_indices.tolist(), self.sv_betas.tolist()))


@dataclass
class MulticlassModel:
    """One-vs-all ensemble; prediction is the argmax decision value."""

    classes: list[str]
    models: list[SvmModel]

    def __post_init__(self):
        if len(self.classes) != len(self.models):
            raise UsageError("one model per class required")
        fps = {m.fingerprint for m in self.models}
        if len(fps) != 1:
            raise UsageError("all per-class models must share a kernel fingerprint")


def _select_working_set(y, alpha, grad, c, tol, active, k_mat, qd):
    ya = y[active]
    aa = alpha[active]
    ga = grad[active]
    up = ((ya > 0) & (aa < c)) | ((ya < 0) & (aa > 0))
    low = ((ya > 0) & (aa > 0)) | ((ya < 0) & (aa < c))
    if not up.any() or not low.any():
        return -1, -1
    m_vals = -ya * ga
    up_vals = np.where(up, m_vals, -np.inf)
    i_local = int(np.argmax(up_vals))
    g_max = up_vals[i_local]
    low_vals = np.where(low, ya * ga, -np.inf)
    g_max2 = float(np.max(low_vals))
    if g_max + g_max2 < tol:
        return -1, -1
    i = int(active[i_local])

    b_vals = g_max + ya * ga  # positive for violating partners
    cand = low & (b_vals > 0)
    if not cand.any():
        return -1, -1
    # Curvature along the feasible pair direction is K_ii + K_tt - 2 K_it
    # whatever the label signs; floor it for indefinite kernels.
    quad = qd[i] + qd[active] - 2.0 * k_mat[i, active]
    quad = np.where(quad <= 0, _TAU, quad)
    score = np.where(cand, -(b_vals * b_vals) / quad, np.inf)
    j = int(active[int(np.argmin(score))])
    return i, j


def _update_pair(i, j, y, alpha, grad, c, k_mat):
    yi, yj = y[i], y[j]
    ai_old, aj_old = alpha[i], alpha[j]
    kii, kjj, kij = k_mat[i, i], k_mat[j, j], k_mat[i, j]
    quad = kii + kjj - 2.0 * kij
    if quad <= 0:
        quad = _TAU
    if yi != yj:
        delta = (-grad[i] - grad[j]) / quad
        diff = ai_old - aj_old
        ai, aj = ai_old + delta, aj_old + delta
        if diff > 0:
            if aj < 0:
                aj, ai = 0.0, diff
        else:
            if ai < 0:
                ai, aj = 0.0, -diff
        if diff > 0:
            if ai > c:
                ai, aj = c, c - diff
        else:
            if aj > c:
                aj, ai = c, c + diff
    else:
        delta = (grad[i] - grad[j]) / quad
        total = ai_old + aj_old
        ai, aj = ai_old - delta, aj_old + delta
        if total > c:
            if ai > c:
                ai, aj = c, total - c
        else:
            if aj < 0:
                aj, ai = 0.0, total
        if total > c:
            if aj > c:
                aj, ai = c, total - c
        else:
            if ai < 0:
                ai, aj = 0.0, total
    alpha[i], alpha[j] = ai, aj
    d_i, d_j = ai - ai_old, aj - aj_old
    # grad update: G += Q[:, i] d_i + Q[:, j] d_j with Q = (y y') * K
    grad += y * (yi * d_i * k_mat[:, i] + yj * d_j * k_mat[:, j])


def _shrunk_active(y, alpha, grad, c):
    m_all = -y * grad
    up = ((y > 0) & (alpha < c)) | ((y < 0) & (alpha > 0))
    low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < c))
    if not up.any() or not low.any():
        return np.arange(y.size)
    g_max = float(np.max(m_all[up]))
    g_min = float(np.min(m_all[low]))
    free = (alpha > 0) & (alpha < c)
    keep = free | (up & ~low & (m_all > g_min)) | (low & ~up & (m_all < g_max))
    if not keep.any():
        return np.arange(y.size)
    return np.flatnonzero(keep)


def _smo(k_mat, y, cfg: TrainConfig):
    m = y.size
    alpha = np.zeros(m)
    grad = -np.ones(m)
    qd = np.diag(k_mat).copy()
    active = np.arange(m)
    iters = 0
    next_shrink = _SHRINK_EVERY
    while iters < cfg.max_passes:
        if cfg.shrinking and iters >= next_shrink:
            active = _shrunk_active(y, alpha, grad, cfg.C)
            next_shrink = iters + _SHRINK_EVERY
        i, j = _select_working_set(y, alpha, grad, cfg.C, cfg.tolerance, active, k_mat, qd)
        if i < 0:
            if active.size < m:
                # Converged on the shrunk set: verify on the full set, and
                # hold off re-shrinking until progress has been made.
                active = np.arange(m)
                next_shrink = iters + _SHRINK_EVERY
                continue
            break
        _update_pair(i, j, y, alpha, grad, cfg.C, k_mat)
        iters += 1
    else:
        log.warning("SMO hit max_passes=%d before reaching tolerance", cfg.max_passes)
    return alpha, grad, iters


def _bias_from_state(y, alpha, grad, c):
    # Average of y*grad over free vectors; otherwise midpoint of the
    # bound-constrained gradient bracket.
    yg = y * grad
    free = (alpha > 0) & (alpha < c)
    if free.any():
        rho = float(np.mean(yg[free]))
    else:
        upper = ((y > 0) & (alpha >= c)) | ((y < 0) & (alpha <= 0))
        ub = float(np.min(yg[~upper])) if (~upper).any() else math.inf
        lb = float(np.max(yg[upper])) if upper.any() else -math.inf
        rho = 0.5 * (ub + lb)
    return -rho


def _gram_values(gram):
    if isinstance(gram, GramMatrix):
        return gram.values
    return np.asarray(gram, dtype=np.float64)


def train_binary(gram, labels, cfg: TrainConfig, class_label: str = "+1") -> SvmModel:
    """Train a binary classifier on a square symmetric Gram matrix.

    ``labels`` must contain both +1 and -1.  The returned model satisfies
    the dual box constraints and |sum_i alpha_i y_i| <= tolerance.
    """
    k_mat = _gram_values(gram)
    if k_mat.ndim != 2 or k_mat.shape[0] != k_mat.shape[1]:
        raise UsageError("training Gram must be square")
    if not np.array_equal(k_mat, k_mat.T):
        raise UsageError("training Gram must be symmetric")
    if not np.isfinite(k_mat).all():
        raise DataError("training Gram contains non-finite entries")
    y = np.asarray(labels, dtype=np.float64)
    if y.size != k_mat.shape[0]:
        raise UsageError("label count must match the Gram size")
    if not np.all(np.abs(y) == 1.0):
        raise UsageError("binary labels must be +1 or -1")
    if not (np.any(y > 0) and np.any(y < 0)):
        raise UsageError("both classes must be present")

    alpha, grad, _ = _smo(k_mat, y, cfg)
    bias = _bias_from_state(y, alpha, grad, cfg.C)
    # grad = Qa - 1, so the dual objective 0.5 a'Qa - sum(a) = 0.5 a'(grad - 1).
    objective = 0.5 * float(alpha @ (grad - 1.0))
    sv = np.flatnonzero(alpha > 0)
    row_ids = gram.row_ids if isinstance(gram, GramMatrix) else None
    fingerprint = gram.fingerprint if isinstance(gram, GramMatrix) else None
    return SvmModel(
        sv_indices=sv,
        sv_betas=alpha[sv] * y[sv],
        bias=bias,
        C=cfg.C,
        fingerprint=fingerprint,
        train_doc_ids=list(row_ids) if row_ids is not None else None,
        n_train=int(y.size),
        class_label=class_label,
        dual_objective=objective,
    )


def decision_values(model: SvmModel, gram_test_vs_train) -> np.ndarray:
    """Decision value per test row of a (test x train) kernel block."""
    k_mat = _gram_values(gram_test_vs_train)
    if k_mat.ndim != 2 or k_mat.shape[1] != model.n_train:
        raise UsageError(
            f"test Gram must have {model.n_train} columns aligned to the training docs"
        )
    if isinstance(gram_test_vs_train, GramMatrix):
        cols = gram_test_vs_train.col_ids
        if cols is not None and model.train_doc_ids is not None and list(cols) != list(model.train_doc_ids):
            raise UsageError("test Gram columns are not aligned to the model's training docs")
        if (
            model.fingerprint is not None
            and gram_test_vs_train.fingerprint is not None
            and gram_test_vs_train.fingerprint != model.fingerprint
        ):
            raise UsageError("test Gram kernel fingerprint differs from the model's")
    if model.sv_indices.size == 0:
        return np.full(k_mat.shape[0], model.bias)
    return k_mat[:, model.sv_indices] @ model.sv_betas + model.bias


def train_one_vs_all(gram, labels, cfg: TrainConfig, classes=None) -> MulticlassModel:
    """Train one binary model per class (+1 = class, -1 = rest)."""
    labels = [str(lb) for lb in labels]
    present = sorted(set(labels))
    if classes is None:
        classes = present
    else:
        classes = [str(c) for c in classes]
        if classes != sorted(classes):
            raise UsageError("explicit class list must be sorted")
        missing = [c for c in classes if c not in present]
        if missing:
            raise UsageError(f"classes with zero training examples: {missing}")
    if len(classes) < 2:
        raise UsageError("one-vs-all needs at least two classes")
    models = []
    for cls in classes:
        y = np.where(np.asarray(labels) == cls, 1.0, -1.0)
        models.append(train_binary(gram, y, cfg, class_label=cls))
    return MulticlassModel(classes=classes, models=models)


def predict_multiclass(model: MulticlassModel, gram_test_vs_train) -> list[str]:
    """Argmax of per-class decision values; ties go to the lowest class id."""
    decisions = np.column_stack([decision_values(m, gram_test_vs_train) for m in model.models])
    winners = np.argmax(decisions, axis=1)  # first maximum = lowest class id
    return [model.classes[k] for k in winners]


# ---------------------------------------------------------------------------
# Model files
# ---------------------------------------------------------------------------

def save_model(model: SvmModel, path) -> None:
    """Line-oriented text model: five header lines, then one SV per line."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("svm-model-version 1\n")
        fh.write(f"kernel {(model.fingerprint or bytes(32)).hex()}\n")
        fh.write(f"C {model.C:.17g}\n")
        fh.write(f"bias {model.bias:.17g}\n")
        fh.write(f"class {model.class_label}\n")
        ids = model.train_doc_ids
        for idx, beta in zip(model.sv_indices.tolist(), model.sv_betas.tolist()):
            doc = ids[idx] if ids is not None else str(idx)
            fh.write(f"{doc} {beta:.17g}\n")


def load_model(path, train_doc_ids=None) -> SvmModel:
    """Read a model file; doc ids resolve to indices via ``train_doc_ids``.

    Without an id list, the stored ids must be plain integer indices and
    ``n_train`` is inferred as their maximum + 1.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if len(lines) < 5 or not lines[0].startswith("svm-model-version"):
        raise DataError(f"not a model file: {path}")
    if lines[0].split()[1] != "1":
        raise DataError("unsupported model file version")
    fingerprint = bytes.fromhex(lines[1].split()[1])
    c = float(lines[2].split()[1])
    bias = float(lines[3].split()[1])
    class_label = lines[4].split(" ", 1)[1]
    sv_idx, sv_beta = [], []
    for ln in lines[5:]:
        if not ln.strip():
            continue
        doc, beta = ln.rsplit(" ", 1)
        if train_doc_ids is not None:
            try:
                sv_idx.append(train_doc_ids.index(doc))
            except ValueError as exc:
                raise DataError(f"support vector {doc!r} not in training doc ids") from exc
        else:
            sv_idx.append(int(doc))
        sv_beta.append(float(beta))
    n_train = len(train_doc_ids) if train_doc_ids is not None else (max(sv_idx) + 1 if sv_idx else 0)
    return SvmModel(
        sv_indices=np.asarray(sv_idx, dtype=np.int64),
        sv_betas=np.asarray(sv_beta, dtype=np.float64),
        bias=bias,
        C=c,
        fingerprint=fingerprint if any(fingerprint) else None,
        train_doc_ids=list(train_doc_ids) if train_doc_ids is not None else None,
        n_train=n_train,
        class_label=class_label,
    )


def save_multiclass(model: MulticlassModel, dir_path) -> None:
    d = Path(dir_path)
    d.mkdir(parents=True, exist_ok=True)
    names = []
    for k, sub in enumerate(model.models):
        name = f"class_{k:03d}.svm"
        save_model(sub, d / name)
        names.append(name)
    (d / "multiclass.txt").write_text("".join(f"{n}\n" for n in names), encoding="utf-8")


def load_multiclass(dir_path, train_doc_ids=None) -> MulticlassModel:
    d = Path(dir_path)
    manifest = d / "multiclass.txt"
    if not manifest.is_file():
        raise DataError(f"missing multiclass manifest in {d}")
    names = [ln.strip() for ln in manifest.read_text(encoding="utf-8").splitlines() if ln.strip()]
    models = [load_model(d / n, train_doc_ids=train_doc_ids) for n in names]
    return MulticlassModel(classes=[m.class_label for m in models], models=models)

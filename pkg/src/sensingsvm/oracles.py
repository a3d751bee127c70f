"""Independent brute-force oracles used to verify the fast code paths.

None of these routines share arithmetic with the implementations they
check: the simplex integral is evaluated by quadrature (no log-Gamma
closed form), the QP reference solves the dual by projected gradient
(no working-set logic), and the synthetic Bayes rule is evaluated both by
quadrature and by an independent conjugate closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import gammaln

from .counts import CountVector
from .errors import UsageError
from .text import Corpus, Vocabulary

__all__ = [
    "simplex_integral_oracle",
    "qp_oracle",
    "DirichletMixture",
    "SyntheticModel",
    "bayes_decision_quadrature",
    "bayes_decision_closed",
    "bayes_rule_numeric",
    "generate_corpus",
    "mc_expected_log_kernel",
]


# ---------------------------------------------------------------------------
# Simplex quadrature oracle
# ---------------------------------------------------------------------------

def _multinomial_coefficient(cv: CountVector) -> float:
    # Exact integer arithmetic; independent of any log-Gamma routine.
    coeff = 1
    remaining = cv.total
    for c in cv.counts.tolist():
        coeff *= math.comb(remaining, c)
        remaining -= c
    if coeff > 1e300:
        raise UsageError("counts too large for the quadrature oracle")
    return float(coeff)


@lru_cache(maxsize=4)
def _log_grid_1d(resolution: int):
    t = (np.arange(resolution) + 0.5) / resolution
    return np.log(t), np.log1p(-t)


@lru_cache(maxsize=4)
def _log_grid_2d(resolution: int):
    # Midpoint rule on the triangle {u, v >= 0, u + v <= 1} subdivided into
    # resolution^2 congruent cells: "up" cells with centroid offset 1/3 and
    # "down" cells with offset 2/3, each of area 1 / (2 resolution^2).
    r = resolution
    rows, cols = np.tril_indices(r)
    i_up, j_up = cols, rows - cols
    u = (i_up + 1.0 / 3.0) / r
    v = (j_up + 1.0 / 3.0) / r
    if r > 1:
        rows2, cols2 = np.tril_indices(r - 1)
        i_dn, j_dn = cols2, rows2 - cols2
        u = np.concatenate([u, (i_dn + 2.0 / 3.0) / r])
        v = np.concatenate([v, (j_dn + 2.0 / 3.0) / r])
    w = 1.0 - u - v
    return np.log(u), np.log(v), np.log(w)


def _midpoint_value(powers: np.ndarray, resolution: int) -> float:
    if powers.shape[0] == 2:
        lt, l1t = _log_grid_1d(resolution)
        vals = np.exp(powers[0] * lt + powers[1] * l1t)
        return float(vals.sum() / resolution)
    lu, lv, lw = _log_grid_2d(resolution)
    vals = np.exp(powers[0] * lu + powers[1] * lv + powers[2] * lw)
    return float(vals.sum() / (2.0 * resolution * resolution))


def _richardson(f, resolution: int) -> float:
    # One extrapolation step on the midpoint rule's h^2 error term.  The
    # plain rule at the resolutions used in tests is not accurate enough
    # for concentrated integrands (e.g. z^20); the extrapolated value is.
    r1 = resolution
    r2 = max(resolution // 2, 1)
    i1, i2 = f(r1), f(r2)
    h1, h2 = 1.0 / r1, 1.0 / r2
    return (h2 * h2 * i1 - h1 * h1 * i2) / (h2 * h2 - h1 * h1)


def simplex_integral_oracle(a: CountVector, b: CountVector, resolution: int) -> float:
    """Numerically integrate the product of two document likelihoods.

    Direct midpoint quadrature (with one Richardson step) of
    ``integral p(a|z) p(b|z) dz`` over the probability simplex, using the
    Lebesgue measure on the (W-1) free coordinates.  Supports W <= 3;
    ``resolution`` counts quadrature points per simplex edge.
    """
    if a.vocab_size != b.vocab_size:
        raise UsageError("vocabulary sizes differ")
    w = a.vocab_size
    if w > 3:
        raise UsageError("quadrature oracle supports W <= 3 only")
    if not isinstance(resolution, (int, np.integer)) or resolution < 100:
        raise UsageError("resolution must be an integer >= 100")
    coeff = _multinomial_coefficient(a) * _multinomial_coefficient(b)
    if w == 1:
        return coeff  # zero-dimensional simplex: the integrand itself
    powers = (a.to_dense() + b.to_dense()).astype(np.float64)
    return coeff * _richardson(lambda r: _midpoint_value(powers, r), int(resolution))


# ---------------------------------------------------------------------------
# QP reference solver
# ---------------------------------------------------------------------------

def _project_box_hyperplane(v: np.ndarray, y: np.ndarray, c: float) -> np.ndarray:
    """Euclidean projection onto {0 <= a <= C, y.a = 0} for y in {-1,+1}^M.

    The optimal point is clip(v - lam*y, 0, C) where lam is the root of the
    piecewise-linear non-increasing map h(lam) = y . clip(v - lam*y, 0, C);
    the root is found exactly by scanning the kink points.
    """
    # For y_i=+1, clip(v_i - lam) kinks at lam = v_i and v_i - C; for
    # y_i=-1, clip(v_i + lam) kinks at lam = -v_i and -v_i + C.  Both
    # collapse to lam = v_i*y_i and v_i*y_i - C*y_i.
    bps = np.unique(np.concatenate([v * y, v * y - c * y]))
    h = np.clip(v[None, :] - bps[:, None] * y[None, :], 0.0, c) @ y
    k = int(np.argmax(h <= 0.0))
    if h[k] > 0.0:  # root beyond the last kink: impossible when both classes present
        lam = bps[-1]
    elif k == 0:
        lam = bps[0]
    else:
        denom = h[k - 1] - h[k]
        lam = bps[k - 1] if denom == 0.0 else bps[k - 1] + (bps[k] - bps[k - 1]) * h[k - 1] / denom
    return np.clip(v - lam * y, 0.0, c)


def _kkt_gap(y, alpha, grad, c):
    up = ((y > 0) & (alpha < c)) | ((y < 0) & (alpha > 0))
    low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < c))
    if not up.any() or not low.any():
        return 0.0
    m_vals = -y * grad
    return float(np.max(m_vals[up]) - np.min(m_vals[low]))


def qp_oracle(gram, labels, c: float, tol: float = 1e-10, max_rounds: int = 200):
    """Reference dual solution by projected gradient with face refinement.

    Minimizes ``0.5 a'Qa - sum(a)`` with ``Q = (y y') * K`` over the
    box-and-equality feasible set.  Barzilai-Borwein projected-gradient
    sweeps identify the active face; an exact stationarity solve on that
    face (least squares, so rank-deficient duals are fine) polishes the
    iterate.  Stops when the maximal KKT violation drops below ``tol``.
    Deterministic; intended for M <= 50.  Returns ``(alphas, objective)``.
    """
    k_mat = gram.values if hasattr(gram, "values") else np.asarray(gram, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    m = y.size
    if k_mat.shape != (m, m):
        raise UsageError("gram must be square and match the label count")
    if m > 50:
        raise UsageError("qp_oracle is a brute-force reference; M <= 50 only")
    if not (np.any(y > 0) and np.any(y < 0)):
        raise UsageError("both classes must be present")
    if not c > 0:
        raise UsageError("C must be > 0")
    q = k_mat * np.outer(y, y)

    def objective(a):
        return 0.5 * float(a @ q @ a) - float(a.sum())

    alpha = np.zeros(m)
    grad = -np.ones(m)  # q @ 0 - 1
    lam_max = float(np.max(np.abs(np.linalg.eigvalsh(q))))
    step = 1.0 / max(lam_max, 1e-12)
    f_hist = [0.0]

    def _pg_sweep(alpha, grad, step, iters):
        for _ in range(iters):
            if _kkt_gap(y, alpha, grad, c) <= tol:
                return alpha, grad, step, True
            trial = _project_box_hyperplane(alpha - step * grad, y, c)
            d = trial - alpha
            g_dot_d = float(grad @ d)
            if g_dot_d >= 0.0:
                return alpha, grad, step, False
            f_ref = max(f_hist[-10:])
            t = 1.0
            f_new = objective(alpha + d)
            while f_new > f_ref + 1e-4 * t * g_dot_d and t > 1e-14:
                t *= 0.5
                f_new = objective(alpha + t * d)
            alpha_new = alpha + t * d
            grad_new = q @ alpha_new - 1.0
            s = alpha_new - alpha
            yv = grad_new - grad
            sty = float(s @ yv)
            if sty > 1e-300:
                step = min(max(float(s @ s) / sty, 1e-12), 1e12)
            else:
                step = min(step * 2.0, 1e12)
            alpha, grad = alpha_new, grad_new
            f_hist.append(f_new)
        return alpha, grad, step, False

    def _face_refine(alpha, grad):
        free = (alpha > 0.0) & (alpha < c)
        if not free.any():
            return alpha, grad
        fixed_upper = ~free & (alpha >= c)
        rhs_target = -float(y[fixed_upper].sum()) * c
        q_ff = q[np.ix_(free, free)]
        rhs = 1.0 - q[np.ix_(free, ~free)] @ alpha[~free]
        n_f = int(free.sum())
        system = np.zeros((n_f + 1, n_f + 1))
        system[:n_f, :n_f] = q_ff
        system[:n_f, n_f] = y[free]
        system[n_f, :n_f] = y[free]
        b = np.concatenate([rhs, [rhs_target]])
        sol, *_ = np.linalg.lstsq(system, b, rcond=None)
        cand = alpha.copy()
        cand[free] = sol[:n_f]
        d = cand - alpha
        # Longest feasible step toward the face solution, then re-project
        # to restore the equality constraint exactly.
        t_max = 1.0
        pos, neg = d > 0, d < 0
        if pos.any():
            t_max = min(t_max, float(np.min((c - alpha[pos]) / d[pos])))
        if neg.any():
            t_max = min(t_max, float(np.min((0.0 - alpha[neg]) / d[neg])))
        if t_max <= 0.0:
            return alpha, grad
        cand = _project_box_hyperplane(np.clip(alpha + t_max * d, 0.0, c), y, c)
        if objective(cand) < objective(alpha):
            return cand, q @ cand - 1.0
        return alpha, grad

    for _ in range(max_rounds):
        alpha, grad, step, done = _pg_sweep(alpha, grad, step, 50)
        if done:
            break
        alpha, grad = _face_refine(alpha, grad)
        if _kkt_gap(y, alpha, grad, c) <= tol:
            break
    return alpha, objective(alpha)


# ---------------------------------------------------------------------------
# Synthetic generative model and Bayes rules
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DirichletMixture:
    """Finite mixture of Dirichlet densities over the simplex."""

    weights: tuple[float, ...]
    alphas: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        object.__setattr__(
            self, "alphas", tuple(tuple(float(a) for a in alpha) for alpha in self.alphas)
        )
        if len(self.weights) != len(self.alphas) or not self.weights:
            raise UsageError("mixture needs one weight per component")
        if abs(sum(self.weights) - 1.0) > 1e-12 or min(self.weights) < 0:
            raise UsageError("mixture weights must be non-negative and sum to 1")
        dims = {len(alpha) for alpha in self.alphas}
        if len(dims) != 1:
            raise UsageError("all components must share a dimension")
        if any(a <= 0 for alpha in self.alphas for a in alpha):
            raise UsageError("Dirichlet parameters must be > 0")

    @property
    def dim(self) -> int:
        return len(self.alphas[0])

    def log_density_terms(self, log_z: np.ndarray) -> np.ndarray:
        """Density at simplex points given per-coordinate logs (k x npts)."""
        dens = np.zeros(log_z.shape[1])
        for w_k, alpha in zip(self.weights, self.alphas):
            al = np.asarray(alpha)
            log_b = float(np.sum(gammaln(al)) - gammaln(np.sum(al)))
            dens += w_k * np.exp((al - 1.0) @ log_z - log_b)
        return dens


@dataclass(frozen=True)
class SyntheticModel:
    """Two-class generative model: y -> z (Dirichlet mixture) -> x (multinomial)."""

    vocab_size: int
    prior_pos: float
    mixture_pos: DirichletMixture
    mixture_neg: DirichletMixture
    doc_length: int
    seed: int

    def __post_init__(self):
        if not 1 <= self.vocab_size <= 5:
            raise UsageError("synthetic models support vocab_size in [1, 5]")
        if not 0.0 < self.prior_pos < 1.0:
            raise UsageError("prior_pos must lie in (0, 1)")
        if self.mixture_pos.dim != self.vocab_size or self.mixture_neg.dim != self.vocab_size:
            raise UsageError("mixture dimension must equal vocab_size")
        if self.doc_length < 1:
            raise UsageError("doc_length must be >= 1")

    @property
    def prior_neg(self) -> float:
        return 1.0 - self.prior_pos


def _quadrature_points(w: int, resolution: int):
    if w == 2:
        lt, l1t = _log_grid_1d(resolution)
        log_z = np.vstack([lt, l1t])
        weight = 1.0 / resolution
    else:
        lu, lv, lw = _log_grid_2d(resolution)
        log_z = np.vstack([lu, lv, lw])
        weight = 1.0 / (2.0 * resolution * resolution)
    return log_z, weight


def bayes_decision_quadrature(model: SyntheticModel, x: CountVector, resolution: int = 800) -> float:
    """Decision statistic <p(x|z), p(z,+1) - p(z,-1)> by simplex quadrature."""
    if model.vocab_size > 3:
        raise UsageError("quadrature Bayes rule supports W <= 3 only")
    if x.vocab_size != model.vocab_size:
        raise UsageError("document vocabulary does not match the model")
    coeff = _multinomial_coefficient(x)
    powers = x.to_dense().astype(np.float64)
    if model.vocab_size == 1:
        return coeff * (model.prior_pos - model.prior_neg)

    def value(r: int) -> float:
        log_z, weight = _quadrature_points(model.vocab_size, r)
        lik = coeff * np.exp(powers @ log_z)
        signed = model.prior_pos * model.mixture_pos.log_density_terms(log_z)
        signed -= model.prior_neg * model.mixture_neg.log_density_terms(log_z)
        return float(np.sum(lik * signed) * weight)

    return _richardson(value, int(resolution))


def _log_dirichlet_multinomial(x_dense: np.ndarray, n_total: int, alpha: np.ndarray, log_coeff: float) -> float:
    a_sum = float(np.sum(alpha))
    val = log_coeff + gammaln(a_sum) - gammaln(n_total + a_sum)
    val += float(np.sum(gammaln(x_dense + alpha) - gammaln(alpha)))
    return val


def bayes_decision_closed(model: SyntheticModel, x: CountVector) -> float:
    """Same decision statistic via the conjugate closed form (any W <= 5)."""
    if x.vocab_size != model.vocab_size:
        raise UsageError("document vocabulary does not match the model")
    x_dense = x.to_dense().astype(np.float64)
    log_coeff = math.log(_multinomial_coefficient(x))
    val = 0.0
    for sign, prior, mix in (
        (1.0, model.prior_pos, model.mixture_pos),
        (-1.0, model.prior_neg, model.mixture_neg),
    ):
        for w_k, alpha in zip(mix.weights, mix.alphas):
            lp = _log_dirichlet_multinomial(x_dense, x.total, np.asarray(alpha), log_coeff)
            val += sign * prior * w_k * math.exp(lp)
    return val


def bayes_rule_numeric(model: SyntheticModel, x: CountVector, resolution: int = 800) -> int:
    """Bayes-optimal label by quadrature; ties (value 0) resolve to +1."""
    return 1 if bayes_decision_quadrature(model, x, resolution) >= 0.0 else -1


def bayes_rule_closed(model: SyntheticModel, x: CountVector) -> int:
    return 1 if bayes_decision_closed(model, x) >= 0.0 else -1


def generate_corpus(model: SyntheticModel, m: int, seed: int | None = None, split: str = "synthetic") -> Corpus:
    """Sample labeled documents: y, then z | y, then x | z.

    Deterministic for a fixed seed (defaults to the model's own).
    """
    if m < 1:
        raise UsageError("corpus size must be >= 1")
    rng = np.random.default_rng(model.seed if seed is None else seed)
    vocab = Vocabulary.from_terms([f"w{j:03d}" for j in range(model.vocab_size)])
    ids, vectors, labels = [], [], []
    for i in range(m):
        positive = rng.random() < model.prior_pos
        mix = model.mixture_pos if positive else model.mixture_neg
        k = int(rng.choice(len(mix.weights), p=np.asarray(mix.weights)))
        z = rng.dirichlet(np.asarray(mix.alphas[k]))
        draw = rng.multinomial(model.doc_length, z)
        nz = np.flatnonzero(draw)
        ids.append(f"syn{i:06d}")
        vectors.append(CountVector(nz, draw[nz], model.vocab_size))
        labels.append("+1" if positive else "-1")
    return Corpus(
        doc_ids=ids,
        vectors=vectors,
        labels=labels,
        vocab_size=model.vocab_size,
        vocab_fingerprint=vocab.fingerprint,
        split=split,
    )


# ---------------------------------------------------------------------------
# Monte-Carlo oracle for the resampling kernel
# ---------------------------------------------------------------------------

def mc_expected_log_kernel(doc: CountVector, resample_n: int, n_samples: int, seed: int):
    """Estimate E[log K(X, X)] where X resamples ``doc`` to ``resample_n`` words.

    Matches the shared-draw semantics of the resampling kernel evaluated on
    two copies of the same document (one draw, used on both sides).
    Returns ``(mean, standard_error)``.
    """
    from .kernels import log_kernel_exact  # local import keeps oracles importable alone

    if doc.total == 0:
        raise UsageError("empty document")
    rng = np.random.default_rng(seed)
    pvals = doc.counts / doc.total
    pvals = pvals / pvals.sum()
    draws = rng.multinomial(resample_n, pvals, size=n_samples)
    vals = np.empty(n_samples)
    for i in range(n_samples):
        nz = np.flatnonzero(draws[i])
        cv = CountVector(doc.word_ids[nz], draws[i][nz], doc.vocab_size)
        vals[i] = log_kernel_exact(cv, cv)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n_samples))

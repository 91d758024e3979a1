"""Feature selection: univariate ANOVA-F ranking and repeated elastic net.

The elastic-net logistic solver used by the ensemble is cyclic coordinate
descent on a quadratic majorization of the logistic loss (curvature bounded
by 1/4), with an unpenalized intercept and soft-thresholded updates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import t as student_t

from .errors import DataError, NumericalError

_ZERO_WEIGHT = 1e-10


@dataclass(frozen=True)
class SelectionMask:
    """Boolean keep-mask plus per-feature scores and provenance."""

    keep: np.ndarray
    scores: np.ndarray
    method: str
    params: dict = field(default_factory=dict)
    fold: int | None = None

    def __post_init__(self):
        keep = np.asarray(self.keep, dtype=bool)
        scores = np.asarray(self.scores, dtype=np.float64)
        object.__setattr__(self, "keep", keep)
        object.__setattr__(self, "scores", scores)
        if keep.shape != scores.shape or keep.ndim != 1:
            raise DataError("keep and scores must be matching 1-d vectors")

    @property
    def n_kept(self) -> int:
        return int(self.keep.sum())


@dataclass(frozen=True)
class RentCriteria:
    """Per-feature stability criteria, each in [0, 1]."""

    c1: np.ndarray  # selection frequency
    c2: np.ndarray  # sign stability
    c3: np.ndarray  # weight significance (1 - p of t-test against 0)


def f_oneway_scores(x: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """One-way ANOVA F per column of x for arbitrary group labels."""
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels)
    uniq = list(dict.fromkeys(labels.tolist()))
    g = len(uniq)
    n = x.shape[0]
    if g < 2:
        raise DataError("ANOVA needs at least two groups")
    if n < 3 or n <= g:
        raise DataError(f"ANOVA needs more samples than groups, got n={n}, g={g}")
    grand = x.mean(axis=0)
    ssb = np.zeros(x.shape[1])
    ssw = np.zeros(x.shape[1])
    for u in uniq:
        grp = x[labels == u]
        gm = grp.mean(axis=0)
        ssb += grp.shape[0] * (gm - grand) ** 2
        ssw += ((grp - gm) ** 2).sum(axis=0)
    msb = ssb / (g - 1)
    msw = ssw / (n - g)
    out = np.empty(x.shape[1])
    zero_within = msw <= 0
    with np.errstate(divide="ignore", invalid="ignore"):
        out = msb / np.maximum(msw, 1e-300)
    out[zero_within & (msb > 0)] = np.inf
    out[zero_within & (msb <= 0)] = 0.0
    return out


def anova_f_scores(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-feature two-group ANOVA F; +inf sentinel for perfect separation."""
    y = np.asarray(y)
    if len(np.unique(y)) != 2:
        raise DataError("anova_f_scores needs exactly two classes present")
    return f_oneway_scores(x, y)


def top_m_mask(scores: np.ndarray, m: int) -> SelectionMask:
    """Keep the m largest scores; ties break toward the lower feature index."""
    scores = np.asarray(scores, dtype=np.float64)
    p = scores.shape[0]
    if not 1 <= m <= p:
        raise DataError(f"m must be in [1, {p}], got {m}")
    order = np.lexsort((np.arange(p), -scores))  # descending score, then index
    keep = np.zeros(p, dtype=bool)
    keep[order[:m]] = True
    return SelectionMask(keep, scores, "anova_f", {"m": int(m)})


def logistic_smooth_parts(x, y, weights, intercept, lam, l1_ratio):
    """Value and gradient of the smooth objective part (loss + ridge term)."""
    x = np.asarray(x, dtype=np.float64)
    y01 = np.asarray(y, dtype=np.float64)
    n = x.shape[0]
    f = x @ weights + intercept
    # log(1 + exp(-s*f)) written stably
    margin = np.where(y01 > 0.5, f, -f)
    loss = float(np.mean(np.logaddexp(0.0, -margin)))
    p = _sigmoid(f)
    resid = p - y01
    grad_w = x.T @ resid / n + lam * (1.0 - l1_ratio) * weights
    grad_b = float(resid.mean())
    value = loss + 0.5 * lam * (1.0 - l1_ratio) * float(weights @ weights)
    return value, grad_w, grad_b


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class EnetResult:
    weights: np.ndarray
    intercept: float
    converged: bool
    n_iter: int


def elastic_net_kkt_residual(x, y, weights, intercept, lam, l1_ratio) -> float:
    """Max violation of the elastic-net KKT conditions at (weights, intercept)."""
    _, grad_w, grad_b = logistic_smooth_parts(x, y, weights, intercept, lam, l1_ratio)
    resid = np.abs(grad_b)
    thresh = lam * l1_ratio
    for j, w in enumerate(weights):
        if abs(w) > _ZERO_WEIGHT:
            resid = max(resid, abs(grad_w[j] + thresh * np.sign(w)))
        else:
            resid = max(resid, max(0.0, abs(grad_w[j]) - thresh))
    return float(resid)


def elastic_net_logistic(
    x: np.ndarray,
    y: np.ndarray,
    lam: float,
    l1_ratio: float,
    max_iter: int = 10000,
    tol: float = 1e-8,
    standardize: bool = True,
) -> EnetResult:
    """Elastic-net penalized logistic regression by cyclic coordinate descent.

    Minimizes mean logistic loss + lam*(l1_ratio*||w||_1 +
    (1-l1_ratio)/2*||w||_2^2) with an unpenalized intercept. With
    standardize=True columns are z-scored internally and the reported
    weights are mapped back to the original scale.
    """
    x = np.asarray(x, dtype=np.float64)
    y01 = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != y01.shape[0]:
        raise DataError(f"bad shapes: x {x.shape}, y {y01.shape}")
    if not np.isfinite(x).all():
        raise DataError("design matrix contains non-finite values")
    if lam < 0 or not 0.0 <= l1_ratio <= 1.0:
        raise DataError(f"need lam >= 0 and l1_ratio in [0, 1], got {lam}, {l1_ratio}")
    n, p = x.shape

    if standardize:
        mu = x.mean(axis=0)
        sd = x.std(axis=0)
        sd = np.where(sd > 0, sd, 1.0)
        xs = (x - mu) / sd
    else:
        mu = np.zeros(p)
        sd = np.ones(p)
        xs = x

    # Quadratic majorant of the loss: Hessian bounded by X'X/(4n).
    m_j = (xs**2).sum(axis=0) / (4.0 * n)
    m_j = np.where(m_j > 0, m_j, 1.0)
    l1 = lam * l1_ratio
    l2 = lam * (1.0 - l1_ratio)

    w = np.zeros(p)
    b = 0.0
    f = np.zeros(n)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        resid = _sigmoid(f) - y01
        grad_loss = xs.T @ resid / n
        grad_b = resid.mean()
        # One CD sweep on the quadratic model at (w, b); u tracks xs @ dw.
        u = np.zeros(n)
        max_step = 0.0
        for j in range(p):
            g_q = grad_loss[j] + (xs[:, j] @ u) / (4.0 * n)
            wj_new = _soft_threshold(m_j[j] * w[j] - g_q, l1) / (m_j[j] + l2)
            step = wj_new - w[j]
            if step != 0.0:
                u += step * xs[:, j]
                w[j] = wj_new
                max_step = max(max_step, abs(step))
        db = -(grad_b + u.sum() / (4.0 * n)) / 0.25
        b += db
        f += u + db
        max_step = max(max_step, abs(db))
        if max_step < tol:
            if elastic_net_kkt_residual(xs, y01, w, b, lam, l1_ratio) < 1e-7:
                converged = True
                break
    if not converged:
        converged = elastic_net_kkt_residual(xs, y01, w, b, lam, l1_ratio) < 1e-6

    w_out = w / sd
    b_out = b - float((w / sd) @ mu)
    return EnetResult(w_out, b_out, converged, it)


def _soft_threshold(u: float, thresh: float) -> float:
    if u > thresh:
        return u - thresh
    if u < -thresh:
        return u + thresh
    return 0.0


def rent_select(
    x: np.ndarray,
    y: np.ndarray,
    K: int = 100,
    subsample: float = 0.9,
    tau: float = 0.5,
    lam: float = 0.1,
    l1_ratio: float = 0.5,
    seed: int = 0,
) -> tuple[SelectionMask, RentCriteria]:
    """Repeated elastic net: ensemble K models on stratified subsamples.

    A feature is kept when all three stability criteria reach tau: selection
    frequency, sign stability, and significance of the weight distribution
    against zero. If nothing qualifies the single best feature (largest
    minimum criterion) is kept so downstream models never go empty.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    n, p = x.shape
    if K < 1:
        raise DataError(f"ensemble size must be >= 1, got {K}")
    if not 0.0 < subsample <= 1.0:
        raise DataError(f"subsample fraction must be in (0, 1], got {subsample}")
    classes = np.unique(y)
    if classes.size != 2:
        raise DataError("rent_select needs exactly two classes present")

    weights = np.zeros((K, p))
    done = 0
    attempts = 0
    while done < K:
        if attempts >= 10 * K:
            raise DataError(f"subsample budget exhausted after {attempts} draws ({done}/{K} models)")
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=(attempts,))))
        attempts += 1
        rows = []
        for c in classes:
            members = np.flatnonzero(y == c)
            n_take = max(1, int(round(subsample * members.size)))
            rows.append(rng.permutation(members)[:n_take])
        rows = np.sort(np.concatenate(rows))
        if np.unique(y[rows]).size < 2:
            continue
        fit = elastic_net_logistic(x[rows], (y[rows] == classes.max()).astype(float), lam, l1_ratio)
        weights[done] = fit.weights
        done += 1

    crit = rent_criteria(weights)
    crit_min = np.minimum(np.minimum(crit.c1, crit.c2), crit.c3)
    keep = crit_min >= tau
    if not keep.any():
        keep = np.zeros(p, dtype=bool)
        keep[int(np.argmax(crit_min))] = True
    params = {"tau": float(tau), "K": int(K), "subsample": float(subsample),
              "l1_ratio": float(l1_ratio), "lambda": float(lam)}
    return SelectionMask(keep, crit_min, "rent", params), crit


def rent_criteria(weights: np.ndarray) -> RentCriteria:
    """The three stability criteria from an ensemble weight matrix [K, p].

    c1: fraction of models with a nonzero weight; c2: |net sign| / K;
    c3: 1 - p of a two-sided one-sample t-test of the weights against zero
    (0 when every weight is zero, 1 when they are constant and nonzero).
    """
    weights = np.asarray(weights, dtype=np.float64)
    K, p = weights.shape
    nonzero = np.abs(weights) > _ZERO_WEIGHT
    c1 = nonzero.mean(axis=0)
    c2 = np.abs(np.sign(np.where(nonzero, weights, 0.0)).sum(axis=0)) / K
    c3 = np.zeros(p)
    for j in range(p):
        wj = weights[:, j]
        if not np.any(np.abs(wj) > _ZERO_WEIGHT):
            continue
        sd = wj.std(ddof=1)
        if sd == 0:
            c3[j] = 1.0 if wj.mean() != 0 else 0.0
            continue
        t_stat = wj.mean() / (sd / np.sqrt(K))
        pval = 2.0 * float(student_t.sf(abs(t_stat), K - 1))
        c3[j] = 1.0 - pval
    return RentCriteria(c1, c2, c3)


@dataclass(frozen=True)
class SelectConfig:
    """Which selection method runs inside each outer CV fold, and with what."""

    method: str = "none"  # none | anova_f | rent
    m: int = 68
    tau: float = 0.5
    rent_K: int = 100
    rent_subsample: float = 0.9
    lambda_: float = 0.1
    l1_ratio: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.method not in ("none", "anova_f", "rent"):
            raise DataError(f"unknown selection method {self.method!r}")


def fit_selection(x: np.ndarray, y: np.ndarray, cfg: SelectConfig, fold: int | None = None) -> SelectionMask:
    """Fit the configured selection method on (x, y) only."""
    p = x.shape[1]
    if cfg.method == "none":
        mask = SelectionMask(np.ones(p, dtype=bool), np.zeros(p), "none", {}, fold)
    elif cfg.method == "anova_f":
        scores = anova_f_scores(x, y)
        mask = top_m_mask(scores, min(cfg.m, p))
        mask = SelectionMask(mask.keep, mask.scores, mask.method, mask.params, fold)
    else:
        seed = cfg.seed if fold is None else int(np.random.SeedSequence(entropy=cfg.seed, spawn_key=(fold,)).generate_state(1)[0])
        mask, _ = rent_select(
            x, y, K=cfg.rent_K, subsample=cfg.rent_subsample, tau=cfg.tau,
            lam=cfg.lambda_, l1_ratio=cfg.l1_ratio, seed=seed,
        )
        mask = SelectionMask(mask.keep, mask.scores, mask.method, mask.params, fold)
    return mask


def merge_masks(masks: list[SelectionMask]) -> SelectionMask:
    """Union of per-fold keeps; scores are the per-feature max across masks."""
    if not masks:
        raise DataError("no masks to merge")
    p = masks[0].keep.shape[0]
    for m in masks:
        if m.keep.shape[0] != p:
            raise DataError("masks cover different feature spaces")
    keep = np.zeros(p, dtype=bool)
    scores = np.full(p, -np.inf)
    for m in masks:
        keep |= m.keep
        scores = np.maximum(scores, m.scores)
    return SelectionMask(keep, scores, masks[0].method, {"merged": len(masks)})

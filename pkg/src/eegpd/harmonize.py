"""Reference-batch ComBat harmonization with empirical Bayes and bootstrap bagging.

Per feature, a location/scale model y = alpha + X beta + batch effects is fit
by least squares; standardized residuals give per-batch location and scale
adjusters, optionally shrunk by parametric empirical Bayes, and finally
re-expressed relative to a reference batch so reference data pass through
unchanged. Bootstrap bagging averages all fitted parameters over stratified
within-batch resamples.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, NumericalError
from .io import FeatureMatrix

_EB_TOL = 1e-6
_EB_MAX_ITER = 100


@dataclass(frozen=True)
class CovariateSpec:
    """Biological covariates preserved by harmonization.

    Age enters standardized (z-scored over the fit population); sex and
    diagnosis as 0/1 indicators (female=1, PD=1).
    """

    columns: tuple[str, ...] = ("age", "sex", "diagnosis")
    include_intercept: bool = False

    def __post_init__(self):
        unknown = [c for c in self.columns if c not in ("age", "sex", "diagnosis")]
        if unknown:
            raise DataError(f"unknown covariate columns: {unknown}")


@dataclass(frozen=True)
class CombatModel:
    """Fitted harmonization parameters, immutable after fit."""

    feature_names: tuple[str, ...]
    batches: tuple[str, ...]
    reference: str
    eb: bool
    batch_key: str
    cov: CovariateSpec
    alpha: np.ndarray          # [p] grand location
    beta: np.ndarray           # [c, p] covariate coefficients
    sigma: np.ndarray          # [p] pooled scale
    gamma_star: np.ndarray     # [n_batches, p] location adjusters, 0 for reference
    delta_star: np.ndarray     # [n_batches, p] scale adjusters, 1 for reference
    age_mean: float = 0.0
    age_sd: float = 1.0

    def batch_index(self, batch: str) -> int:
        try:
            return self.batches.index(batch)
        except ValueError:
            raise DataError(f"batch {batch!r} unknown to the harmonization model") from None


def _covariate_matrix(fm: FeatureMatrix, cov: CovariateSpec, age_mean: float, age_sd: float) -> np.ndarray:
    cols = []
    for name in cov.columns:
        if name == "age":
            age = np.array([s.age for s in fm.subjects], dtype=np.float64)
            cols.append((age - age_mean) / age_sd)
        elif name == "sex":
            cols.append(np.array([1.0 if s.sex == "female" else 0.0 for s in fm.subjects]))
        else:
            cols.append(np.array([1.0 if s.diagnosis == "PD" else 0.0 for s in fm.subjects]))
    if not cols:
        return np.empty((fm.n_subjects, 0))
    return np.stack(cols, axis=1)


def _batch_values(fm: FeatureMatrix, batch_key: str) -> list[str]:
    valid = ("center", "sex", "diagnosis")
    if batch_key not in valid:
        raise DataError(f"batch key must be one of {valid}, got {batch_key!r}")
    return [str(getattr(s, batch_key)) for s in fm.subjects]


def _age_standardizer(fm: FeatureMatrix, cov: CovariateSpec) -> tuple[float, float]:
    if "age" not in cov.columns:
        return 0.0, 1.0
    age = np.array([s.age for s in fm.subjects], dtype=np.float64)
    sd = float(age.std())
    return float(age.mean()), sd if sd > 0 else 1.0


def _least_squares(design: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Least-squares fit tolerating exactly-zero columns (coefficient 0)."""
    zero_cols = np.flatnonzero(~design.any(axis=0))
    active = np.flatnonzero(design.any(axis=0))
    d = design[:, active]
    coef_active, _, rank, _ = np.linalg.lstsq(d, y, rcond=None)
    if rank < d.shape[1]:
        raise NumericalError("singular design matrix in harmonization fit")
    coef = np.zeros((design.shape[1], y.shape[1]))
    coef[active] = coef_active
    if zero_cols.size:
        coef[zero_cols] = 0.0
    return coef


def _moment_priors(delta_sq: np.ndarray) -> tuple[float, float]:
    """Inverse-gamma hyperparameters from across-feature moments of delta^2."""
    m = float(delta_sq.mean())
    s2 = float(delta_sq.var(ddof=1)) if delta_sq.size > 1 else 0.0
    if s2 <= 0:
        return np.inf, np.inf
    lam = (m * m + 2.0 * s2) / s2
    theta = m * (lam - 1.0)
    return lam, theta


def _eb_shrink(z: np.ndarray, members: list[np.ndarray], gamma_hat: np.ndarray, delta_sq_hat: np.ndarray):
    """Parametric EB shrinkage of per-batch location/scale estimates.

    Normal prior on gamma, inverse-gamma on delta^2; hyperparameters by
    method of moments across features; fixed point iterated gamma-then-delta.
    """
    n_batches, p = gamma_hat.shape
    gamma_star = gamma_hat.copy()
    delta_sq_star = delta_sq_hat.copy()
    for b in range(n_batches):
        rows = members[b]
        n_b = rows.size
        g_bar = float(gamma_hat[b].mean())
        tau_sq = float(gamma_hat[b].var(ddof=1)) if p > 1 else 0.0
        lam, theta = _moment_priors(delta_sq_hat[b])
        if tau_sq <= 0 or not np.isfinite(lam):
            continue  # degenerate priors: keep raw estimates
        g = gamma_hat[b].copy()
        d = delta_sq_hat[b].copy()
        zb = z[rows]
        for _ in range(_EB_MAX_ITER):
            g_new = (n_b * tau_sq * gamma_hat[b] + d * g_bar) / (n_b * tau_sq + d)
            resid_sq = ((zb - g_new[None, :]) ** 2).sum(axis=0)
            d_new = (theta + 0.5 * resid_sq) / (n_b / 2.0 + lam - 1.0)
            change = max(np.max(np.abs(g_new - g)), np.max(np.abs(d_new - d)))
            g, d = g_new, d_new
            if change < _EB_TOL:
                break
        gamma_star[b] = g
        delta_sq_star[b] = d
    return gamma_star, delta_sq_star


def combat_fit(
    fm: FeatureMatrix,
    batch_key: str = "center",
    cov: CovariateSpec | None = None,
    reference: str | None = None,
    eb: bool = True,
    age_standardization: tuple[float, float] | None = None,
) -> CombatModel:
    """Fit the harmonization model on a feature matrix.

    reference defaults to the largest batch. Requires at least two subjects
    per batch and nonzero within-batch variance for every feature.
    age_standardization pins the (mean, sd) used for the age covariate;
    by default it is computed from the fit population.
    """
    cov = cov if cov is not None else CovariateSpec()
    batch_vals = _batch_values(fm, batch_key)
    batches = tuple(dict.fromkeys(batch_vals))  # first-appearance order
    members = [np.flatnonzero(np.array(batch_vals) == b) for b in batches]
    sizes = np.array([m.size for m in members])
    if np.any(sizes < 2):
        small = batches[int(np.argmin(sizes))]
        raise DataError(f"batch {small!r} has fewer than 2 subjects")
    if reference is None:
        reference = batches[int(np.argmax(sizes))]
    if reference not in batches:
        raise DataError(f"reference batch {reference!r} not present in data")

    y = fm.values
    for b, rows in zip(batches, members):
        var = y[rows].var(axis=0)
        if np.any(var <= 0):
            f = fm.feature_names[int(np.flatnonzero(var <= 0)[0])]
            raise DataError(f"feature {f!r} has zero variance within batch {b!r}")

    if age_standardization is None:
        age_mean, age_sd = _age_standardizer(fm, cov)
    else:
        age_mean, age_sd = age_standardization
    x = _covariate_matrix(fm, cov, age_mean, age_sd)
    onehot = np.zeros((fm.n_subjects, len(batches)))
    for b, rows in enumerate(members):
        onehot[rows, b] = 1.0
    if cov.include_intercept:
        design = np.hstack([np.ones((fm.n_subjects, 1)), onehot[:, 1:], x])
    else:
        design = np.hstack([onehot, x])
    coef = _least_squares(design, y)
    fitted = design @ coef
    n_cov = x.shape[1]
    beta = coef[coef.shape[0] - n_cov :] if n_cov else np.empty((0, y.shape[1]))
    cov_part = x @ beta if n_cov else 0.0

    # Grand location: size-weighted mean of per-batch locations net of covariates.
    batch_loc = np.stack([(fitted[rows] - (cov_part[rows] if n_cov else 0.0)).mean(axis=0) for rows in members])
    alpha = (sizes[:, None] * batch_loc).sum(axis=0) / sizes.sum()
    resid = y - fitted
    sigma_sq = (resid**2).mean(axis=0)
    if np.any(sigma_sq <= 0):
        f = fm.feature_names[int(np.flatnonzero(sigma_sq <= 0)[0])]
        raise DataError(f"feature {f!r} has zero pooled residual variance")
    sigma = np.sqrt(sigma_sq)

    z = (y - alpha[None, :] - (cov_part if n_cov else 0.0)) / sigma[None, :]
    gamma_hat = np.stack([z[rows].mean(axis=0) for rows in members])
    delta_sq_hat = np.stack([z[rows].var(axis=0, ddof=1) for rows in members])

    if eb:
        gamma_adj, delta_sq_adj = _eb_shrink(z, members, gamma_hat, delta_sq_hat)
    else:
        gamma_adj, delta_sq_adj = gamma_hat, delta_sq_hat
    delta_adj = np.sqrt(np.maximum(delta_sq_adj, 0.0))
    if np.any(delta_adj <= 0):
        raise NumericalError("nonpositive scale adjuster after fit")

    ref_idx = batches.index(reference)
    delta_star = delta_adj / delta_adj[ref_idx][None, :]
    gamma_star = gamma_adj - gamma_adj[ref_idx][None, :] * delta_star
    gamma_star[ref_idx] = 0.0
    delta_star[ref_idx] = 1.0

    return CombatModel(
        feature_names=fm.feature_names,
        batches=batches,
        reference=reference,
        eb=eb,
        batch_key=batch_key,
        cov=cov,
        alpha=alpha,
        beta=beta,
        sigma=sigma,
        gamma_star=gamma_star,
        delta_star=delta_star,
        age_mean=age_mean,
        age_sd=age_sd,
    )


def combat_transform(model: CombatModel, fm: FeatureMatrix) -> FeatureMatrix:
    """Apply fitted adjusters; reference-batch rows come back unchanged."""
    if fm.feature_names != model.feature_names:
        raise DataError("feature names do not match the harmonization model")
    batch_vals = _batch_values(fm, model.batch_key)
    rows_b = np.array([model.batch_index(b) for b in batch_vals])
    x = _covariate_matrix(fm, model.cov, model.age_mean, model.age_sd)
    cov_part = x @ model.beta if model.beta.size else 0.0
    z = (fm.values - model.alpha[None, :] - cov_part) / model.sigma[None, :]
    adj = (z - model.gamma_star[rows_b]) / model.delta_star[rows_b]
    out = model.sigma[None, :] * adj + model.alpha[None, :] + cov_part
    ref = rows_b == model.batch_index(model.reference)
    out[ref] = fm.values[ref]  # exact pass-through for the reference batch
    return FeatureMatrix(out, fm.feature_names, fm.subjects)


def bootstrap_combat_fit(
    fm: FeatureMatrix,
    batch_key: str = "center",
    cov: CovariateSpec | None = None,
    reference: str | None = None,
    B: int = 1000,
    eb: bool = True,
    seed: int = 0,
    resampler=None,
) -> CombatModel:
    """Bootstrap-bagged fit: average parameters over B within-batch resamples.

    Resamples draw each batch's original size with replacement. Repetitions
    that violate fit preconditions (e.g. a resample collapses a feature's
    within-batch variance) are redrawn, up to a total budget of 10*B draws.
    A repetition's random stream depends only on (seed, draw index).
    resampler(rng, batch_rows) -> rows overrides the draw (degenerate
    resamplers are useful for testing).
    """
    if B < 1:
        raise DataError(f"bootstrap repetitions must be >= 1, got {B}")
    cov = cov if cov is not None else CovariateSpec()
    batch_vals = _batch_values(fm, batch_key)
    batches = tuple(dict.fromkeys(batch_vals))
    members = [np.flatnonzero(np.array(batch_vals) == b) for b in batches]
    # Pin the age standardization to the full fit population so covariate
    # coefficients are averaged on a common scale across repetitions.
    age_std = _age_standardizer(fm, cov)

    base = combat_fit(fm, batch_key, cov, reference, eb, age_standardization=age_std)

    sums: dict[str, np.ndarray] = {}
    done = 0
    attempts = 0
    while done < B:
        if attempts >= 10 * B:
            raise NumericalError(
                f"bootstrap redraw budget exhausted after {attempts} attempts ({done}/{B} fits)"
            )
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=(attempts,))))
        attempts += 1
        if resampler is None:
            rows = np.concatenate([m[rng.integers(0, m.size, size=m.size)] for m in members])
        else:
            rows = np.concatenate([np.asarray(resampler(rng, m)) for m in members])
        sample = fm.take_subjects(rows.tolist())
        try:
            model = combat_fit(sample, batch_key, cov, base.reference, eb, age_standardization=age_std)
        except (DataError, NumericalError):
            continue
        if model.batches != base.batches:  # resample reordered batches; cannot happen with per-batch draws
            continue
        for name in ("alpha", "beta", "sigma", "gamma_star", "delta_star"):
            sums[name] = sums.get(name, 0.0) + getattr(model, name)
        done += 1

    return CombatModel(
        feature_names=base.feature_names,
        batches=base.batches,
        reference=base.reference,
        eb=eb,
        batch_key=batch_key,
        cov=cov,
        alpha=sums["alpha"] / B,
        beta=sums["beta"] / B,
        sigma=sums["sigma"] / B,
        gamma_star=sums["gamma_star"] / B,
        delta_star=sums["delta_star"] / B,
        age_mean=age_std[0],
        age_sd=age_std[1],
    )


def between_batch_f(values: np.ndarray, batch_labels) -> np.ndarray:
    """Per-feature one-way ANOVA F across batches (diagnostic for batch effects)."""
    labels = np.asarray(list(batch_labels))
    groups = [values[labels == b] for b in dict.fromkeys(labels.tolist())]
    g = len(groups)
    n = values.shape[0]
    if g < 2 or n <= g:
        raise DataError("need at least two batches and more subjects than batches")
    grand = values.mean(axis=0)
    ssb = sum(len(gr) * (gr.mean(axis=0) - grand) ** 2 for gr in groups)
    ssw = sum(((gr - gr.mean(axis=0)) ** 2).sum(axis=0) for gr in groups)
    msb = ssb / (g - 1)
    msw = ssw / (n - g)
    with np.errstate(divide="ignore", invalid="ignore"):
        f = np.where(msw > 0, msb / np.maximum(msw, 1e-300), np.where(msb > 0, np.inf, 0.0))
    return f

"""The four classifiers, trained on standardized features with stored scalers.

All trainers are deterministic: ties in neighbors, votes, and tree splits
break by the lowest index / lowest threshold, so identical inputs always
produce identical models. Scores are monotone decision values (probability,
margin, vote fraction, or leaf positive fraction); hard labels use the 0.5
probability threshold or zero margin, with PD as the positive class.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, NumericalError

MODEL_KINDS = ("logreg", "svm", "knn", "dtree")


@dataclass(frozen=True)
class ModelSpec:
    """Classifier kind plus its hyperparameter grid."""

    kind: str
    grid: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise DataError(f"unknown model kind {self.kind!r}")
        for name, values in self.grid.items():
            if not list(values):
                raise DataError(f"{self.kind}: empty grid for parameter {name!r}")

    def grid_points(self) -> list[dict]:
        """Expand the grid in declaration order, dropping duplicate points.

        For svm, gamma is irrelevant to the linear kernel and is canonicalized
        away so the same model is not trained twice.
        """
        names = list(self.grid.keys())
        points = []
        seen = set()
        for combo in itertools.product(*(list(self.grid[n]) for n in names)):
            params = dict(zip(names, combo))
            if self.kind == "svm" and params.get("kernel") == "linear":
                params.pop("gamma", None)
            key = tuple(sorted((k, repr(v)) for k, v in params.items()))
            if key in seen:
                continue
            seen.add(key)
            points.append(params)
        return points


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    sd: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "Standardizer":
        mean = x.mean(axis=0)
        sd = x.std(axis=0)
        return cls(mean, np.where(sd > 0, sd, 1.0))

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.sd


@dataclass(frozen=True)
class TrainedModel:
    kind: str
    params: dict
    scaler: Standardizer
    state: dict
    n_features: int


def train_model(kind: str, params: dict, x: np.ndarray, y: np.ndarray) -> TrainedModel:
    """Fit one classifier with fixed hyperparameters.

    Features are standardized with training statistics; the standardizer is
    stored in the model and reapplied at prediction time.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise DataError(f"bad training shapes: x {x.shape}, y {y.shape}")
    if not np.isfinite(x).all():
        raise DataError("training features contain non-finite values")
    if np.unique(y).size < 2:
        raise DataError("training labels contain a single class")
    scaler = Standardizer.fit(x)
    xs = scaler.transform(x)
    if kind == "logreg":
        state = _fit_logreg(xs, y, float(params["C"]))
    elif kind == "svm":
        state = _fit_svm(xs, y, params)
    elif kind == "knn":
        state = {"x": xs, "y": y, "k": int(params["k"])}
    elif kind == "dtree":
        state = _fit_dtree(xs, y, int(params["max_depth"]), int(params["min_leaf"]))
    else:
        raise DataError(f"unknown model kind {kind!r}")
    return TrainedModel(kind, dict(params), scaler, state, x.shape[1])


def predict_scores(model: TrainedModel, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Decision scores and hard 0/1 labels for rows of x."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise DataError(f"expected 2-d features, got shape {x.shape}")
    if x.shape[0] == 0:
        return np.empty(0), np.empty(0, dtype=np.int64)
    if x.shape[1] != model.n_features:
        raise DataError(f"feature dimension {x.shape[1]} does not match training ({model.n_features})")
    xs = model.scaler.transform(x)
    if model.kind == "logreg":
        f = xs @ model.state["w"] + model.state["b"]
        scores = _sigmoid(f)
        labels = (scores > 0.5).astype(np.int64)
    elif model.kind == "svm":
        scores = _svm_decision(model.state, xs)
        labels = (scores > 0.0).astype(np.int64)
    elif model.kind == "knn":
        scores = _knn_votes(model.state, xs)
        labels = (scores > 0.5).astype(np.int64)
    else:
        scores = _dtree_scores(model.state["tree"], xs)
        labels = (scores > 0.5).astype(np.int64)
    return scores, labels


def _sigmoid(z):
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


# --- logistic regression (L2, Newton with step-halving) ---

def logreg_objective(xs, y, w, b, lam):
    f = xs @ w + b
    margin = np.where(y > 0, f, -f)
    return float(np.mean(np.logaddexp(0.0, -margin)) + 0.5 * lam * (w @ w))


def logreg_gradient(xs, y, w, b, lam):
    p = _sigmoid(xs @ w + b)
    resid = p - y
    return xs.T @ resid / xs.shape[0] + lam * w, float(resid.mean())


def _fit_logreg(xs, y, c, tol=1e-8, max_iter=100):
    n, p = xs.shape
    lam = 1.0 / (c * n)
    yf = y.astype(np.float64)
    w = np.zeros(p)
    b = 0.0
    obj = logreg_objective(xs, yf, w, b, lam)
    for _ in range(max_iter):
        grad_w, grad_b = logreg_gradient(xs, yf, w, b, lam)
        if max(np.max(np.abs(grad_w)), abs(grad_b)) < tol:
            break
        prob = _sigmoid(xs @ w + b)
        wgt = np.maximum(prob * (1.0 - prob), 1e-10)
        xa = np.hstack([xs, np.ones((n, 1))])
        h = (xa * wgt[:, None]).T @ xa / n
        h[np.arange(p), np.arange(p)] += lam
        g = np.concatenate([grad_w, [grad_b]])
        try:
            step = np.linalg.solve(h, -g)
        except np.linalg.LinAlgError:
            raise NumericalError("singular Hessian in logistic regression") from None
        t = 1.0
        for _ in range(50):
            w_new = w + t * step[:p]
            b_new = b + t * step[p]
            obj_new = logreg_objective(xs, yf, w_new, b_new, lam)
            if obj_new <= obj + 1e-12:
                break
            t *= 0.5
        w, b, obj = w_new, b_new, obj_new
    return {"w": w, "b": b, "lam": lam}


# --- soft-margin SVM via dual coordinate ascent (bias folded into kernel) ---

def _kernel(xs_a, xs_b, kernel, gamma):
    if kernel == "linear":
        k = xs_a @ xs_b.T
    elif kernel == "rbf":
        sq = (xs_a**2).sum(axis=1)[:, None] + (xs_b**2).sum(axis=1)[None, :] - 2.0 * (xs_a @ xs_b.T)
        k = np.exp(-gamma * np.maximum(sq, 0.0))
    else:
        raise DataError(f"unknown svm kernel {kernel!r}")
    return k + 1.0  # constant feature folds the bias into the kernel


def _resolve_gamma(gamma, xs):
    if gamma == "scale":
        v = xs.var()
        return 1.0 / (xs.shape[1] * v) if v > 0 else 1.0
    return float(gamma)


def _fit_svm(xs, y, params, tol=1e-8, max_sweeps=2000):
    c = float(params["C"])
    kernel = params.get("kernel", "linear")
    gamma = _resolve_gamma(params.get("gamma", "scale"), xs) if kernel == "rbf" else None
    ys = np.where(y > 0, 1.0, -1.0)
    q = _kernel(xs, xs, kernel, gamma) * np.outer(ys, ys)
    n = xs.shape[0]
    alpha = np.zeros(n)
    g = np.zeros(n)  # g_i = (Q alpha)_i
    for _ in range(max_sweeps):
        max_step = 0.0
        for i in range(n):
            grad = g[i] - 1.0
            a_new = min(c, max(0.0, alpha[i] - grad / q[i, i]))
            step = a_new - alpha[i]
            if step != 0.0:
                g += step * q[:, i]
                alpha[i] = a_new
                max_step = max(max_step, abs(step))
        if max_step < tol:
            break
    sv = alpha > 1e-12
    return {
        "alpha_y": (alpha * ys)[sv],
        "sv_x": xs[sv],
        "kernel": kernel,
        "gamma": gamma,
        "C": c,
    }


def _svm_decision(state, xs):
    if state["sv_x"].shape[0] == 0:
        return np.zeros(xs.shape[0])
    k = _kernel(xs, state["sv_x"], state["kernel"], state["gamma"])
    return k @ state["alpha_y"]


# --- k nearest neighbors ---

def _knn_votes(state, xs):
    train = state["x"]
    k = min(state["k"], train.shape[0])
    d = np.sqrt(np.maximum(
        (xs**2).sum(axis=1)[:, None] + (train**2).sum(axis=1)[None, :] - 2.0 * xs @ train.T, 0.0
    ))
    scores = np.empty(xs.shape[0])
    idx = np.arange(train.shape[0])
    for i in range(xs.shape[0]):
        order = np.lexsort((idx, d[i]))  # distance, then lower subject index
        votes = state["y"][order[:k]]
        scores[i] = votes.mean()
    return scores


# --- decision tree (Gini, deterministic splits) ---

def _gini_pair(n_pos, n_tot):
    # Weighted Gini contribution of one side, times its size.
    if n_tot == 0:
        return 0.0
    p = n_pos / n_tot
    return n_tot * 2.0 * p * (1.0 - p)


def _best_split(x, y, min_leaf):
    n, p = x.shape
    total_pos = int(y.sum())
    best = None  # (impurity, feature, threshold)
    for j in range(p):
        order = np.argsort(x[:, j], kind="stable")
        xv = x[order, j]
        yv = y[order]
        cum_pos = np.cumsum(yv)
        for i in range(min_leaf - 1, n - min_leaf):
            if xv[i + 1] <= xv[i]:
                continue
            left_n = i + 1
            left_pos = int(cum_pos[i])
            imp = _gini_pair(left_pos, left_n) + _gini_pair(total_pos - left_pos, n - left_n)
            thr = 0.5 * (xv[i] + xv[i + 1])
            if best is None or imp < best[0] - 1e-12:
                best = (imp, j, thr)
    return best


def _fit_dtree(xs, y, max_depth, min_leaf):
    def build(rows, depth):
        yr = y[rows]
        pos_frac = float(yr.mean())
        if depth >= max_depth or rows.size < 2 * min_leaf or pos_frac in (0.0, 1.0):
            return {"leaf": pos_frac}
        found = _best_split(xs[rows], yr, min_leaf)
        if found is None:
            return {"leaf": pos_frac}
        _, j, thr = found
        go_left = xs[rows, j] <= thr
        parent_imp = _gini_pair(int(yr.sum()), rows.size)
        if found[0] >= parent_imp - 1e-12:
            return {"leaf": pos_frac}
        return {
            "feature": int(j),
            "threshold": float(thr),
            "left": build(rows[go_left], depth + 1),
            "right": build(rows[~go_left], depth + 1),
        }

    tree = build(np.arange(xs.shape[0]), 0)
    return {"tree": tree}


def _dtree_scores(tree, xs):
    scores = np.empty(xs.shape[0])
    for i, row in enumerate(xs):
        node = tree
        while "leaf" not in node:
            node = node["left"] if row[node["feature"]] <= node["threshold"] else node["right"]
        scores[i] = node["leaf"]
    return scores


# --- JSON (de)serialization for trained models ---

def model_to_dict(model: TrainedModel) -> dict:
    state = {}
    for key, val in model.state.items():
        if isinstance(val, np.ndarray):
            state[key] = {"__array__": val.tolist()}
        else:
            state[key] = val
    return {
        "kind": model.kind,
        "params": model.params,
        "scaler_mean": model.scaler.mean.tolist(),
        "scaler_sd": model.scaler.sd.tolist(),
        "state": state,
        "n_features": model.n_features,
    }


def model_from_dict(d: dict) -> TrainedModel:
    state = {}
    for key, val in d["state"].items():
        if isinstance(val, dict) and "__array__" in val:
            arr = np.array(val["__array__"], dtype=np.float64)
            if key == "y":
                arr = arr.astype(np.int64)
            state[key] = arr
        else:
            state[key] = val
    scaler = Standardizer(np.array(d["scaler_mean"]), np.array(d["scaler_sd"]))
    return TrainedModel(d["kind"], d["params"], scaler, state, int(d["n_features"]))

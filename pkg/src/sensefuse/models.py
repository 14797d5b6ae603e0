"""Candidate learners behind one uniform train/predict contract.

All fits are deterministic functions of (data, seed): tree ensembles derive
per-tree generators from (seed, tree index), so results are independent of
build order. Components serialize to a versioned JSON document that
round-trips to bit-identical predictions.
"""

import hashlib
import json
import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, ClassifierMixin
from sklearn.exceptions import NotFittedError

from .errors import (
    DegenerateInput,
    NotEnoughRows,
    SchemaMismatch,
    SingularSystem,
    UnsupportedFamily,
    VersionMismatch,
)

FORMAT_VERSION = 1

RIDGE_CV_ALPHAS = tuple(float(a) for a in np.logspace(-3, 3, 13))


def _as_xy(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2:
        raise DegenerateInput("X must be 2-D")
    if X.shape[0] != y.size:
        raise DegenerateInput("row count mismatch between X and y")
    if np.isnan(X).any() or not np.all(np.isfinite(X)):
        raise DegenerateInput("X must be complete and finite (impute first)")
    if not np.all(np.isfinite(y)):
        raise DegenerateInput("y must be finite")
    return X, y


class _Standardizer:
    """Column z-scoring with zero-variance columns left unscaled."""

    def fit(self, X):
        self.mean_ = X.mean(axis=0)
        sd = X.std(axis=0)
        self.scale_ = np.where(sd > 0, sd, 1.0)
        return self

    def transform(self, X):
        return (X - self.mean_) / self.scale_

    def state(self):
        return {"mean": self.mean_.tolist(), "scale": self.scale_.tolist()}

    @classmethod
    def from_state(cls, state):
        obj = cls()
        obj.mean_ = np.asarray(state["mean"], dtype=float)
        obj.scale_ = np.asarray(state["scale"], dtype=float)
        return obj


class _LinearModelBase(BaseEstimator, RegressorMixin):
    """Shared predict/importance for models exposing coef_ and intercept_."""

    def predict(self, X):
        if not hasattr(self, "coef_"):
            raise NotFittedError("fit first")
        X = np.asarray(X, dtype=float)
        if X.shape[1] != self.coef_.size:
            raise SchemaMismatch("column count differs from fit")
        return X @ self.coef_ + self.intercept_

    def importance_scores(self):
        raw = np.abs(self.coef_) * getattr(self, "train_std_", 1.0)
        return raw

    def state(self):
        return {"coef": self.coef_.tolist(),
                "intercept": float(self.intercept_),
                "train_std": np.asarray(self.train_std_).tolist()}

    def load_state(self, state):
        self.coef_ = np.asarray(state["coef"], dtype=float)
        self.intercept_ = float(state["intercept"])
        self.train_std_ = np.asarray(state["train_std"], dtype=float)
        return self


class LeastSquares(_LinearModelBase):
    """Plain linear regression; rejects rank-deficient design matrices."""

    def fit(self, X, y):
        X, y = _as_xy(X, y)
        n, p = X.shape
        if n < p + 1:
            raise NotEnoughRows(f"ols needs at least {p + 1} rows, got {n}")
        Xa = np.hstack([np.ones((n, 1)), X])
        if np.linalg.matrix_rank(Xa) < p + 1:
            raise SingularSystem("design matrix is rank deficient; use ridge")
        beta, *_ = np.linalg.lstsq(Xa, y, rcond=None)
        self.intercept_ = float(beta[0])
        self.coef_ = beta[1:]
        self.train_std_ = X.std(axis=0)
        return self


class Ridge(_LinearModelBase):
    """L2-penalized linear regression on standardized columns."""

    def __init__(self, alpha: float = 1.0):
        self.alpha = alpha

    def fit(self, X, y):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        X, y = _as_xy(X, y)
        n, p = X.shape
        if n < 2:
            raise NotEnoughRows("ridge needs at least 2 rows")
        scaler = _Standardizer().fit(X)
        Z = scaler.transform(X)
        y_mean = y.mean()
        yc = y - y_mean
        A = Z.T @ Z + self.alpha * np.eye(p)
        b = Z.T @ yc
        try:
            w = np.linalg.solve(A, b)
        except np.linalg.LinAlgError:
            w, *_ = np.linalg.lstsq(A, b, rcond=None)
        self.coef_ = w / scaler.scale_
        self.intercept_ = float(y_mean - self.coef_ @ scaler.mean_)
        self.train_std_ = X.std(axis=0)
        return self


class RidgeCV(_LinearModelBase):
    """Ridge with the penalty chosen by an internal 5-fold CV over a fixed
    13-point log grid; ties go to the smaller penalty."""

    def __init__(self, alphas=RIDGE_CV_ALPHAS, cv: int = 5):
        self.alphas = tuple(alphas)
        self.cv = cv

    def fit(self, X, y):
        X, y = _as_xy(X, y)
        n = X.shape[0]
        k = min(self.cv, n)
        if k < 2:
            raise NotEnoughRows("ridge_cv needs at least 2 rows")
        fold_of = np.arange(n) % k
        errors = np.zeros(len(self.alphas))
        for f in range(k):
            tr, te = fold_of != f, fold_of == f
            for a_idx, alpha in enumerate(self.alphas):
                model = Ridge(alpha=alpha).fit(X[tr], y[tr])
                resid = model.predict(X[te]) - y[te]
                errors[a_idx] += float(resid @ resid)
        best = int(np.argmin(errors))  # ties -> first, i.e. smaller alpha
        self.alpha_ = self.alphas[best]
        inner = Ridge(alpha=self.alpha_).fit(X, y)
        self.coef_ = inner.coef_
        self.intercept_ = inner.intercept_
        self.train_std_ = inner.train_std_
        return self

    def state(self):
        s = super().state()
        s["alpha"] = self.alpha_
        return s

    def load_state(self, state):
        super().load_state(state)
        self.alpha_ = float(state["alpha"])
        return self


class Lasso(_LinearModelBase):
    """L1-penalized regression via cyclic coordinate descent on standardized
    columns (objective (1/2n)||y - Xw||^2 + alpha ||w||_1)."""

    def __init__(self, alpha: float = 0.1, tol: float = 1e-7,
                 max_sweeps: int = 10000):
        self.alpha = alpha
        self.tol = tol
        self.max_sweeps = max_sweeps

    def fit(self, X, y):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        X, y = _as_xy(X, y)
        n, p = X.shape
        if n < 2:
            raise NotEnoughRows("lasso needs at least 2 rows")
        scaler = _Standardizer().fit(X)
        Z = scaler.transform(X)
        y_mean = y.mean()
        yc = y - y_mean
        # covariance-update form: each coordinate step is O(p), not O(n)
        gram = (Z.T @ Z) / n
        corr = (Z.T @ yc) / n
        norms = np.diag(gram).copy()  # 1 for non-constant cols, 0 otherwise
        w = np.zeros(p)

        def sweep(coords):
            max_delta = 0.0
            for j in coords:
                if norms[j] == 0.0:
                    continue
                old = w[j]
                rho = corr[j] - gram[j] @ w + norms[j] * old
                new = np.sign(rho) * max(abs(rho) - self.alpha, 0.0) / norms[j]
                if new != old:
                    w[j] = new
                    max_delta = max(max_delta, abs(new - old))
            return max_delta

        # full cyclic sweeps with active-set refinement in between
        everything = range(p)
        sweeps = 0
        while sweeps < self.max_sweeps:
            sweeps += 1
            if sweep(everything) < self.tol:
                break
            active = np.flatnonzero(w).tolist()
            while active and sweeps < self.max_sweeps:
                sweeps += 1
                if sweep(active) < self.tol:
                    break
        self.coef_ = w / scaler.scale_
        self.intercept_ = float(y_mean - self.coef_ @ scaler.mean_)
        self.train_std_ = X.std(axis=0)
        self.n_sweeps_ = sweeps
        return self


class BayesianRidge(_LinearModelBase):
    """Evidence-maximization linear model with Gamma(1e-6, 1e-6) hyperpriors
    on both precisions, capped at 300 refinement iterations."""

    def __init__(self, max_iter: int = 300, a0: float = 1e-6, b0: float = 1e-6):
        self.max_iter = max_iter
        self.a0 = a0
        self.b0 = b0

    def fit(self, X, y):
        X, y = _as_xy(X, y)
        n, p = X.shape
        if n < 2:
            raise NotEnoughRows("bayesian_ridge needs at least 2 rows")
        scaler = _Standardizer().fit(X)
        Z = scaler.transform(X)
        y_mean = y.mean()
        yc = y - y_mean
        var_y = yc.var()
        noise = 1.0 / var_y if var_y > 0 else 1.0
        lam = 1.0
        U, s, Vt = np.linalg.svd(Z, full_matrices=False)
        d = s**2
        UTy = U.T @ yc
        yty = float(yc @ yc)
        for _ in range(self.max_iter):
            shrink = noise * d + lam
            mu_eig = noise * s * UTy / shrink
            gamma = float(np.sum(noise * d / shrink))
            mu_sq = float(mu_eig @ mu_eig)
            # in the eigenbasis the fitted values are (noise*d/shrink) * UTy
            fit_eig = (noise * d / shrink) * UTy
            resid_sq = yty - 2 * float(fit_eig @ UTy) + float(fit_eig @ fit_eig)
            resid_sq = max(resid_sq, 0.0)
            lam_new = (gamma + 2 * self.a0) / (mu_sq + 2 * self.b0)
            noise_new = (n - gamma + 2 * self.a0) / (resid_sq + 2 * self.b0)
            converged = (abs(np.log(lam_new) - np.log(lam))
                         + abs(np.log(noise_new) - np.log(noise))) < 1e-8
            lam, noise = lam_new, noise_new
            if converged:
                break
        shrink = noise * d + lam
        mu_eig = noise * s * UTy / shrink
        w = Vt.T @ mu_eig
        self.coef_ = w / scaler.scale_
        self.intercept_ = float(y_mean - self.coef_ @ scaler.mean_)
        self.train_std_ = X.std(axis=0)
        self.lambda_ = lam
        self.noise_precision_ = noise
        return self


def _kernel(name: str, A: np.ndarray, B: np.ndarray, gamma: float,
            degree: int, coef0: float) -> np.ndarray:
    if name == "linear":
        return A @ B.T
    if name == "poly":
        return (gamma * (A @ B.T) + coef0) ** degree
    # rbf
    sq = (A**2).sum(axis=1)[:, None] + (B**2).sum(axis=1)[None, :] - 2 * A @ B.T
    return np.exp(-gamma * np.maximum(sq, 0.0))


class KernelRidge(BaseEstimator, RegressorMixin):
    """Kernel ridge regression standing in for the epsilon-insensitive
    variants; kernels: linear, rbf, poly."""

    def __init__(self, kernel: str = "rbf", alpha: float = 1.0,
                 gamma: float | None = None, degree: int = 3,
                 coef0: float = 1.0):
        self.kernel = kernel
        self.alpha = alpha
        self.gamma = gamma
        self.degree = degree
        self.coef0 = coef0

    def fit(self, X, y):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.kernel not in ("linear", "rbf", "poly"):
            raise ValueError(f"unknown kernel {self.kernel!r}")
        X, y = _as_xy(X, y)
        if X.shape[0] < 2:
            raise NotEnoughRows("kernel ridge needs at least 2 rows")
        self.scaler_ = _Standardizer().fit(X)
        Z = self.scaler_.transform(X)
        self.gamma_ = self.gamma if self.gamma is not None else 1.0 / X.shape[1]
        self.y_mean_ = float(y.mean())
        K = _kernel(self.kernel, Z, Z, self.gamma_, self.degree, self.coef0)
        A = K + self.alpha * np.eye(Z.shape[0])
        try:
            self.dual_coef_ = np.linalg.solve(A, y - self.y_mean_)
        except np.linalg.LinAlgError:
            self.dual_coef_, *_ = np.linalg.lstsq(A, y - self.y_mean_, rcond=None)
        self.support_ = Z
        return self

    def predict(self, X):
        if not hasattr(self, "dual_coef_"):
            raise NotFittedError("fit first")
        X = np.asarray(X, dtype=float)
        if X.shape[1] != self.support_.shape[1]:
            raise SchemaMismatch("column count differs from fit")
        Z = self.scaler_.transform(X)
        K = _kernel(self.kernel, Z, self.support_, self.gamma_, self.degree,
                    self.coef0)
        return K @ self.dual_coef_ + self.y_mean_

    def state(self):
        return {"scaler": self.scaler_.state(), "gamma": self.gamma_,
                "y_mean": self.y_mean_, "dual": self.dual_coef_.tolist(),
                "support": self.support_.tolist()}

    def load_state(self, state):
        self.scaler_ = _Standardizer.from_state(state["scaler"])
        self.gamma_ = float(state["gamma"])
        self.y_mean_ = float(state["y_mean"])
        self.dual_coef_ = np.asarray(state["dual"], dtype=float)
        self.support_ = np.asarray(state["support"], dtype=float)
        return self


# ---------------------------------------------------------------------------
# Trees and forests
# ---------------------------------------------------------------------------


def _best_split_sse(x: np.ndarray, y: np.ndarray, min_leaf: int):
    """(gain, threshold) for the variance-reduction split of one feature,
    or None. Ties resolve to the smallest threshold."""
    n = y.size
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    cum = np.cumsum(ys)
    cum2 = np.cumsum(ys**2)
    total, total2 = cum[-1], cum2[-1]
    split_at = np.arange(min_leaf, n - min_leaf + 1)
    if split_at.size == 0:
        return None
    valid = xs[split_at - 1] < xs[split_at]
    if not valid.any():
        return None
    split_at = split_at[valid]
    nl = split_at.astype(float)
    sl, sl2 = cum[split_at - 1], cum2[split_at - 1]
    sse_l = sl2 - sl**2 / nl
    nr = n - nl
    sr, sr2 = total - sl, total2 - sl2
    sse_r = sr2 - sr**2 / nr
    parent = total2 - total**2 / n
    gains = parent - (sse_l + sse_r)
    best = int(np.argmax(gains))  # first max -> smallest threshold
    s = split_at[best]
    return float(gains[best]), float((xs[s - 1] + xs[s]) / 2.0)


def _best_split_gini(x: np.ndarray, y_idx: np.ndarray, n_classes: int,
                     min_leaf: int):
    n = y_idx.size
    order = np.argsort(x, kind="stable")
    xs = x[order]
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), y_idx[order]] = 1.0
    cum = np.cumsum(onehot, axis=0)
    total = cum[-1]
    split_at = np.arange(min_leaf, n - min_leaf + 1)
    if split_at.size == 0:
        return None
    valid = xs[split_at - 1] < xs[split_at]
    if not valid.any():
        return None
    split_at = split_at[valid]
    nl = split_at.astype(float)[:, None]
    cl = cum[split_at - 1]
    cr = total[None, :] - cl
    nr = (n - nl)
    gini_l = 1.0 - ((cl / nl) ** 2).sum(axis=1)
    gini_r = 1.0 - ((cr / nr) ** 2).sum(axis=1)
    parent = 1.0 - ((total / n) ** 2).sum()
    gains = parent - (nl.ravel() * gini_l + nr.ravel() * gini_r) / n
    best = int(np.argmax(gains))
    s = split_at[best]
    return float(gains[best]), float((xs[s - 1] + xs[s]) / 2.0)


class _TreeNode:
    __slots__ = ("feature", "threshold", "left", "right", "value")

    def __init__(self, value=None):
        self.feature = None
        self.threshold = None
        self.left = None
        self.right = None
        self.value = value

    def to_dict(self):
        if self.feature is None:
            return {"value": self.value}
        return {"feature": self.feature, "threshold": self.threshold,
                "left": self.left.to_dict(), "right": self.right.to_dict()}

    @classmethod
    def from_dict(cls, d):
        node = cls()
        if "value" in d:
            node.value = d["value"]
            return node
        node.feature = int(d["feature"])
        node.threshold = float(d["threshold"])
        node.left = cls.from_dict(d["left"])
        node.right = cls.from_dict(d["right"])
        return node


class _TreeBuilder:
    """Deterministic recursive builder; candidate features are scanned in
    ascending index order so equal gains break toward the lowest index."""

    def __init__(self, task: str, min_leaf: int, max_depth, max_features,
                 rng, n_classes: int = 0):
        self.task = task
        self.min_leaf = min_leaf
        self.max_depth = max_depth
        self.max_features = max_features
        self.rng = rng
        self.n_classes = n_classes
        self.importance = None

    def _leaf(self, y):
        if self.task == "regression":
            return _TreeNode(value=float(y.mean()))
        counts = np.bincount(y, minlength=self.n_classes)
        return _TreeNode(value=int(np.argmax(counts)))  # ties -> smallest

    def _candidates(self, p: int) -> np.ndarray:
        if self.max_features is None or self.max_features >= p:
            return np.arange(p)
        picked = self.rng.choice(p, size=self.max_features, replace=False)
        return np.sort(picked)

    def build(self, X, y, depth=0):
        n, p = X.shape
        if self.importance is None:
            self.importance = np.zeros(p)
        pure = (np.all(y == y[0]) if self.task == "classification"
                else float(np.ptp(y)) == 0.0)
        if n < 2 * self.min_leaf or pure or \
                (self.max_depth is not None and depth >= self.max_depth):
            return self._leaf(y)
        best = None
        for j in self._candidates(p):
            col = X[:, j]
            if self.task == "regression":
                res = _best_split_sse(col, y, self.min_leaf)
            else:
                res = _best_split_gini(col, y, self.n_classes, self.min_leaf)
            if res is None:
                continue
            gain, threshold = res
            if best is None or gain > best[0]:
                best = (gain, int(j), threshold)
        if best is None or best[0] <= 0.0:
            return self._leaf(y)
        gain, j, threshold = best
        self.importance[j] += gain
        node = _TreeNode()
        node.feature = j
        node.threshold = threshold
        mask = X[:, j] <= threshold
        node.left = self.build(X[mask], y[mask], depth + 1)
        node.right = self.build(X[~mask], y[~mask], depth + 1)
        return node


def _tree_predict(root: _TreeNode, X: np.ndarray) -> np.ndarray:
    out = np.empty(X.shape[0])
    for i, row in enumerate(X):
        node = root
        while node.feature is not None:
            node = node.left if row[node.feature] <= node.threshold else node.right
        out[i] = node.value
    return out


class Cart(BaseEstimator, RegressorMixin):
    """Variance-reduction regression tree."""

    def __init__(self, min_leaf: int = 5, max_depth: int | None = None):
        self.min_leaf = min_leaf
        self.max_depth = max_depth

    def fit(self, X, y):
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")
        X, y = _as_xy(X, y)
        if X.shape[0] < 1:
            raise NotEnoughRows("cart needs at least 1 row")
        builder = _TreeBuilder("regression", self.min_leaf, self.max_depth,
                               None, None)
        self.root_ = builder.build(X, y)
        self.importance_ = builder.importance
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        if not hasattr(self, "root_"):
            raise NotFittedError("fit first")
        X = np.asarray(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise SchemaMismatch("column count differs from fit")
        return _tree_predict(self.root_, X)

    def importance_scores(self):
        return self.importance_.copy()

    def state(self):
        return {"tree": self.root_.to_dict(), "p": self.n_features_in_,
                "importance": self.importance_.tolist()}

    def load_state(self, state):
        self.root_ = _TreeNode.from_dict(state["tree"])
        self.n_features_in_ = int(state["p"])
        self.importance_ = np.asarray(state["importance"], dtype=float)
        return self


class RandomForest(BaseEstimator, RegressorMixin):
    """Bagged variance-reduction trees with sqrt(p) feature subsampling.

    bootstrap=False with full features reduces exactly to a single Cart.
    """

    def __init__(self, n_trees: int = 100, min_leaf: int = 5,
                 max_depth: int | None = None, bootstrap: bool = True,
                 max_features: str | int | None = "sqrt", seed: int = 0):
        self.n_trees = n_trees
        self.min_leaf = min_leaf
        self.max_depth = max_depth
        self.bootstrap = bootstrap
        self.max_features = max_features
        self.seed = seed

    def _resolve_features(self, p: int):
        if self.max_features is None:
            return None
        if self.max_features == "sqrt":
            return max(1, int(np.sqrt(p)))
        return min(int(self.max_features), p)

    def fit(self, X, y):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        X, y = _as_xy(X, y)
        n, p = X.shape
        mf = self._resolve_features(p)
        self.roots_ = []
        self.importance_ = np.zeros(p)
        for t in range(self.n_trees):
            rng = np.random.default_rng(np.random.SeedSequence((self.seed, t)))
            if self.bootstrap:
                idx = rng.integers(0, n, size=n)
                Xt, yt = X[idx], y[idx]
            else:
                Xt, yt = X, y
            node_rng = rng if (mf is not None and mf < p) else None
            builder = _TreeBuilder("regression", self.min_leaf, self.max_depth,
                                   mf if node_rng is not None else None,
                                   node_rng)
            self.roots_.append(builder.build(Xt, yt))
            self.importance_ += builder.importance
        self.n_features_in_ = p
        return self

    def predict(self, X):
        if not hasattr(self, "roots_"):
            raise NotFittedError("fit first")
        X = np.asarray(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise SchemaMismatch("column count differs from fit")
        preds = np.zeros(X.shape[0])
        for root in self.roots_:
            preds += _tree_predict(root, X)
        return preds / len(self.roots_)

    def importance_scores(self):
        return self.importance_.copy()

    def state(self):
        return {"trees": [r.to_dict() for r in self.roots_],
                "p": self.n_features_in_,
                "importance": self.importance_.tolist()}

    def load_state(self, state):
        self.roots_ = [_TreeNode.from_dict(d) for d in state["trees"]]
        self.n_features_in_ = int(state["p"])
        self.importance_ = np.asarray(state["importance"], dtype=float)
        return self


# ---------------------------------------------------------------------------
# Classifiers
# ---------------------------------------------------------------------------


class _ClassifierBase(BaseEstimator, ClassifierMixin):
    def _encode(self, y):
        self.classes_ = np.unique(y)
        index = {v: i for i, v in enumerate(self.classes_)}
        return np.array([index[v] for v in y], dtype=int)


class KnnClassifier(_ClassifierBase):
    """Majority vote among the k nearest training rows (z-scored Euclidean);
    ties resolve to the smallest class value."""

    def __init__(self, k: int = 5):
        self.k = k

    def fit(self, X, y):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        X, y = _as_xy(X, y)
        if X.shape[0] < self.k:
            raise NotEnoughRows(f"knn needs at least k={self.k} rows")
        self.scaler_ = _Standardizer().fit(X)
        self.train_ = self.scaler_.transform(X)
        self.y_idx_ = self._encode(y)
        return self

    def predict(self, X):
        if not hasattr(self, "train_"):
            raise NotFittedError("fit first")
        X = np.asarray(X, dtype=float)
        if X.shape[1] != self.train_.shape[1]:
            raise SchemaMismatch("column count differs from fit")
        Z = self.scaler_.transform(X)
        out = np.empty(X.shape[0])
        for i, row in enumerate(Z):
            d = ((self.train_ - row) ** 2).sum(axis=1)
            nearest = np.argsort(d, kind="stable")[:self.k]
            counts = np.bincount(self.y_idx_[nearest],
                                 minlength=self.classes_.size)
            out[i] = self.classes_[int(np.argmax(counts))]
        return out

    def state(self):
        return {"scaler": self.scaler_.state(), "train": self.train_.tolist(),
                "y_idx": self.y_idx_.tolist(), "classes": self.classes_.tolist(),
                "k": self.k}

    def load_state(self, state):
        self.scaler_ = _Standardizer.from_state(state["scaler"])
        self.train_ = np.asarray(state["train"], dtype=float)
        self.y_idx_ = np.asarray(state["y_idx"], dtype=int)
        self.classes_ = np.asarray(state["classes"], dtype=float)
        self.k = int(state["k"])
        return self


class MarginClassifier(_ClassifierBase):
    """One-vs-rest regularized least-squares margin machine with a linear or
    RBF kernel; prediction is the class with the largest margin."""

    def __init__(self, kernel: str = "linear", alpha: float = 1.0,
                 gamma: float | None = None):
        self.kernel = kernel
        self.alpha = alpha
        self.gamma = gamma

    def fit(self, X, y):
        X, y = _as_xy(X, y)
        if X.shape[0] < 2:
            raise NotEnoughRows("margin classifier needs at least 2 rows")
        y_idx = self._encode(y)
        self.scaler_ = _Standardizer().fit(X)
        Z = self.scaler_.transform(X)
        self.gamma_ = self.gamma if self.gamma is not None else 1.0 / X.shape[1]
        K = _kernel(self.kernel, Z, Z, self.gamma_, 3, 1.0)
        A = K + self.alpha * np.eye(Z.shape[0])
        targets = np.where(y_idx[:, None] == np.arange(self.classes_.size)[None, :],
                           1.0, -1.0)
        try:
            self.dual_coef_ = np.linalg.solve(A, targets)
        except np.linalg.LinAlgError:
            self.dual_coef_, *_ = np.linalg.lstsq(A, targets, rcond=None)
        self.support_ = Z
        return self

    def decision_function(self, X):
        Z = self.scaler_.transform(np.asarray(X, dtype=float))
        K = _kernel(self.kernel, Z, self.support_, self.gamma_, 3, 1.0)
        return K @ self.dual_coef_

    def predict(self, X):
        if not hasattr(self, "dual_coef_"):
            raise NotFittedError("fit first")
        X = np.asarray(X, dtype=float)
        if X.shape[1] != self.support_.shape[1]:
            raise SchemaMismatch("column count differs from fit")
        margins = self.decision_function(X)
        return self.classes_[np.argmax(margins, axis=1)]

    def state(self):
        return {"scaler": self.scaler_.state(), "gamma": self.gamma_,
                "dual": self.dual_coef_.tolist(),
                "support": self.support_.tolist(),
                "classes": self.classes_.tolist(), "kernel": self.kernel}

    def load_state(self, state):
        self.scaler_ = _Standardizer.from_state(state["scaler"])
        self.gamma_ = float(state["gamma"])
        self.dual_coef_ = np.asarray(state["dual"], dtype=float)
        self.support_ = np.asarray(state["support"], dtype=float)
        self.classes_ = np.asarray(state["classes"], dtype=float)
        self.kernel = state["kernel"]
        return self


class CartClassifier(_ClassifierBase):
    def __init__(self, min_leaf: int = 5, max_depth: int | None = None):
        self.min_leaf = min_leaf
        self.max_depth = max_depth

    def fit(self, X, y):
        X, y = _as_xy(X, y)
        y_idx = self._encode(y)
        builder = _TreeBuilder("classification", self.min_leaf, self.max_depth,
                               None, None, n_classes=self.classes_.size)
        self.root_ = builder.build(X, y_idx)
        self.importance_ = builder.importance
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        if not hasattr(self, "root_"):
            raise NotFittedError("fit first")
        X = np.asarray(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise SchemaMismatch("column count differs from fit")
        idx = _tree_predict(self.root_, X).astype(int)
        return self.classes_[idx]

    def importance_scores(self):
        return self.importance_.copy()

    def state(self):
        return {"tree": self.root_.to_dict(), "p": self.n_features_in_,
                "classes": self.classes_.tolist(),
                "importance": self.importance_.tolist()}

    def load_state(self, state):
        self.root_ = _TreeNode.from_dict(state["tree"])
        self.n_features_in_ = int(state["p"])
        self.classes_ = np.asarray(state["classes"], dtype=float)
        self.importance_ = np.asarray(state["importance"], dtype=float)
        return self


class ForestClassifier(_ClassifierBase):
    def __init__(self, n_trees: int = 100, min_leaf: int = 5,
                 max_depth: int | None = None, bootstrap: bool = True,
                 max_features: str | int | None = "sqrt", seed: int = 0):
        self.n_trees = n_trees
        self.min_leaf = min_leaf
        self.max_depth = max_depth
        self.bootstrap = bootstrap
        self.max_features = max_features
        self.seed = seed

    def fit(self, X, y):
        X, y = _as_xy(X, y)
        y_idx = self._encode(y)
        n, p = X.shape
        mf = RandomForest._resolve_features(self, p)
        self.roots_ = []
        self.importance_ = np.zeros(p)
        for t in range(self.n_trees):
            rng = np.random.default_rng(np.random.SeedSequence((self.seed, t)))
            if self.bootstrap:
                idx = rng.integers(0, n, size=n)
                Xt, yt = X[idx], y_idx[idx]
            else:
                Xt, yt = X, y_idx
            node_rng = rng if (mf is not None and mf < p) else None
            builder = _TreeBuilder("classification", self.min_leaf,
                                   self.max_depth,
                                   mf if node_rng is not None else None,
                                   node_rng, n_classes=self.classes_.size)
            self.roots_.append(builder.build(Xt, yt))
            self.importance_ += builder.importance
        self.n_features_in_ = p
        return self

    def predict(self, X):
        if not hasattr(self, "roots_"):
            raise NotFittedError("fit first")
        X = np.asarray(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise SchemaMismatch("column count differs from fit")
        votes = np.zeros((X.shape[0], self.classes_.size))
        for root in self.roots_:
            idx = _tree_predict(root, X).astype(int)
            votes[np.arange(X.shape[0]), idx] += 1
        return self.classes_[np.argmax(votes, axis=1)]

    def importance_scores(self):
        return self.importance_.copy()

    def state(self):
        return {"trees": [r.to_dict() for r in self.roots_],
                "p": self.n_features_in_, "classes": self.classes_.tolist(),
                "importance": self.importance_.tolist()}

    def load_state(self, state):
        self.roots_ = [_TreeNode.from_dict(d) for d in state["trees"]]
        self.n_features_in_ = int(state["p"])
        self.classes_ = np.asarray(state["classes"], dtype=float)
        self.importance_ = np.asarray(state["importance"], dtype=float)
        return self


# ---------------------------------------------------------------------------
# Uniform contract
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CandidateSpec:
    family: str
    params: tuple = ()  # sorted (name, value) pairs

    @classmethod
    def make(cls, family: str, params: dict | None = None) -> "CandidateSpec":
        return cls(family=family, params=tuple(sorted((params or {}).items())))

    @property
    def param_dict(self) -> dict:
        return dict(self.params)

    def label(self) -> str:
        if not self.params:
            return self.family
        inner = ",".join(f"{k}={v}" for k, v in self.params)
        return f"{self.family}({inner})"


_REGRESSION_FAMILIES = {
    "ols": lambda p, seed: LeastSquares(),
    "ridge": lambda p, seed: Ridge(**p),
    "ridge_cv": lambda p, seed: RidgeCV(**p),
    "lasso": lambda p, seed: Lasso(**p),
    "bayesian_ridge": lambda p, seed: BayesianRidge(**p),
    "kernel_svr_linear": lambda p, seed: KernelRidge(kernel="linear", **p),
    "kernel_svr_rbf": lambda p, seed: KernelRidge(kernel="rbf", **p),
    "kernel_svr_poly": lambda p, seed: KernelRidge(kernel="poly", **p),
    "cart": lambda p, seed: Cart(**p),
    "random_forest": lambda p, seed: RandomForest(seed=seed, **p),
}

_CLASSIFICATION_FAMILIES = {
    "knn_class": lambda p, seed: KnnClassifier(**p),
    "linear_svm_class": lambda p, seed: MarginClassifier(kernel="linear", **p),
    "rbf_svm_class": lambda p, seed: MarginClassifier(kernel="rbf", **p),
    "cart_class": lambda p, seed: CartClassifier(**p),
    "rf_class": lambda p, seed: ForestClassifier(seed=seed, **p),
}

ALL_FAMILIES = {**_REGRESSION_FAMILIES, **_CLASSIFICATION_FAMILIES}

_LINEAR_FAMILIES = ("ols", "ridge", "ridge_cv", "lasso", "bayesian_ridge")
_TREE_FAMILIES = ("cart", "random_forest", "cart_class", "rf_class")


def family_kind(family: str) -> str:
    if family in _REGRESSION_FAMILIES:
        return "regression"
    if family in _CLASSIFICATION_FAMILIES:
        return "classification"
    raise UnsupportedFamily(family, "model family")


def make_estimator(spec: CandidateSpec, seed: int = 0):
    family_kind(spec.family)
    return ALL_FAMILIES[spec.family](spec.param_dict, seed)


@dataclass
class TrainedComponent:
    """A fitted candidate bound to its feature schema and training data
    fingerprint; predict rejects schema mismatches."""

    spec: CandidateSpec
    estimator: object
    schema: list
    fingerprint: str

    def predict(self, X, names: list | None = None) -> np.ndarray:
        if names is not None and list(names) != list(self.schema):
            raise SchemaMismatch("feature schema differs from training")
        X = np.asarray(X, dtype=float)
        if X.shape[1] != len(self.schema):
            raise SchemaMismatch(
                f"expected {len(self.schema)} columns, got {X.shape[1]}")
        preds = np.asarray(self.estimator.predict(X), dtype=float)
        if not np.all(np.isfinite(preds)):
            raise DegenerateInput("non-finite prediction")
        return preds


def _fingerprint(X: np.ndarray, y: np.ndarray, seed: int) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(X).tobytes())
    h.update(np.ascontiguousarray(y).tobytes())
    h.update(str(seed).encode())
    return h.hexdigest()[:16]


def fit(spec: CandidateSpec, X, y, names: list | None = None,
        seed: int = 0) -> TrainedComponent:
    """Deterministic fit of one candidate; same seed and data give identical
    parameters."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if names is None:
        names = [f"x{j}" for j in range(X.shape[1])]
    estimator = make_estimator(spec, seed)
    estimator.fit(X, y)
    return TrainedComponent(spec=spec, estimator=estimator, schema=list(names),
                            fingerprint=_fingerprint(X, y, seed))


def predict(component: TrainedComponent, X, names: list | None = None):
    return component.predict(X, names)


def feature_importance(component: TrainedComponent) -> dict:
    """Normalized non-negative scores per feature name.

    Linear families score |coef| * column std; tree families use accumulated
    impurity decrease. Other families raise UnsupportedFamily.
    """
    family = component.spec.family
    if family in _LINEAR_FAMILIES or family in _TREE_FAMILIES:
        raw = component.estimator.importance_scores()
    else:
        raise UnsupportedFamily(family, "feature_importance")
    total = float(raw.sum())
    if total <= 0:
        warnings.warn("all importance scores are zero", stacklevel=2)
        return {}
    return {name: float(v) / total
            for name, v in zip(component.schema, raw)}


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def component_to_dict(component: TrainedComponent) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "family": component.spec.family,
        "params": [[k, v] for k, v in component.spec.params],
        "schema": list(component.schema),
        "fingerprint": component.fingerprint,
        "state": component.estimator.state(),
    }


def component_from_dict(doc: dict) -> TrainedComponent:
    if doc.get("format_version") != FORMAT_VERSION:
        raise VersionMismatch(
            f"component format {doc.get('format_version')} != {FORMAT_VERSION}")
    spec = CandidateSpec(family=doc["family"],
                         params=tuple((k, v) for k, v in doc["params"]))
    estimator = make_estimator(spec, seed=0)
    estimator.load_state(doc["state"])
    return TrainedComponent(spec=spec, estimator=estimator,
                            schema=list(doc["schema"]),
                            fingerprint=doc["fingerprint"])


def save_component(component: TrainedComponent, path: str):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(component_to_dict(component), fh, separators=(",", ":"))
        fh.write("\n")


def load_component(path: str) -> TrainedComponent:
    with open(path, "r", encoding="utf-8") as fh:
        return component_from_dict(json.load(fh))

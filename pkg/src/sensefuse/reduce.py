"""Dimensionality reduction and correlation-based feature selection.

Both estimators are always fitted on training rows only; the leakage tests
in the suite assert that fitted state is bit-identical under arbitrary
perturbation of held-out rows.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as _sstats
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .errors import DegenerateInput, NoUsableFeatures, SchemaMismatch


class PrincipalComponents(BaseEstimator, TransformerMixin):
    """Centered SVD principal components with a deterministic sign convention
    (the largest-magnitude loading of each component is positive).

    n_components must be <= min(n_rows - 1, n_cols); callers clamp first.
    """

    def __init__(self, n_components: int = 2):
        self.n_components = n_components

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2:
            raise DegenerateInput("expected a 2-D matrix")
        n, p = X.shape
        if np.isnan(X).any():
            raise DegenerateInput("matrix contains missing cells; impute first")
        if self.n_components > min(n - 1, p):
            raise ValueError(
                f"n_components={self.n_components} exceeds min(rows-1, cols)="
                f"{min(n - 1, p)}")
        self.mean_ = X.mean(axis=0)
        centered = X - self.mean_
        if not np.any(centered != 0.0):
            raise DegenerateInput("centering leaves a rank-0 matrix")
        _, s, vt = np.linalg.svd(centered, full_matrices=False)
        k = self.n_components
        comps = vt[:k].copy()
        for i in range(k):
            j = np.argmax(np.abs(comps[i]))
            if comps[i, j] < 0:
                comps[i] = -comps[i]
        self.components_ = comps
        var = s**2 / max(n - 1, 1)
        self.explained_variance_ = var[:k].copy()
        total = var.sum()
        self.explained_variance_ratio_ = (var[:k] / total if total > 0
                                          else np.zeros(k))
        self.n_features_in_ = p
        return self

    def _check_fitted(self):
        if not hasattr(self, "components_"):
            raise NotFittedError("fit before transform")

    def transform(self, X) -> np.ndarray:
        self._check_fitted()
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features_in_:
            raise SchemaMismatch(
                f"expected {self.n_features_in_} columns, got "
                f"{X.shape[1] if X.ndim == 2 else 'non-matrix'}")
        return (X - self.mean_) @ self.components_.T

    def inverse_transform(self, Z) -> np.ndarray:
        self._check_fitted()
        Z = np.asarray(Z, dtype=float)
        return Z @ self.components_ + self.mean_

    def state(self) -> dict:
        self._check_fitted()
        return {
            "n_components": self.n_components,
            "mean": self.mean_.tolist(),
            "components": self.components_.tolist(),
            "explained_variance": self.explained_variance_.tolist(),
            "explained_variance_ratio": self.explained_variance_ratio_.tolist(),
        }

    @classmethod
    def from_state(cls, state: dict) -> "PrincipalComponents":
        obj = cls(n_components=int(state["n_components"]))
        obj.mean_ = np.asarray(state["mean"], dtype=float)
        obj.components_ = np.asarray(state["components"], dtype=float)
        obj.explained_variance_ = np.asarray(state["explained_variance"], dtype=float)
        obj.explained_variance_ratio_ = np.asarray(
            state["explained_variance_ratio"], dtype=float)
        obj.n_features_in_ = obj.mean_.size
        return obj


def fit_pca_padded(X, n_components: int) -> tuple[PrincipalComponents, int]:
    """PCA clamped to the informative rank, for callers that requested more
    components than the data supports; the shortfall is reported so they can
    pad with zero-variance columns."""
    X = np.asarray(X, dtype=float)
    limit = min(X.shape[0] - 1, X.shape[1])
    k = min(n_components, limit)
    if k < 1:
        raise DegenerateInput("not enough rows/columns for even one component")
    model = PrincipalComponents(n_components=k).fit(X)
    ev = model.explained_variance_
    informative = int(np.sum(ev > 1e-12 * max(ev[0], 1e-300)))
    if informative < k:
        model.components_ = model.components_[:informative]
        model.explained_variance_ = ev[:informative]
        model.explained_variance_ratio_ = \
            model.explained_variance_ratio_[:informative]
        model.n_components = informative
    pad = n_components - model.n_components
    if pad > 0:
        warnings.warn(
            f"requested {n_components} components but only "
            f"{model.n_components} are informative; padding {pad} with zero "
            f"variance",
            category=UserWarning, stacklevel=2)
    return model, pad


# ---------------------------------------------------------------------------
# Correlation-based top-k selection
# ---------------------------------------------------------------------------


@dataclass
class SelectionMask:
    """Ordered feature subset with the correlation scores that ranked it."""

    entries: list = field(default_factory=list)  # (name, signed score)
    method: str = "spearman"

    @property
    def names(self) -> list[str]:
        return [name for name, _ in self.entries]

    def __len__(self):
        return len(self.entries)


def _column_correlations(X: np.ndarray, y: np.ndarray, method: str,
                         min_pairs: int = 3) -> np.ndarray:
    """Signed correlation per column on complete (feature, target) pairs;
    NaN where fewer than min_pairs pairs or zero variance."""
    n, p = X.shape
    out = np.full(p, np.nan)
    y_ok = np.isfinite(y)
    complete = not np.isnan(X).any()
    if complete:
        mask = y_ok
        if mask.sum() >= min_pairs:
            Xv = X[mask]
            yv = y[mask]
            if method == "spearman":
                Xv = np.apply_along_axis(_sstats.rankdata, 0, Xv)
                yv = _sstats.rankdata(yv)
            xm = Xv - Xv.mean(axis=0)
            ym = yv - yv.mean()
            sx = np.sqrt((xm**2).sum(axis=0))
            sy = np.sqrt((ym**2).sum())
            ok = (sx > 0) & (sy > 0)
            out[ok] = (xm[:, ok] * ym[:, None]).sum(axis=0) / (sx[ok] * sy)
        return out
    for j in range(p):
        mask = y_ok & np.isfinite(X[:, j])
        if mask.sum() < min_pairs:
            continue
        xv, yv = X[mask, j], y[mask]
        if method == "spearman":
            xv = _sstats.rankdata(xv)
            yv = _sstats.rankdata(yv)
        if xv.std() == 0 or yv.std() == 0:
            continue
        out[j] = float(np.corrcoef(xv, yv)[0, 1])
    return out


def select_top_k(X, y, names: list[str], k: int,
                 method: str = "spearman") -> SelectionMask:
    """Rank features by |correlation| with the target on the given rows.

    Ties break lexicographically by feature name; features with fewer than 3
    complete pairs (or no variance) are excluded. Raises NoUsableFeatures
    when nothing survives.
    """
    if method not in ("pearson", "spearman"):
        raise ValueError(f"unknown method {method!r}")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2 or X.shape[0] != y.size or X.shape[1] != len(names):
        raise SchemaMismatch("X, y, and names are inconsistent")
    scores = _column_correlations(X, y, method)
    usable = [(names[j], float(scores[j])) for j in range(len(names))
              if np.isfinite(scores[j])]
    if not usable:
        raise NoUsableFeatures("no feature has 3 complete pairs with variance")
    usable.sort(key=lambda e: (-abs(e[1]), e[0]))
    return SelectionMask(entries=usable[:k], method=method)


def write_loadings_csv(path: str, model: PrincipalComponents,
                       feature_names: list):
    """Audit export: one row per (component, feature) loading."""
    model._check_fitted()
    if len(feature_names) != model.n_features_in_:
        raise SchemaMismatch("feature name count differs from fit")
    lines = ["component,feature,loading,explained_variance_ratio"]
    for i, comp in enumerate(model.components_):
        ratio = repr(float(model.explained_variance_ratio_[i]))
        for name, loading in zip(feature_names, comp):
            lines.append(f"{i},{name},{float(loading)!r},{ratio}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


class CorrelationSelector(BaseEstimator, TransformerMixin):
    """Estimator wrapper around select_top_k for pipeline composition."""

    def __init__(self, k: int = 20, method: str = "spearman"):
        self.k = k
        self.method = method

    def fit(self, X, y, names: list[str] | None = None):
        X = np.asarray(X, dtype=float)
        if names is None:
            names = [f"x{j}" for j in range(X.shape[1])]
        self.feature_names_in_ = list(names)
        self.mask_ = select_top_k(X, y, names, self.k, self.method)
        index = {c: j for j, c in enumerate(names)}
        self.support_ = [index[name] for name in self.mask_.names]
        return self

    def transform(self, X) -> np.ndarray:
        if not hasattr(self, "support_"):
            raise NotFittedError("fit before transform")
        X = np.asarray(X, dtype=float)
        if X.shape[1] != len(self.feature_names_in_):
            raise SchemaMismatch("column count differs from fit")
        return X[:, self.support_]

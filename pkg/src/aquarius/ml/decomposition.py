import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted


class PCA(BaseEstimator, TransformerMixin):
    """Principal components via SVD of the centred data.

    Each component's sign is fixed so its largest-magnitude entry is
    positive, which makes fits reproducible across LAPACK builds.
    """

    def __init__(self, n_components=25):
        self.n_components = n_components

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64, ensure_min_samples=2)
        n, d = X.shape
        p = d if self.n_components is None else int(self.n_components)
        if not 1 <= p <= d:
            raise ValueError(f"n_components={p} must lie in 1..{d}")
        self.mean_ = X.mean(axis=0)
        Xc = X - self.mean_
        _, s, vt = np.linalg.svd(Xc, full_matrices=p > min(n, d))
        var = np.zeros(vt.shape[0])
        var[:len(s)] = s ** 2 / (n - 1)
        comps = vt[:p]
        flip = np.sign(comps[np.arange(p), np.argmax(np.abs(comps), axis=1)])
        flip[flip == 0] = 1.0
        self.components_ = comps * flip[:, None]
        self.explained_variance_ = var[:p]
        total = var.sum()
        self.explained_variance_ratio_ = self.explained_variance_ / total if total > 0 else np.zeros(p)
        self.n_components_ = p
        self.n_features_in_ = d
        return self

    def transform(self, X):
        check_is_fitted(self, "components_")
        X = check_array(X, dtype=np.float64)
        return (X - self.mean_) @ self.components_.T

    def inverse_transform(self, Z):
        check_is_fitted(self, "components_")
        return np.asarray(Z) @ self.components_ + self.mean_


def pca_fit(X, p):
    return PCA(n_components=p).fit(X)


def pca_transform(model, X):
    return model.transform(X)

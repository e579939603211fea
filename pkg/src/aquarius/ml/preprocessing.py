import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted


class StandardScaler(BaseEstimator, TransformerMixin):
    """Zero-mean, unit-variance columns (population std).

    Constant columns keep scale 1 and are flagged in ``zero_variance_``.
    """

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        if X.shape[0] < 2:
            raise ValueError("standardization needs at least 2 rows")
        self.mean_ = X.mean(axis=0)
        std = X.std(axis=0)
        self.zero_variance_ = std <= 1e-12 * np.maximum(1.0, np.abs(self.mean_))
        self.scale_ = np.where(self.zero_variance_, 1.0, std)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, ["mean_", "scale_"])
        X = check_array(X, dtype=np.float64)
        return (X - self.mean_) / self.scale_

    def inverse_transform(self, X):
        check_is_fitted(self, ["mean_", "scale_"])
        return np.asarray(X, dtype=np.float64) * self.scale_ + self.mean_


def standardize(X):
    sc = StandardScaler().fit(X)
    return sc.transform(X), sc.mean_, sc.scale_

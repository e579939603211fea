import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_X_y, check_array, check_is_fitted


class LinearRegression(BaseEstimator, RegressorMixin):
    """Ordinary least squares with an intercept.

    Falls back to ridge with ``ridge_lambda`` when the centred design is
    rank deficient or has no more rows than columns.
    """

    def __init__(self, ridge_lambda=1e-8):
        self.ridge_lambda = ridge_lambda

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        x_mean = X.mean(axis=0)
        y_mean = y.mean()
        Xc = X - x_mean
        yc = y - y_mean
        n, d = X.shape
        self.ridge_ = n <= d or np.linalg.matrix_rank(Xc) < d
        if self.ridge_:
            A = Xc.T @ Xc + self.ridge_lambda * np.eye(d)
            self.coef_ = np.linalg.solve(A, Xc.T @ yc)
        else:
            self.coef_ = np.linalg.lstsq(Xc, yc, rcond=None)[0]
        self.intercept_ = float(y_mean - x_mean @ self.coef_)
        self.n_features_in_ = d
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=np.float64)
        return X @ self.coef_ + self.intercept_


def linreg_fit(X, y):
    m = LinearRegression().fit(X, y)
    return m.coef_, m.intercept_


def linreg_predict(model, X):
    if isinstance(model, LinearRegression):
        return model.predict(X)
    coef, intercept = model
    return np.asarray(X, dtype=np.float64) @ coef + intercept

"""Learning primitives with a scikit-learn compatible estimator surface."""

from .preprocessing import StandardScaler, standardize
from .decomposition import PCA, pca_fit, pca_transform
from .cluster import DBSCAN, GaussianMixture, KMeans, dbscan, gmm_fit, kmeans
from .linear import LinearRegression, linreg_fit, linreg_predict
from .metrics import adjusted_rand_index, contingency

__all__ = [
    "StandardScaler", "standardize", "PCA", "pca_fit", "pca_transform", "DBSCAN",
    "GaussianMixture", "KMeans", "dbscan", "gmm_fit", "kmeans", "LinearRegression",
    "linreg_fit", "linreg_predict", "adjusted_rand_index", "contingency",
]

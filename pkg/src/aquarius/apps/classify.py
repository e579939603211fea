"""Unsupervised traffic classification over feature rows.

The pipeline is fixed: standardize, project onto 25 principal components,
then cluster with k-means, a Gaussian mixture or DBSCAN. A synthetic
four-class corpus (CPU-bound, IO-bound, their mixture, and the mixture under
a SYN flood) provides ground truth for scoring.
"""

from __future__ import annotations

import csv
import math
import os
import tempfile

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ..ml import DBSCAN, PCA, GaussianMixture, KMeans, StandardScaler, adjusted_rand_index
from ..store import RegionConfig, VipRegion
from ..traffic import WorkloadSpec, gen_trace
from .features import FeatureMatrix, extract

METHODS = ("kmeans4", "gmm4", "dbscan")
CLASS_NAMES = ("cpu", "io", "mixed", "mixed_flood")


class TrafficClassifier(BaseEstimator, ClusterMixin):
    """StandardScaler -> PCA -> clusterer, as one estimator.

    ``method`` is ``kmeans4``, ``gmm4`` or ``dbscan``; the first two use
    ``n_clusters`` groups, DBSCAN uses ``eps``/``min_samples`` and labels
    noise -1.
    """

    def __init__(self, method="kmeans4", n_components=25, n_clusters=4, eps=0.1, min_samples=5,
                 random_state=None):
        self.method = method
        self.n_components = n_components
        self.n_clusters = n_clusters
        self.eps = eps
        self.min_samples = min_samples
        self.random_state = random_state

    def _clusterer(self):
        if self.method == "kmeans4":
            return KMeans(self.n_clusters, random_state=self.random_state)
        if self.method == "gmm4":
            return GaussianMixture(self.n_clusters, random_state=self.random_state)
        if self.method == "dbscan":
            if not self.eps > 0:
                raise ValueError("eps must be positive")
            if self.min_samples < 1:
                raise ValueError("min_samples must be >= 1")
            return DBSCAN(eps=self.eps, min_samples=self.min_samples)
        raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        model = self._clusterer()
        self.scaler_ = StandardScaler().fit(X)
        Z = self.scaler_.transform(X)
        n_comp = min(self.n_components, Z.shape[0], Z.shape[1])
        self.pca_ = PCA(n_comp).fit(Z)
        self.embedding_ = self.pca_.transform(Z)
        self.model_ = model.fit(self.embedding_)
        self.labels_ = np.asarray(self.model_.labels_)
        return self

    def transform(self, X):
        check_is_fitted(self, "pca_")
        return self.pca_.transform(self.scaler_.transform(check_array(X, dtype=np.float64)))

    def predict(self, X):
        check_is_fitted(self, "model_")
        if self.method == "dbscan":
            raise AttributeError("DBSCAN labels only the rows it was fitted on")
        return self.model_.predict(self.transform(X))


def cluster_profile(X, labels, columns, top: int = 5) -> list:
    """Per-cluster size, mean raw features and the most distinctive columns.

    Distinctiveness is the cluster's mean standardized value, so a column
    ranks high when the cluster sits far above the corpus average.
    """
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels)
    Z = StandardScaler().fit_transform(X)
    out = []
    for c in np.unique(labels):
        rows = labels == c
        zmean = Z[rows].mean(0)
        order = np.argsort(-zmean, kind="stable")[:top]
        out.append({
            "cluster": int(c),
            "size": int(rows.sum()),
            "top_features": [[columns[i], round(float(zmean[i]), 6)] for i in order],
            "mean": {columns[i]: float(X[rows, i].mean()) for i in range(X.shape[1])},
        })
    return out


def classify(fm: FeatureMatrix, method: str = "kmeans4", seed: int = 0, truth=None, eps: float = 0.1,
             min_samples: int = 5, n_components: int = 25):
    """Cluster a feature matrix; returns (labels, report).

    ``truth`` (one label per row) adds the adjusted Rand index to the report.
    """
    clf = TrafficClassifier(method, n_components=n_components, eps=eps, min_samples=min_samples,
                            random_state=seed).fit(fm.values)
    labels = clf.labels_
    report = {
        "method": method,
        "seed": seed,
        "rows": int(len(labels)),
        "n_clusters": int(len(set(labels.tolist()) - {-1})),
        "n_noise": int(np.count_nonzero(labels == -1)),
        "explained_variance_ratio": float(clf.pca_.explained_variance_ratio_.sum()),
        "profile": cluster_profile(fm.values, labels, fm.columns),
    }
    if method == "dbscan":
        report["eps"] = eps
        report["min_samples"] = min_samples
    if truth is not None:
        report["ari"] = adjusted_rand_index(np.asarray(truth), labels)
    return labels, report


def isolation(labels, truth, target) -> dict:
    """How well the rows of class ``target`` are set apart by a clustering.

    Picks the non-noise cluster holding most ``target`` rows and reports the
    share of other rows kept out of it. No such cluster gives share 0.
    """
    labels = np.asarray(labels)
    truth = np.asarray(truth)
    mine = labels[(truth == target) & (labels != -1)]
    if mine.size == 0:
        return {"cluster": None, "target_share": 0.0, "others_excluded": 0.0}
    vals, counts = np.unique(mine, return_counts=True)
    c = int(vals[counts.argmax()])
    others = labels[truth != target]
    return {
        "cluster": c,
        "target_share": float(counts.max() / np.count_nonzero(truth == target)),
        "others_excluded": float(np.mean(others != c)) if others.size else 1.0,
    }


def corpus_specs(seed: int = 0, n_egress: int = 4, duration: float = 130.0,
                 flood_rate: float = 5000.0) -> list:
    """Workloads of the four classes, in ``CLASS_NAMES`` order."""
    base = dict(n_servers=n_egress, server_capacities=(1.0,) * n_egress, duration_s=duration,
                file_sizes=(50_000,), io_throughput=2e6)
    # per-egress rates keep each row near 15-30 closed flows
    scale = n_egress / 4
    return [
        WorkloadSpec(120 * scale, 0.02, 500, seed=seed * 10 + 0, **base),
        WorkloadSpec(60 * scale, 0.02, 500, io_fraction=1.0, seed=seed * 10 + 1, **base),
        WorkloadSpec(120 * scale, 0.02, 500, io_fraction=0.5, seed=seed * 10 + 2, **base),
        WorkloadSpec(120 * scale, 0.02, 500, io_fraction=0.5, flood_rate=flood_rate,
                     seed=seed * 10 + 3, **base),
    ]


def build_corpus(seed: int = 0, rows_per_class: int = 200, n_egress: int = 4, window: float = 2.0,
                 warmup: float = 30.0, flood_rate: float = 5000.0):
    """Simulate the four classes and extract labelled rows.

    Rows starting before ``warmup`` are dropped so the flood has filled the
    flow table. Returns (FeatureMatrix, class index per row).
    """
    n_windows = math.ceil(rows_per_class / n_egress)
    n_warm = math.ceil(warmup / window)
    duration = (n_warm + n_windows) * window
    mats, labels = [], []
    with tempfile.TemporaryDirectory(prefix="aquarius-corpus-") as tmp:
        for c, spec in enumerate(corpus_specs(seed, n_egress, duration, flood_rate)):
            events = [ev for ev in gen_trace(spec) if ev.ts < duration]
            region = VipRegion.create(RegionConfig(), os.path.join(tmp, f"vip{c}.bin"), seed=seed)
            try:
                fm, _, _ = extract(events, region, window, until=duration)
            finally:
                region.close()
            fm = fm.take(fm.t_start >= n_warm * window - 1e-9)
            mats.append(fm)
            labels.extend([c] * len(fm))
    return FeatureMatrix.concat(mats), np.array(labels, dtype=int)


def write_labels(path, fm: FeatureMatrix, labels, truth=None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "egress", "t_start", "cluster"] + (["truth"] if truth is not None else []))
        for r in range(len(labels)):
            row = [r, int(fm.egress[r]), repr(float(fm.t_start[r])), int(labels[r])]
            if truth is not None:
                row.append(truth[r])
            w.writerow(row)

"""k-means, Gaussian mixture and DBSCAN."""

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils import check_random_state
from sklearn.utils.validation import check_array, check_is_fitted


def _sq_dists(X, C):
    d = (X * X).sum(1)[:, None] - 2.0 * X @ C.T + (C * C).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _kmeanspp(X, k, rng):
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.randint(n)]
    closest = _sq_dists(X, centers[:1]).ravel()
    for c in range(1, k):
        total = closest.sum()
        if total <= 0:
            idx = rng.randint(n)
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.uniform(0, total)))
            idx = min(idx, n - 1)
        centers[c] = X[idx]
        closest = np.minimum(closest, _sq_dists(X, centers[c:c + 1]).ravel())
    return centers


class KMeans(BaseEstimator, ClusterMixin):
    """Lloyd's algorithm from k-means++ seeding.

    An emptied cluster is re-seeded at the point farthest from its current
    centroid. ``n_init`` seedings are run and the lowest final inertia kept;
    ``inertia_history_`` belongs to that run and never increases.
    """

    def __init__(self, n_clusters=4, n_init=10, max_iter=300, tol=1e-10, random_state=None):
        self.n_clusters = n_clusters
        self.n_init = n_init
        self.max_iter = max_iter
        self.tol = tol
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        k = self.n_clusters
        if not 1 <= k <= X.shape[0]:
            raise ValueError(f"n_clusters={k} must lie in 1..{X.shape[0]}")
        if self.n_init < 1:
            raise ValueError("n_init must be >= 1")
        rng = check_random_state(self.random_state)
        best = None
        for _ in range(self.n_init):
            run = self._lloyd(X, _kmeanspp(X, k, rng))
            if best is None or run[1] < best[1]:
                best = run
        self.labels_, self.inertia_, self.inertia_history_, self.cluster_centers_, self.n_iter_ = best
        return self

    def _lloyd(self, X, centers):
        k = len(centers)
        history = []
        labels = None
        for it in range(self.max_iter):
            d = _sq_dists(X, centers)
            labels = d.argmin(1)
            point_d = d[np.arange(len(X)), labels]
            counts = np.bincount(labels, minlength=k)
            for c in np.flatnonzero(counts == 0):
                far = int(point_d.argmax())
                labels[far] = c
                point_d[far] = 0.0
                centers[c] = X[far]
                counts = np.bincount(labels, minlength=k)
            history.append(float(point_d.sum()))
            new = np.zeros_like(centers)
            np.add.at(new, labels, X)
            new /= counts[:, None]
            shift = float(((new - centers) ** 2).sum())
            centers = new
            if shift <= self.tol:
                break
        d = _sq_dists(X, centers)
        labels = d.argmin(1)
        inertia = float(d[np.arange(len(X)), labels].sum())
        history.append(inertia)
        return labels, inertia, history, centers, it + 1

    def predict(self, X):
        check_is_fitted(self, "cluster_centers_")
        X = check_array(X, dtype=np.float64)
        return _sq_dists(X, self.cluster_centers_).argmin(1)


class GaussianMixture(BaseEstimator, ClusterMixin):
    """EM for a Gaussian mixture with full or diagonal covariances.

    Covariance eigenvalues (variances, when diagonal) are floored at
    ``var_floor`` inside the M-step. Clipping the spectrum is the
    constrained maximiser of the M-step objective, so the log-likelihood
    stays monotone. Initial responsibilities come from a k-means labelling.
    """

    def __init__(self, n_components=4, covariance_type="full", max_iter=200, tol=1e-6,
                 var_floor=1e-6, random_state=None):
        self.n_components = n_components
        self.covariance_type = covariance_type
        self.max_iter = max_iter
        self.tol = tol
        self.var_floor = var_floor
        self.random_state = random_state

    def _m_step(self, X, resp):
        nk = resp.sum(0) + 10 * np.finfo(float).eps
        weights = nk / nk.sum()
        means = resp.T @ X / nk[:, None]
        if self.covariance_type == "diag":
            var = resp.T @ (X * X) / nk[:, None] - means ** 2
            return weights, means, np.maximum(var, self.var_floor)
        covs = np.empty((len(nk), X.shape[1], X.shape[1]))
        for j in range(len(nk)):
            D = X - means[j]
            S = (resp[:, j, None] * D).T @ D / nk[j]
            w, V = np.linalg.eigh((S + S.T) / 2)
            covs[j] = (V * np.maximum(w, self.var_floor)) @ V.T
        return weights, means, covs

    def _log_prob(self, X, weights, means, cov):
        n, d = X.shape
        if self.covariance_type == "diag":
            lp = -0.5 * (d * np.log(2 * np.pi) + np.log(cov).sum(1))[None, :]
            lp = lp - 0.5 * (((X[:, None, :] - means[None]) ** 2) / cov[None]).sum(2)
            return lp + np.log(weights)[None, :]
        lp = np.empty((n, len(weights)))
        for j in range(len(weights)):
            L = np.linalg.cholesky(cov[j])
            sol = np.linalg.solve(L, (X - means[j]).T)
            logdet = 2 * np.log(np.diag(L)).sum()
            lp[:, j] = -0.5 * (d * np.log(2 * np.pi) + logdet + (sol * sol).sum(0))
        return lp + np.log(weights)[None, :]

    @staticmethod
    def _normalize(lp):
        top = lp.max(1, keepdims=True)
        lse = top + np.log(np.exp(lp - top).sum(1, keepdims=True))
        return lse.ravel(), np.exp(lp - lse)

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        k = self.n_components
        if not 1 <= k <= X.shape[0]:
            raise ValueError(f"n_components={k} must lie in 1..{X.shape[0]}")
        if self.covariance_type not in ("full", "diag"):
            raise ValueError(f"unknown covariance_type {self.covariance_type!r}")
        labels = KMeans(k, random_state=self.random_state).fit(X).labels_
        resp = np.eye(k)[labels]
        weights, means, cov = self._m_step(X, resp)
        history = []
        self.converged_ = False
        for it in range(self.max_iter):
            lse, resp = self._normalize(self._log_prob(X, weights, means, cov))
            history.append(float(lse.mean()))
            if len(history) > 1 and abs(history[-1] - history[-2]) < self.tol:
                self.converged_ = True
                break
            weights, means, cov = self._m_step(X, resp)
        else:
            lse, resp = self._normalize(self._log_prob(X, weights, means, cov))
            history.append(float(lse.mean()))
        self.weights_, self.means_, self.covariances_ = weights, means, cov
        self.responsibilities_ = resp
        self.log_likelihood_history_ = history
        self.lower_bound_ = history[-1]
        self.labels_ = resp.argmax(1)
        self.n_iter_ = it + 1
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "means_")
        X = check_array(X, dtype=np.float64)
        return self._normalize(self._log_prob(X, self.weights_, self.means_, self.covariances_))[1]

    def predict(self, X):
        return self.predict_proba(X).argmax(1)

    def score(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        return float(self._normalize(self._log_prob(X, self.weights_, self.means_, self.covariances_))[0].mean())


class DBSCAN(BaseEstimator, ClusterMixin):
    """Density-based clustering; noise is labelled -1.

    ``min_samples`` counts the point itself. Points are visited in input
    order and a border point joins the first cluster that reaches it, so
    labels depend only on the data and its order.
    """

    def __init__(self, eps=0.1, min_samples=5):
        self.eps = eps
        self.min_samples = min_samples

    def _neighbors(self, X):
        eps2 = self.eps ** 2
        sq = (X * X).sum(1)
        out = []
        for start in range(0, len(X), 512):
            blk = X[start:start + 512]
            d = sq[start:start + 512, None] - 2.0 * blk @ X.T + sq[None, :]
            out.extend(np.flatnonzero(row <= eps2) for row in d)
        return out

    def fit(self, X, y=None):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.min_samples < 1:
            raise ValueError("min_samples must be >= 1")
        X = check_array(X, dtype=np.float64)
        nbrs = self._neighbors(X)
        core = np.array([len(nb) >= self.min_samples for nb in nbrs], dtype=bool)
        labels = np.full(len(X), -1, dtype=np.int64)
        cluster = 0
        for i in range(len(X)):
            if labels[i] != -1 or not core[i]:
                continue
            labels[i] = cluster
            stack = [i]
            while stack:
                p = stack.pop()
                if not core[p]:
                    continue
                for q in nbrs[p]:
                    if labels[q] == -1:
                        labels[q] = cluster
                        stack.append(q)
            cluster += 1
        self.labels_ = labels
        self.core_sample_indices_ = np.flatnonzero(core)
        return self


def kmeans(X, k, seed=None, max_iter=300):
    m = KMeans(k, max_iter=max_iter, random_state=seed).fit(X)
    return m.labels_, m.cluster_centers_, m.inertia_


def gmm_fit(X, k, seed=None, covariance_type="full", max_iter=200, tol=1e-6):
    return GaussianMixture(k, covariance_type=covariance_type, max_iter=max_iter, tol=tol,
                           random_state=seed).fit(X)


def dbscan(X, eps=0.1, min_pts=5):
    return DBSCAN(eps=eps, min_samples=min_pts).fit(X).labels_

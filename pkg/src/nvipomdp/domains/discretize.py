"""Observation quantization by k-means clustering."""

from __future__ import annotations

import warnings

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.cluster import KMeans
from sklearn.utils.validation import check_array, check_is_fitted

from ..exceptions import DegenerateInputWarning


class KMeansDiscretizer(TransformerMixin, BaseEstimator):
    """Map continuous observation vectors to the index of the nearest centroid.

    Centroids come from Lloyd's algorithm with k-means++ seeding, stopped when
    assignments no longer change or after ``max_iter`` iterations. They are
    stored in lexicographic order so indices are reproducible.

    If the sample holds fewer distinct points than ``n_clusters``, every
    distinct point becomes a centroid and a :class:`DegenerateInputWarning`
    is issued.
    """

    def __init__(self, n_clusters=20, max_iter=200, random_state=0):
        self.n_clusters = n_clusters
        self.max_iter = max_iter
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64, ensure_2d=False)
        if X.ndim == 1:
            X = X[:, None]
        if self.n_clusters < 1:
            raise ValueError("n_clusters must be at least 1")
        distinct = np.unique(X, axis=0)
        if len(distinct) < self.n_clusters:
            warnings.warn(
                f"{len(distinct)} distinct samples for {self.n_clusters} clusters; "
                "using each distinct point as a centroid",
                DegenerateInputWarning,
                stacklevel=2,
            )
            centers = distinct
            self.n_iter_ = 0
        else:
            km = KMeans(
                n_clusters=self.n_clusters,
                init="k-means++",
                n_init=1,
                max_iter=self.max_iter,
                tol=0.0,
                algorithm="lloyd",
                random_state=self.random_state,
            ).fit(X)
            centers = km.cluster_centers_
            self.n_iter_ = km.n_iter_
        order = np.lexsort(centers.T[::-1])
        self.cluster_centers_ = np.ascontiguousarray(centers[order])
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "cluster_centers_")
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        if X.shape[1] == 1:
            # sorted 1-D centroids: nearest by midpoint search
            c = self.cluster_centers_[:, 0]
            return np.searchsorted((c[1:] + c[:-1]) / 2, X[:, 0], side="left")
        d = ((X[:, None, :] - self.cluster_centers_[None]) ** 2).sum(-1)
        return d.argmin(axis=1)

    def quantization_error(self, X) -> float:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        idx = self.transform(X)
        return float(((X - self.cluster_centers_[idx]) ** 2).sum(axis=1).mean())


def kmeans_discretize(samples, k: int, seed: int = 0) -> KMeansDiscretizer:
    if k < 1:
        raise ValueError("k must be at least 1")
    if len(samples) == 0:
        raise ValueError("samples must be nonempty")
    return KMeansDiscretizer(n_clusters=k, random_state=seed).fit(samples)

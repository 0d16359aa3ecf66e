"""Random-forest and random-guess baselines."""

from __future__ import annotations

import math
import warnings

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.ensemble import RandomForestClassifier
from sklearn.multiclass import OneVsRestClassifier
from sklearn.utils.validation import check_is_fitted

from ..exceptions import ConfigurationError
from ..validation import check_labels, check_windows


def interval_means(X, n_points):
    """Downsample each row to ``n_points`` contiguous interval means."""
    n = X.shape[1]
    edges = np.round(np.linspace(0, n, n_points + 1)).astype(int)
    lo = np.minimum(edges[:-1], n - 1)
    hi = np.minimum(np.maximum(edges[1:], lo + 1), n)
    csum = np.concatenate([np.zeros((len(X), 1)), np.cumsum(X, axis=1, dtype=np.float64)], axis=1)
    return (csum[:, hi] - csum[:, lo]) / (hi - lo)


class WindowFeatures(TransformerMixin, BaseEstimator):
    """Per-window summary statistics followed by a coarse copy of the window.

    Columns: mean, std, min, max, 10th/50th/90th percentiles, the number of sign
    changes of the first difference, then ``n_points`` interval means.
    """

    def __init__(self, n_points=64):
        self.n_points = n_points

    def fit(self, X, y=None):
        X = check_windows(X)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_in_")
        X = check_windows(X, self.n_features_in_).astype(np.float64)
        d = np.sign(np.diff(X, axis=1))
        turns = np.count_nonzero(d[:, 1:] * d[:, :-1] < 0, axis=1)
        stats = np.column_stack([
            X.mean(axis=1), X.std(axis=1), X.min(axis=1), X.max(axis=1),
            *np.percentile(X, [10, 50, 90], axis=1), turns,
        ])
        return np.hstack([stats, interval_means(X, self.n_points)])


class RandomForestBaseline(ClassifierMixin, BaseEstimator):
    """One-vs-rest random forests over :class:`WindowFeatures`."""

    def __init__(self, n_estimators=100, n_points=64, max_features="sqrt", min_samples_leaf=1,
                 random_state=0, n_jobs=1):
        self.n_estimators = n_estimators
        self.n_points = n_points
        self.max_features = max_features
        self.min_samples_leaf = min_samples_leaf
        self.random_state = random_state
        self.n_jobs = n_jobs

    def fit(self, X, y):
        X = check_windows(X)
        y = check_labels(y, n_samples=len(X))
        self.features_ = WindowFeatures(self.n_points).fit(X)
        forest = RandomForestClassifier(
            n_estimators=self.n_estimators, max_features=self.max_features,
            min_samples_leaf=self.min_samples_leaf, random_state=self.random_state, n_jobs=1)
        self.forest_ = OneVsRestClassifier(forest, n_jobs=self.n_jobs)
        with warnings.catch_warnings():
            # constant columns are legitimate here: a device never ON in a small split
            warnings.filterwarnings("ignore", message="Label .* is present in all", category=UserWarning)
            self.forest_.fit(self.features_.transform(X), y)
        self.n_features_in_ = X.shape[1]
        self.n_outputs_ = y.shape[1]
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "forest_")
        proba = self.forest_.predict_proba(self.features_.transform(X))
        return np.asarray(proba, dtype=np.float64).reshape(len(proba), self.n_outputs_)

    def predict(self, X):
        return (self.predict_proba(X) > 0.5).astype(np.uint8)


def rf_baseline(dataset, features=None, forest_size=100, seed=0):
    """Fit a :class:`RandomForestBaseline` on ``dataset.train``."""
    n_points = 64 if features is None else features.n_points
    return RandomForestBaseline(forest_size, n_points, random_state=seed).fit(
        dataset.X_train, dataset.y_train)


class RandomSubsetSampler:
    """Draw uniformly random active-device sets under an SE or RE policy.

    SE(ad): uniform over the ``C(dit, ad)`` subsets of size ``ad``.
    RE(ad_max): uniform over all non-empty subsets of size at most ``ad_max``.
    """

    def __init__(self, dit, group, ad, seed=0):
        if group not in ("SE", "RE"):
            raise ConfigurationError(f"policy group must be SE or RE, got {group!r}")
        if not 1 <= ad <= dit:
            raise ConfigurationError(f"policy needs 1 <= ad <= dit (dit={dit}, ad={ad})")
        self.dit, self.group, self.ad = dit, group, ad
        self.rng = np.random.default_rng(seed)
        sizes = np.arange(1, ad + 1)
        weights = np.array([math.comb(dit, int(k)) for k in sizes], dtype=np.float64)
        self._sizes = sizes
        self._p = weights / weights.sum()

    def __call__(self, n):
        if self.group == "SE":
            k = np.full(n, self.ad)
        else:
            k = self.rng.choice(self._sizes, size=n, p=self._p)
        ranks = self.rng.random((n, self.dit)).argsort(axis=1).argsort(axis=1)
        return ranks < k[:, None]


def random_baseline(dit, policy, seed=0):
    """Sampler for a ``("SE", ad)`` or ``("RE", ad_max)`` random-guess policy."""
    group, ad = policy
    return RandomSubsetSampler(dit, group, ad, seed)


class RandomGuessClassifier(ClassifierMixin, BaseEstimator):
    """Ignores its input; guesses a random active set per window.

    With ``ad=None`` the policy bound is taken from the training labels: the
    fixed count for SE, the largest observed count for RE.
    """

    def __init__(self, group="RE", ad=None, random_state=0):
        self.group = group
        self.ad = ad
        self.random_state = random_state

    def fit(self, X, y):
        y = check_labels(y)
        self.n_outputs_ = y.shape[1]
        counts = y.sum(axis=1)
        self.ad_ = int(self.ad) if self.ad is not None else int(max(1, counts.max()))
        self.sampler_ = random_baseline(self.n_outputs_, (self.group, self.ad_), self.random_state)
        self.n_features_in_ = np.asarray(X).shape[-1]
        return self

    def predict(self, X):
        check_is_fitted(self, "sampler_")
        return self.sampler_(len(X)).astype(np.uint8)

    def predict_proba(self, X):
        return self.predict(X).astype(np.float64)

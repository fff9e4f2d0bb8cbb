"""Pluggable prediction learners for the cross-fitting estimators.

A learner turns training rows into an immutable Predictor; the cross-fit
driver guarantees the training rows never include the evaluation fold, and
each learner is a pure function of (training data, seed). The shipped set
spans the cases the estimator theory cares about: a post-lasso canonical
GLM, a ridge shrinker, a genuinely nonparametric kNN, a constant (the
canonical "poor" predictor), and a deliberately misspecified main-effects
GLM for robustness experiments.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .glm import GlmFamily, GlmFit, fit_ml, predict
from .selection import SelectionResult, lasso_cv, post_selection_refit

LEARNER_NAMES = ("post_lasso", "ridge", "knn", "constant", "wrong_model")


def _as_matrix(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    return x


class _ClampMixin:
    """Binomial-family predictions are forced into [0, 1]; the number of
    clamped values is tallied on the predictor for diagnostics."""

    family: GlmFamily
    clamp_events: int = 0

    def _finalize(self, values: np.ndarray) -> np.ndarray:
        if self.family is GlmFamily.BINOMIAL:
            clipped = np.clip(values, 0.0, 1.0)
            self.clamp_events += int(np.count_nonzero(clipped != values))
            return clipped
        return values


@dataclass
class GlmPredictor(_ClampMixin):
    fit: GlmFit
    family: GlmFamily
    clamp_events: int = 0

    def predict(self, x) -> np.ndarray:
        x = _as_matrix(x)
        q = self.fit.coefficients.shape[0] - 1
        return self._finalize(predict(self.fit, x[:, :q] if q == 0 else x))


@dataclass
class PostLassoGlmPredictor(_ClampMixin):
    fit: GlmFit
    columns: tuple[int, ...]
    family: GlmFamily
    clamp_events: int = 0

    def predict(self, x) -> np.ndarray:
        x = _as_matrix(x)
        return self._finalize(predict(self.fit, x[:, list(self.columns)]))


@dataclass
class PostLassoLearner:
    """Step 1a + Step 1b composed: lasso with CV penalty, then an
    unpenalized canonical ML refit on the selected support.

    The internal CV fold count is capped at the training size so the
    learner keeps working inside cross-fitting when a training arm gets
    small; below two rows selection is skipped and the refit is the
    training mean."""

    k_cv: int = 5
    lambda_rule: str = "1se"
    name: str = "post_lasso"

    def train(self, x, y, family: GlmFamily, weights=None, seed: int = 0):
        x = _as_matrix(x)
        k_eff = min(self.k_cv, x.shape[0])
        if k_eff >= 2:
            selection = lasso_cv(
                x, y, family, k_cv=k_eff, seed=seed, weights=weights,
                lambda_rule=self.lambda_rule,
            )
        else:
            selection = SelectionResult((), "lasso_cv")
        fit = post_selection_refit(x, y, family, selection, weights=weights)
        columns = tuple(int(name[1:]) for name in fit.column_names)
        return PostLassoGlmPredictor(fit, columns, family)


@dataclass
class RidgePredictor(_ClampMixin):
    intercept: float
    beta: np.ndarray
    means: np.ndarray
    sds: np.ndarray
    family: GlmFamily
    clamp_events: int = 0

    def predict(self, x) -> np.ndarray:
        x = _as_matrix(x)
        xs = (x - self.means) / self.sds
        return self._finalize(self.intercept + xs @ self.beta)


def _ridge_solve(xs, yc, lam):
    p = xs.shape[1]
    return np.linalg.solve(xs.T @ xs + lam * np.eye(p), xs.T @ yc)


@dataclass
class RidgeLearner:
    """Closed-form gaussian ridge on standardized columns with an internal
    K-fold CV over the penalty grid. Used on binomial outcomes it simply
    clamps the linear predictions into [0, 1] (the theory permits arbitrary,
    even misspecified, predictions)."""

    lambda_grid: tuple[float, ...] = tuple(np.geomspace(1e-4, 1e4, 25))
    k_cv: int = 5
    name: str = "ridge"

    def train(self, x, y, family: GlmFamily, weights=None, seed: int = 0):
        x = _as_matrix(x)
        y = np.asarray(y, dtype=float)
        n, p = x.shape
        means = x.mean(axis=0)
        sds = x.std(axis=0)
        sds = np.where(sds <= 0, 1.0, sds)
        xs = (x - means) / sds
        ybar = float(y.mean())
        yc = y - ybar

        if len(self.lambda_grid) == 1 or n < 2 * self.k_cv:
            lam = float(self.lambda_grid[0])
        else:
            rng = np.random.default_rng(seed)
            assignment = rng.permutation(n) % self.k_cv
            losses = np.zeros(len(self.lambda_grid))
            for k in range(self.k_cv):
                test = assignment == k
                train = ~test
                xbar = xs[train].mean(axis=0)
                for i, lam in enumerate(self.lambda_grid):
                    beta = _ridge_solve(xs[train] - xbar, yc[train] - yc[train].mean(), lam)
                    pred = yc[train].mean() + (xs[test] - xbar) @ beta
                    losses[i] += float(((yc[test] - pred) ** 2).sum())
            lam = float(self.lambda_grid[int(np.argmin(losses))])

        beta = _ridge_solve(xs, yc, lam)
        return RidgePredictor(ybar, beta, means, sds, family)


@dataclass
class KnnPredictor(_ClampMixin):
    x_train: np.ndarray
    y_train: np.ndarray
    k: int
    means: np.ndarray
    sds: np.ndarray
    family: GlmFamily
    clamp_events: int = 0

    def predict(self, x) -> np.ndarray:
        x = _as_matrix(x)
        xq = (x - self.means) / self.sds
        xt = (self.x_train - self.means) / self.sds
        # squared Euclidean distances, (n_query, n_train)
        d2 = ((xq**2).sum(axis=1)[:, None] - 2.0 * xq @ xt.T + (xt**2).sum(axis=1)[None, :])
        # stable sort: distance ties resolve to the lower training index
        order = np.argsort(d2, axis=1, kind="stable")[:, : self.k]
        return self._finalize(self.y_train[order].mean(axis=1))


@dataclass
class KnnLearner:
    """k-nearest-neighbour mean outcome; k defaults to ceil(sqrt(n_train)).
    Standardization parameters come from the training rows only."""

    k: int | None = None
    name: str = "knn"

    def train(self, x, y, family: GlmFamily, weights=None, seed: int = 0):
        x = _as_matrix(x)
        y = np.asarray(y, dtype=float)
        n = x.shape[0]
        k = self.k if self.k is not None else math.ceil(math.sqrt(n))
        if not 1 <= k <= n:
            raise ConfigError(f"knn needs 1 <= k <= n_train, got k={k}, n={n}")
        means = x.mean(axis=0)
        sds = x.std(axis=0)
        sds = np.where(sds <= 0, 1.0, sds)
        return KnnPredictor(x.copy(), y.copy(), k, means, sds, family)


@dataclass
class ConstantPredictor(_ClampMixin):
    value: float
    family: GlmFamily
    clamp_events: int = 0

    def predict(self, x) -> np.ndarray:
        x = _as_matrix(x)
        return self._finalize(np.full(x.shape[0], self.value))


@dataclass
class ConstantLearner:
    """Predicts the training mean everywhere: the canonical misspecified
    predictor for robustness tests (cross-fit AIPW built on it collapses to
    roughly the unadjusted estimator)."""

    name: str = "constant"

    def train(self, x, y, family: GlmFamily, weights=None, seed: int = 0):
        y = np.asarray(y, dtype=float)
        if weights is not None:
            w = np.asarray(weights, dtype=float)
            value = float((w * y).sum() / w.sum())
        else:
            value = float(y.mean())
        return ConstantPredictor(value, family)


@dataclass
class WrongModelLearner:
    """Plain main-effects canonical GLM, no selection, no transformations.
    Deliberately misspecified whenever the data-generating process is not
    linear in the raw covariates."""

    name: str = "wrong_model"

    def train(self, x, y, family: GlmFamily, weights=None, seed: int = 0):
        x = _as_matrix(x)
        fit = fit_ml(x, y, family, weights)
        return GlmPredictor(fit, family)


def learner_post_lasso(**kwargs) -> PostLassoLearner:
    return PostLassoLearner(**kwargs)


def learner_ridge(lambda_grid=None, **kwargs) -> RidgeLearner:
    if lambda_grid is not None:
        kwargs["lambda_grid"] = tuple(float(v) for v in lambda_grid)
    return RidgeLearner(**kwargs)


def learner_knn(k: int | None = None) -> KnnLearner:
    return KnnLearner(k=k)


def learner_constant() -> ConstantLearner:
    return ConstantLearner()


def learner_wrong_model() -> WrongModelLearner:
    return WrongModelLearner()


def get_learner(name: str, **params):
    """Resolve a learner by its config identifier."""
    factories = {
        "post_lasso": learner_post_lasso,
        "ridge": learner_ridge,
        "knn": learner_knn,
        "constant": learner_constant,
        "wrong_model": learner_wrong_model,
    }
    if name not in factories:
        raise ConfigError(
            f"unknown learner {name!r}; expected one of {', '.join(LEARNER_NAMES)}"
        )
    return factories[name](**params)

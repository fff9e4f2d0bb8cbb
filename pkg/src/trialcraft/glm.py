"""Canonical generalized linear models fitted by IRLS or least squares.

Two families are supported, each with its canonical link: gaussian/identity
and binomial/logit. Maximum-likelihood fits satisfy the weighted score
equations sum_i w_i c_ij (y_i - mu_i) = 0 for every design column c_j
(including the intercept); that identity is what makes the standardization
estimators robust to model misspecification, so it is the contract this
module is built around. Least-squares fitting of the logistic model is
provided for the minimal-MSE (empirical efficiency maximization) route and
deliberately does NOT satisfy the score equations.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NonConvergence, Separation, Singular

DEVIANCE_RTOL = 1e-10
MAX_IRLS_ITERATIONS = 100
MAX_GAUSS_NEWTON_ITERATIONS = 200
SEPARATION_COEF_BOUND = 30.0
MU_FLOOR = 1e-10


def expit(eta: np.ndarray) -> np.ndarray:
    """Numerically stable inverse logit."""
    eta = np.asarray(eta, dtype=float)
    out = np.empty_like(eta)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    e = np.exp(eta[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def logit(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return np.log(p) - np.log1p(-p)


class GlmFamily(enum.Enum):
    GAUSSIAN = "gaussian_identity"
    BINOMIAL = "binomial_logit"

    def link(self, mu: np.ndarray) -> np.ndarray:
        if self is GlmFamily.GAUSSIAN:
            return np.asarray(mu, dtype=float)
        return logit(mu)

    def inv_link(self, eta: np.ndarray) -> np.ndarray:
        if self is GlmFamily.GAUSSIAN:
            return np.asarray(eta, dtype=float)
        return expit(eta)

    def deviance(self, y: np.ndarray, mu: np.ndarray, weights: np.ndarray) -> float:
        if self is GlmFamily.GAUSSIAN:
            return float(np.sum(weights * (y - mu) ** 2))
        mu = np.clip(mu, MU_FLOOR, 1.0 - MU_FLOOR)
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = np.where(y > 0, y * (np.log(y) - np.log(mu)), 0.0)
            t0 = np.where(y < 1, (1 - y) * (np.log1p(-y) - np.log1p(-mu)), 0.0)
        return float(2.0 * np.sum(weights * (t1 + t0)))


def family_from_string(name: str) -> GlmFamily:
    key = name.strip().lower()
    aliases = {
        "gaussian": GlmFamily.GAUSSIAN,
        "gaussian_identity": GlmFamily.GAUSSIAN,
        "binomial": GlmFamily.BINOMIAL,
        "binomial_logit": GlmFamily.BINOMIAL,
    }
    if key not in aliases:
        raise ValueError(f"unknown family {name!r}")
    return aliases[key]


@dataclass(frozen=True)
class GlmFit:
    """A fitted GLM. `coefficients` has the intercept first when the fit was
    built by `fit_ml`/`fit_least_squares`; `has_intercept` records that.

    `method` is "ml" or "least_squares"; only "ml" guarantees the score
    equations (the prediction unbiasedness identity) on the training data.
    """

    family: GlmFamily
    coefficients: np.ndarray
    column_names: tuple[str, ...]
    converged: bool
    iterations: int
    deviance: float
    fitted_with_weights: bool
    fitted_with_offset: bool
    method: str = "ml"
    has_intercept: bool = True

    @property
    def score_zero_guaranteed(self) -> bool:
        return self.method == "ml" and self.has_intercept


def _as_design(x: np.ndarray | None, n: int | None = None) -> np.ndarray:
    if x is None:
        if n is None:
            raise DimensionMismatch("cannot infer number of rows")
        return np.empty((n, 0))
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    return x


def _prepare(x, y, weights, offset):
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    x = _as_design(x, n)
    if x.shape[0] != n:
        raise DimensionMismatch(f"x has {x.shape[0]} rows but y has {n}")
    if weights is None:
        w = np.ones(n)
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape[0] != n:
            raise DimensionMismatch("weights length must match y")
        if np.any(w < 0):
            raise ValueError("weights must be non-negative")
    if offset is None:
        off = np.zeros(n)
    else:
        off = np.asarray(offset, dtype=float)
        if off.shape[0] != n:
            raise DimensionMismatch("offset length must match y")
    return x, y, w, off


def _solve_wls(design: np.ndarray, w: np.ndarray, target: np.ndarray) -> np.ndarray:
    xtwx = design.T @ (design * w[:, None])
    try:
        np.linalg.cholesky(xtwx)
        return np.linalg.solve(xtwx, design.T @ (w * target))
    except np.linalg.LinAlgError:
        raise Singular("rank-deficient weighted design matrix") from None


def _start_mean(y, family, w):
    ybar = float(np.sum(w * y) / np.sum(w)) if np.sum(w) > 0 else float(np.mean(y))
    if family is GlmFamily.BINOMIAL:
        ybar = min(max(ybar, 1e-6), 1.0 - 1e-6)
    return ybar


def _check_diverged(family, coef, converged):
    if family is GlmFamily.BINOMIAL and np.max(np.abs(coef)) > SEPARATION_COEF_BOUND:
        raise Separation(
            "logistic coefficients diverged (|coef| > "
            f"{SEPARATION_COEF_BOUND:g}); the data are likely separated"
        )
    if not converged:
        raise NonConvergence("IRLS did not converge within the iteration budget")


def fit_ml_design(
    design: np.ndarray,
    y: np.ndarray,
    family: GlmFamily,
    weights: np.ndarray | None = None,
    offset: np.ndarray | None = None,
    column_names: tuple[str, ...] | None = None,
    has_intercept: bool = False,
) -> GlmFit:
    """Maximum-likelihood fit on an explicit design matrix (no implicit
    intercept). Building block for `fit_ml` and for the TMLE update models.
    """
    design, y, w, off = _prepare(design, y, weights, offset)
    n, q = design.shape
    if family is GlmFamily.BINOMIAL and (np.any(y < 0) or np.any(y > 1)):
        raise ValueError("binomial outcomes must lie in [0, 1]")

    coef = np.zeros(q)
    if has_intercept and q > 0:
        ybar = _start_mean(y, family, w)
        coef[0] = float(family.link(np.array([ybar]))[0])

    if q == 0:
        mu = family.inv_link(off)
        return GlmFit(
            family, coef, tuple(column_names or ()), True, 0,
            family.deviance(y, mu, w), weights is not None, offset is not None,
        )

    dev_prev = np.inf
    converged = False
    iterations = 0
    for iterations in range(1, MAX_IRLS_ITERATIONS + 1):
        eta = design @ coef + off
        mu = family.inv_link(eta)
        if family is GlmFamily.BINOMIAL:
            mu = np.clip(mu, MU_FLOOR, 1.0 - MU_FLOOR)
            var = mu * (1.0 - mu)
        else:
            var = np.ones(n)
        w_work = w * var
        working = eta - off + (y - mu) / var
        new_coef = _solve_wls(design, w_work, working)

        # step-halve if the deviance increased (keeps separation paths tame)
        direction = new_coef - coef
        step = 1.0
        dev = family.deviance(y, family.inv_link(design @ new_coef + off), w)
        while dev > dev_prev + 1e-12 and step > 1e-8:
            step /= 2.0
            new_coef = coef + step * direction
            dev = family.deviance(y, family.inv_link(design @ new_coef + off), w)
        coef = new_coef

        if abs(dev - dev_prev) <= DEVIANCE_RTOL * (abs(dev) + 0.1):
            converged = True
            dev_prev = dev
            break
        dev_prev = dev

    _check_diverged(family, coef, converged)
    return GlmFit(
        family, coef, tuple(column_names or ()), converged, iterations,
        float(dev_prev), weights is not None, offset is not None,
    )


def fit_ml(
    x: np.ndarray | None,
    y: np.ndarray,
    family: GlmFamily,
    weights: np.ndarray | None = None,
    offset: np.ndarray | None = None,
    column_names=None,
) -> GlmFit:
    """Fit y ~ 1 + x by maximum likelihood with the canonical link.

    The returned fit satisfies the weighted score equations to numerical
    tolerance; see `score_residual`. Raises Separation, Singular or
    NonConvergence instead of returning a silently bad fit.
    """
    y = np.asarray(y, dtype=float)
    x = _as_design(x, y.shape[0])
    design = np.column_stack([np.ones(y.shape[0]), x])
    names = tuple(column_names) if column_names is not None else tuple(
        f"x{j}" for j in range(x.shape[1])
    )
    fit = fit_ml_design(
        design, y, family, weights, offset,
        column_names=("(intercept)", *names), has_intercept=True,
    )
    return GlmFit(
        fit.family, fit.coefficients, names, fit.converged, fit.iterations,
        fit.deviance, fit.fitted_with_weights, fit.fitted_with_offset,
        method="ml", has_intercept=True,
    )


def fit_least_squares(
    x: np.ndarray | None,
    y: np.ndarray,
    family: GlmFamily,
    weights: np.ndarray | None = None,
    column_names=None,
) -> GlmFit:
    """Minimize sum_i w_i (y_i - g^{-1}(b0 + x_i b))^2.

    Identical to `fit_ml` for the gaussian family. For the logistic model
    this is a damped Gauss-Newton solve of the nonlinear least-squares
    problem; the prediction unbiasedness identity is NOT guaranteed.
    """
    y = np.asarray(y, dtype=float)
    x = _as_design(x, y.shape[0])
    names = tuple(column_names) if column_names is not None else tuple(
        f"x{j}" for j in range(x.shape[1])
    )

    if family is GlmFamily.GAUSSIAN:
        fit = fit_ml(x, y, family, weights, column_names=names)
        return GlmFit(
            fit.family, fit.coefficients, fit.column_names, fit.converged,
            fit.iterations, fit.deviance, fit.fitted_with_weights,
            fit.fitted_with_offset, method="least_squares", has_intercept=True,
        )

    design, y, w, _ = _prepare(x, y, weights, None)
    design = np.column_stack([np.ones(y.shape[0]), design])
    coef = np.zeros(design.shape[1])
    ybar = float(np.sum(w * y) / np.sum(w))
    ybar = min(max(ybar, 1e-6), 1.0 - 1e-6)
    coef[0] = float(logit(np.array([ybar]))[0])

    def sse(c):
        return float(np.sum(w * (y - expit(design @ c)) ** 2))

    current = sse(coef)
    converged = False
    iterations = 0
    for iterations in range(1, MAX_GAUSS_NEWTON_ITERATIONS + 1):
        mu = expit(design @ coef)
        dmu = np.clip(mu * (1.0 - mu), MU_FLOOR, None)
        jac = design * dmu[:, None]
        try:
            delta = _solve_wls(jac, w, y - mu)
        except Singular:
            raise
        step = 1.0
        trial = coef + delta
        value = sse(trial)
        while value > current + 1e-14 and step > 1e-10:
            step /= 2.0
            trial = coef + step * delta
            value = sse(trial)
        moved = np.max(np.abs(trial - coef))
        coef = trial
        if abs(current - value) <= 1e-12 * (abs(value) + 1e-3) and moved < 1e-10:
            current = value
            converged = True
            break
        current = value

    _check_diverged(family, coef, converged)
    return GlmFit(
        family, coef, names, converged, iterations, current,
        weights is not None, False, method="least_squares", has_intercept=True,
    )


def predict(fit: GlmFit, x: np.ndarray, offset: np.ndarray | None = None) -> np.ndarray:
    """Response-scale predictions g^{-1}(b0 + x b + offset).

    Intercept-only fits take an (n, 0) matrix so the row count is explicit.
    """
    if fit.has_intercept:
        q = fit.coefficients.shape[0] - 1
    else:
        q = fit.coefficients.shape[0]
    if x is None:
        raise DimensionMismatch(
            "predict needs a matrix; pass an (n, 0) matrix for intercept-only fits"
        )
    x = _as_design(x)
    if x.shape[1] != q:
        raise DimensionMismatch(
            f"fit expects {q} covariate columns, got {x.shape[1]}"
        )
    eta = np.full(x.shape[0], fit.coefficients[0]) if fit.has_intercept else np.zeros(x.shape[0])
    slopes = fit.coefficients[1:] if fit.has_intercept else fit.coefficients
    if q > 0:
        eta = eta + x @ slopes
    if offset is not None:
        offset = np.asarray(offset, dtype=float)
        if offset.shape[0] != x.shape[0]:
            raise DimensionMismatch("offset length must match x rows")
        eta = eta + offset
    return fit.family.inv_link(eta)


def score_residual(
    fit: GlmFit,
    x: np.ndarray | None,
    y: np.ndarray,
    weights: np.ndarray | None = None,
    offset: np.ndarray | None = None,
) -> np.ndarray:
    """Weighted score equations sum_i w_i c_ij (y_i - mu_i), intercept first.

    For any converged `fit_ml` output evaluated on its own training data the
    result is zero to ~1e-8 * n in every component; the intercept component
    is exactly the prediction unbiasedness condition.
    """
    y = np.asarray(y, dtype=float)
    x = _as_design(x, y.shape[0])
    mu = predict(fit, x, offset)
    if y.shape[0] != mu.shape[0]:
        raise DimensionMismatch("y length must match x rows")
    w = np.ones(y.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    design = np.column_stack([np.ones(y.shape[0]), x]) if fit.has_intercept else x
    return design.T @ (w * (y - mu))


def clamp_probabilities(p: np.ndarray, low: float = 0.01, high: float = 0.99):
    """Clamp probabilities into [low, high]; returns (clamped, count clamped).

    Used before inverting propensity scores, honoring the positivity bound.
    """
    p = np.asarray(p, dtype=float)
    out = np.clip(p, low, high)
    return out, int(np.count_nonzero(out != p))

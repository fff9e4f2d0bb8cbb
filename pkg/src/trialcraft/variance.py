"""Influence-function standard errors for every estimator family.

The standard error of a treatment-effect estimate is sqrt of (1/n times the
sample variance) of per-participant values of the form

    Z_i/pi (Y_i - h1_i) + h1_i  -  [ (1-Z_i)/(1-pi) (Y_i - h0_i) + h0_i ],

with variant-specific additions: cross-fitting with estimated per-fold
randomization probabilities adds fold-mean correction terms in (Z_i -
pi_k); the pooled strong-null model has the analogous pooled correction;
a parametrically estimated propensity adds a score correction built from
the logistic information matrix. Plugging in a *known* randomization
probability removes the correction terms entirely.

Sample variance uses the n-1 divisor throughout.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import FoldPlan
from .errors import DegenerateFold, DegeneratePi, LengthMismatch, Singular


@dataclass(frozen=True)
class InfluenceVector:
    values: np.ndarray
    centered: bool

    def center(self) -> "InfluenceVector":
        if self.centered:
            return self
        return InfluenceVector(self.values - self.values.mean(), True)


def se_from_values(values: np.ndarray) -> float:
    """sqrt( sample-variance(values) / n ); zero for constant values."""
    n = values.shape[0]
    if n < 2:
        raise LengthMismatch("need at least 2 values for a standard error")
    return math.sqrt(float(np.var(values, ddof=1)) / n)


def _check_pi(pi) -> np.ndarray:
    pi = np.asarray(pi, dtype=float)
    if np.any(pi <= 0.0) or np.any(pi >= 1.0):
        raise DegeneratePi("randomization probability must lie strictly in (0, 1)")
    return pi


def arm_values(y, z, pred, pi, arm: int) -> np.ndarray:
    """Per-participant AIPW value for one arm; `pi` may be a scalar or a
    per-participant vector (pointwise propensity)."""
    pi = _check_pi(pi)
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    pred = np.asarray(pred, dtype=float)
    if arm == 1:
        return z / pi * (y - pred) + pred
    return (1.0 - z) / (1.0 - pi) * (y - pred) + pred


def if_variance_simple(pred1, pred0, y, z, pi_hat):
    """Std. error for the no-splitting estimators (standardization,
    data-adaptive, TMLE, unadjusted); no correction terms."""
    v1 = arm_values(y, z, pred1, pi_hat, 1)
    v0 = arm_values(y, z, pred0, pi_hat, 0)
    values = v1 - v0
    return se_from_values(values), InfluenceVector(values, False)


def fold_pi_hat(z, folds: FoldPlan) -> np.ndarray:
    """Empirical per-fold randomization probabilities, indexed by fold."""
    z = np.asarray(z, dtype=float)
    pis = np.empty(folds.k + 1)
    pis[0] = np.nan
    for k in range(1, folds.k + 1):
        idx = folds.fold_indices(k)
        pik = float(z[idx].mean())
        if pik <= 0.0 or pik >= 1.0:
            raise DegenerateFold(
                f"fold {k} contains a single arm (pi_hat_k={pik:g}); "
                "use stratified folds"
            )
        pis[k] = pik
    return pis


def crossfit_values(y, z, pred1, pred0, folds: FoldPlan, known_pi=None):
    """Per-arm cross-fit influence values.

    With `known_pi` the true probability is plugged in and the correction
    terms are dropped; otherwise per-fold pi_hat_k is used together with the
    fold-mean corrections in (Z_i - pi_hat_k).
    Returns (v1, v0, pi_by_participant).
    """
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    pred1 = np.asarray(pred1, dtype=float)
    pred0 = np.asarray(pred0, dtype=float)
    n = y.shape[0]
    v1 = np.empty(n)
    v0 = np.empty(n)
    pi_i = np.empty(n)

    if known_pi is not None:
        pi = float(_check_pi(known_pi))
        pi_i[:] = pi
        v1[:] = arm_values(y, z, pred1, pi, 1)
        v0[:] = arm_values(y, z, pred0, pi, 0)
        return v1, v0, pi_i

    pis = fold_pi_hat(z, folds)
    for k in range(1, folds.k + 1):
        idx = folds.fold_indices(k)
        pik = pis[k]
        pi_i[idx] = pik
        base1 = arm_values(y[idx], z[idx], pred1[idx], pik, 1)
        base0 = arm_values(y[idx], z[idx], pred0[idx], pik, 0)
        m1 = float(np.mean(z[idx] / pik**2 * (y[idx] - pred1[idx])))
        m0 = float(np.mean((1 - z[idx]) / (1 - pik) ** 2 * (y[idx] - pred0[idx])))
        centered_z = z[idx] - pik
        v1[idx] = base1 - m1 * centered_z
        v0[idx] = base0 + m0 * centered_z
    return v1, v0, pi_i


def if_variance_crossfit(pred1, pred0, y, z, folds: FoldPlan, known_pi=None):
    v1, v0, _ = crossfit_values(y, z, pred1, pred0, folds, known_pi)
    values = v1 - v0
    return se_from_values(values), InfluenceVector(values, False)


def strong_null_values(y, z, pred, pi_hat, known: bool = False):
    """Per-arm values for the pooled strong-null estimator.

    Both arms share the same pooled prediction. With an estimated pi_hat the
    pooled-mean correction terms in (Z_i - pi_hat) are included; with a
    known randomization probability they are dropped.
    """
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    pred = np.asarray(pred, dtype=float)
    pi = float(_check_pi(pi_hat))
    v1 = arm_values(y, z, pred, pi, 1)
    v0 = arm_values(y, z, pred, pi, 0)
    if not known:
        m1 = float(np.mean(z / pi**2 * (y - pred)))
        m0 = float(np.mean((1 - z) / (1 - pi) ** 2 * (y - pred)))
        centered_z = z - pi
        v1 = v1 - m1 * centered_z
        v0 = v0 + m0 * centered_z
    return v1, v0


def if_variance_strong_null(pred, y, z, pi_hat, known: bool = False):
    """Std. error of the strong-null test statistic's numerator: 1/n times
    the sample variance of

      (Z_i - pi)/(pi(1-pi)) (Y_i - h_i)
        - mean_j[(Z_j/pi^2 + (1-Z_j)/(1-pi)^2)(Y_j - h_j)] (Z_i - pi).
    """
    v1, v0 = strong_null_values(y, z, pred, pi_hat, known)
    values = v1 - v0
    return se_from_values(values), InfluenceVector(values, False)


def parametric_ps_corrections(y, z, pred1, pred0, p_hat, ps_design, folds: FoldPlan | None):
    """Score-correction addends for a logistic propensity model.

    For participants of fold k (or the whole sample when `folds` is None),
    with x~ the propensity design row (intercept included),

        s_i = x~_i (Z_i - p_i)                      score at the fold MLE
        A   = -mean_j p_j (1-p_j) x~_j x~_j'        observed information
        c1  =  mean_j Z_j (Y_j - h1_j) (1-p_j)/p_j x~_j
        c0  =  mean_j (1-Z_j)(Y_j - h0_j) p_j/(1-p_j) x~_j

    and the arm-1 values gain +c1' A^{-1} s_i while the arm-0 values gain
    -c0' A^{-1} s_i. All means are taken within the fold whose propensity
    fit produced p_i, matching the per-fold estimation of the model.
    Returns (corr1, corr0).
    """
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    pred1 = np.asarray(pred1, dtype=float)
    pred0 = np.asarray(pred0, dtype=float)
    p_hat = _check_pi(p_hat)
    ps_design = np.asarray(ps_design, dtype=float)
    n = y.shape[0]
    corr1 = np.empty(n)
    corr0 = np.empty(n)

    if folds is None:
        groups = [np.arange(n)]
    else:
        groups = [folds.fold_indices(k) for k in range(1, folds.k + 1)]

    for idx in groups:
        xg = ps_design[idx]
        pg = p_hat[idx]
        zg = z[idx]
        info = pg * (1 - pg)
        a = -(xg * info[:, None]).T @ xg / idx.size
        try:
            np.linalg.cholesky(-a)
        except np.linalg.LinAlgError:
            raise Singular("singular propensity information matrix") from None
        c1 = (xg * (zg * (y[idx] - pred1[idx]) * (1 - pg) / pg)[:, None]).mean(axis=0)
        c0 = (xg * ((1 - zg) * (y[idx] - pred0[idx]) * pg / (1 - pg))[:, None]).mean(axis=0)
        scores = xg * (zg - pg)[:, None]
        a_inv_s = np.linalg.solve(a, scores.T).T
        corr1[idx] = a_inv_s @ c1
        corr0[idx] = -(a_inv_s @ c0)
    return corr1, corr0


def if_variance_parametric_ps(pred1, pred0, y, z, p_hat, ps_design, folds: FoldPlan | None):
    """Std. error for AIPW with a parametrically estimated propensity:
    pointwise p_i replaces pi and the score correction replaces the
    (Z_i - pi_hat) terms."""
    v1 = arm_values(y, z, pred1, p_hat, 1)
    v0 = arm_values(y, z, pred0, p_hat, 0)
    corr1, corr0 = parametric_ps_corrections(y, z, pred1, pred0, p_hat, ps_design, folds)
    values = (v1 + corr1) - (v0 + corr0)
    return se_from_values(values), InfluenceVector(values, False)

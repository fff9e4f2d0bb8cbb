"""Point estimators of the marginal treatment effect theta = E(Y|Z=1) -
E(Y|Z=0), each returning per-participant influence contributions so that
standard errors and contrast transforms are uniform across methods.

The family:

  unadjusted          difference in sample means
  standardization     per-arm canonical ML GLM, predict everyone, average
  data_adaptive       per-arm selection (lasso / stepwise) + ML refit
  tmle                data-adaptive initial fit + one-parameter offset update
  crossfit_aipw       K-fold cross-fitting with arbitrary learners
  cvtmle              cross-fitted initial predictions, pooled update
  strong_null         one pooled covariate-only model, no splitting
  crossfit_aipw_parametric_ps
                      cross-fit AIPW with per-fold logistic propensity

Standardization-type estimators coincide with their AIPW form because the
canonical ML fit zeroes the within-arm residual sums; cross-fit estimators
use the explicit AIPW average because that identity no longer holds under
sample splitting.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import variance
from .data import FeatureExpansion, FoldPlan, TrialDataset, check_complete, expand_features
from .errors import ConfigError, DegenerateFold, DomainError, EstimationError
from .glm import (
    GlmFamily,
    GlmFit,
    clamp_probabilities,
    fit_least_squares,
    fit_ml,
    fit_ml_design,
    predict,
)
from .selection import SelectionResult, lasso_cv, stepwise_aic

Z_CRIT = 1.959964
TMLE_PRED_CLIP = 1e-6
MIN_FOLDS, MAX_FOLDS = 2, 10


@dataclass(frozen=True)
class PiSpec:
    """How the randomization probability enters an estimator.

    known(pi)        plug in the design value; correction terms drop out
    estimated()      overall empirical share of treated (no splitting)
    per_fold()       per-fold empirical share (cross-fit estimators)
    parametric(cols) logistic model on pre-specified columns, no selection
    """

    mode: str
    value: float | None = None
    ps_columns: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "ps_columns", tuple(self.ps_columns))
        if self.mode not in ("known", "estimated_overall", "estimated_per_fold", "parametric"):
            raise ConfigError(f"unknown pi mode {self.mode!r}")
        if self.mode == "known":
            if self.value is None:
                raise ConfigError("known pi requires a value")
            if not 0.01 <= self.value <= 0.99:
                raise ConfigError(
                    f"known pi={self.value} violates the positivity bound [0.01, 0.99]"
                )
        if self.mode == "parametric" and self.value is not None:
            raise ConfigError("parametric pi carries columns, not a value")

    @classmethod
    def known(cls, pi: float) -> "PiSpec":
        return cls("known", value=float(pi))

    @classmethod
    def estimated(cls) -> "PiSpec":
        return cls("estimated_overall")

    @classmethod
    def per_fold(cls) -> "PiSpec":
        return cls("estimated_per_fold")

    @classmethod
    def parametric(cls, ps_columns) -> "PiSpec":
        return cls("parametric", ps_columns=tuple(ps_columns))


@dataclass(frozen=True)
class EstimateResult:
    """theta_hat = mu1_hat - mu0_hat exactly; if_mu1/if_mu0 are the
    per-participant influence contributions, centered so each has mean zero;
    the 95% interval is Wald with the normal quantile."""

    theta_hat: float
    mu1_hat: float
    mu0_hat: float
    if_mu1: np.ndarray
    if_mu0: np.ndarray
    se: float
    ci_low: float
    ci_high: float
    method: str
    diagnostics: dict = field(default_factory=dict)


def _package(method, mu1, mu0, v1, v0, diagnostics, variance_factor: float = 1.0):
    mu1 = float(mu1)
    mu0 = float(mu0)
    theta = mu1 - mu0
    se = variance.se_from_values(v1 - v0) * math.sqrt(variance_factor)
    half = Z_CRIT * se
    return EstimateResult(
        theta_hat=theta,
        mu1_hat=mu1,
        mu0_hat=mu0,
        if_mu1=v1 - v1.mean(),
        if_mu0=v0 - v0.mean(),
        se=se,
        ci_low=theta - half,
        ci_high=theta + half,
        method=method,
        diagnostics=diagnostics,
    )


def _overall_pi(d: TrialDataset, pi: PiSpec | None) -> float:
    if pi is None or pi.mode == "estimated_overall":
        return d.n_treated / d.n
    if pi.mode == "known":
        return float(pi.value)
    raise ConfigError(f"pi mode {pi.mode!r} is not valid for this estimator")


def _small_sample_factor(n1, n0, p1, p0) -> float:
    """Variance inflation [(n0-p0-1)^-1 + (n1-p1-1)^-1] / [(n0-1)^-1 + (n1-1)^-1]
    with p_z the non-intercept parameter count of the arm-z fit."""
    if n1 - p1 - 1 <= 0 or n0 - p0 - 1 <= 0:
        raise EstimationError("too few residual degrees of freedom for the small-sample factor")
    return ((1 / (n0 - p0 - 1)) + (1 / (n1 - p1 - 1))) / ((1 / (n0 - 1)) + (1 / (n1 - 1)))


def _learner_seed(seed: int, *key) -> int:
    return int(np.random.SeedSequence((seed, *key)).generate_state(1, np.uint64)[0] >> 1)


# --- propensity ----------------------------------------------------------

def fit_propensity(d: TrialDataset, ps_columns) -> GlmFit:
    """Logistic fit of the arm indicator on pre-specified columns (with
    intercept). No selection is allowed for the propensity model."""
    check_complete(d)
    ps_columns = tuple(ps_columns)
    return fit_ml(d.columns(ps_columns), d.z, GlmFamily.BINOMIAL, column_names=ps_columns)


def propensity_scores(fit: GlmFit, d: TrialDataset):
    """Fitted treatment probabilities, clamped into [0.01, 0.99].
    Returns (p_hat, clamp_count)."""
    raw = predict(fit, d.columns(fit.column_names))
    return clamp_probabilities(raw)


# --- unadjusted / standardization ----------------------------------------

def estimate_unadjusted(
    d: TrialDataset,
    pi: PiSpec | None = None,
) -> EstimateResult:
    """Difference in sample means, with influence contributions that treat
    the arm means as the (constant) outcome predictions."""
    check_complete(d)
    pi_hat = _overall_pi(d, pi)
    ybar1 = float(d.y[d.z == 1].mean())
    ybar0 = float(d.y[d.z == 0].mean())
    pred1 = np.full(d.n, ybar1)
    pred0 = np.full(d.n, ybar0)
    v1 = variance.arm_values(d.y, d.z, pred1, pi_hat, 1)
    v0 = variance.arm_values(d.y, d.z, pred0, pi_hat, 0)
    return _package(
        "unadjusted", ybar1, ybar0, v1, v0,
        {"pi_hat": pi_hat, "pred1": pred1, "pred0": pred0},
    )


def _arm_rows(d: TrialDataset, arm: int) -> np.ndarray:
    return np.flatnonzero(d.z == arm)


def estimate_standardization(
    d: TrialDataset,
    spec: FeatureExpansion | None = None,
    family: GlmFamily = GlmFamily.GAUSSIAN,
    pi: PiSpec | None = None,
    small_sample_correction: bool = False,
) -> EstimateResult:
    """Per-arm canonical ML fit on all (expanded) covariates, predict every
    participant under each arm, average the predictions."""
    check_complete(d)
    work = expand_features(d, spec) if spec is not None else d
    pi_hat = _overall_pi(d, pi)
    preds = {}
    for arm in (1, 0):
        rows = _arm_rows(d, arm)
        fit = fit_ml(work.x[rows], work.y[rows], family, column_names=work.column_names)
        preds[arm] = predict(fit, work.x)
    mu1 = float(preds[1].mean())
    mu0 = float(preds[0].mean())
    v1 = variance.arm_values(d.y, d.z, preds[1], pi_hat, 1)
    v0 = variance.arm_values(d.y, d.z, preds[0], pi_hat, 0)
    factor = 1.0
    if small_sample_correction:
        factor = _small_sample_factor(
            d.n_treated, d.n_control, work.p, work.p
        )
    return _package(
        "standardization", mu1, mu0, v1, v0,
        {
            "pi_hat": pi_hat,
            "pred1": preds[1],
            "pred0": preds[0],
            "columns": list(work.column_names),
            "small_sample_factor": factor,
        },
        variance_factor=factor,
    )


# --- data-adaptive (selection + refit) ------------------------------------

def _select_arm(x_arm, y_arm, family, method, seed, names, selection_k_cv, lambda_rule, max_terms):
    if method == "lasso_cv":
        return lasso_cv(
            x_arm, y_arm, family, k_cv=selection_k_cv, seed=seed,
            lambda_rule=lambda_rule, column_names=names,
        )
    if method == "stepwise_aic":
        return stepwise_aic(x_arm, y_arm, family, max_terms=max_terms, column_names=names)
    if method == "none":
        usable = tuple(
            name for j, name in enumerate(names) if np.std(x_arm[:, j]) > 0
        )
        return SelectionResult(usable, "none")
    raise ConfigError(f"unknown selection method {method!r}")


def _fit_selected(work, rows, family, selection, forced, weights, eem):
    """Step-1b refit on the selection (ML, or least squares in EEM mode)."""
    chosen: list[str] = []
    for name in tuple(selection.selected_columns) + tuple(forced):
        if name not in chosen:
            chosen.append(name)
    idx = [work.column_names.index(name) for name in chosen]
    x_fit = work.x[rows][:, idx]
    if eem:
        fit = fit_least_squares(x_fit, work.y[rows], family, weights, column_names=tuple(chosen))
    else:
        fit = fit_ml(x_fit, work.y[rows], family, weights, column_names=tuple(chosen))
    pred_all = predict(fit, work.x[:, idx])
    return fit, pred_all, chosen


def _data_adaptive_parts(
    d, spec, family, method, forced, pi, weights_from_ps, eem, seed,
    selection_k_cv, lambda_rule, max_terms,
):
    check_complete(d)
    work = expand_features(d, spec) if spec is not None else d
    p_hat = None
    clamp_count = 0
    if weights_from_ps:
        if pi is None or pi.mode != "parametric":
            raise ConfigError("weights_from_ps requires pi mode 'parametric'")
        if eem:
            raise ConfigError(
                "EEM mode with a parametric propensity is not supported"
            )
        ps_fit = fit_propensity(d, pi.ps_columns)
        p_hat, clamp_count = propensity_scores(ps_fit, d)
    elif pi is not None and pi.mode == "parametric":
        raise ConfigError("parametric pi requires weights_from_ps=True here")

    selections = {}
    preds = {}
    fits = {}
    warnings: list[str] = []
    for arm in (1, 0):
        rows = _arm_rows(d, arm)
        sel = _select_arm(
            work.x[rows], work.y[rows], family, method,
            _learner_seed(seed, 901, arm), work.column_names,
            selection_k_cv, lambda_rule, max_terms,
        )
        selections[arm] = sel
        warnings.extend(sel.warnings)
        if p_hat is not None:
            w_rows = 1.0 / p_hat[rows] if arm == 1 else 1.0 / (1.0 - p_hat[rows])
        else:
            w_rows = None
        fit, pred_all, chosen = _fit_selected(work, rows, family, sel, forced, w_rows, eem)
        fits[arm] = (fit, chosen)
        preds[arm] = pred_all
    return work, selections, preds, fits, p_hat, clamp_count, warnings


def estimate_data_adaptive(
    d: TrialDataset,
    spec: FeatureExpansion | None = None,
    family: GlmFamily = GlmFamily.GAUSSIAN,
    method: str = "lasso_cv",
    forced=(),
    pi: PiSpec | None = None,
    weights_from_ps: bool = False,
    eem: bool = False,
    seed: int = 0,
    small_sample_correction: bool = False,
    selection_k_cv: int = 5,
    lambda_rule: str = "1se",
    max_terms: int | None = None,
) -> EstimateResult:
    """Per-arm selection (Step 1a) followed by an unpenalized canonical ML
    refit on the selected plus forced columns (Step 1b), then
    standardization over all participants.

    With `weights_from_ps` the refit is weighted by the inverse fitted
    propensity and the influence values use the pointwise propensities. In
    EEM mode the refit minimizes squared error instead, and the point
    estimate switches to the explicit AIPW average because the score-zero
    identity is no longer guaranteed.
    """
    work, selections, preds, fits, p_hat, clamp_count, warnings = _data_adaptive_parts(
        d, spec, family, method, forced, pi, weights_from_ps, eem, seed,
        selection_k_cv, lambda_rule, max_terms,
    )
    if p_hat is not None:
        pi_for_if = p_hat
        pi_report = None
    else:
        pi_for_if = _overall_pi(d, pi)
        pi_report = pi_for_if
    v1 = variance.arm_values(d.y, d.z, preds[1], pi_for_if, 1)
    v0 = variance.arm_values(d.y, d.z, preds[0], pi_for_if, 0)
    if eem:
        mu1, mu0 = float(v1.mean()), float(v0.mean())
    else:
        mu1, mu0 = float(preds[1].mean()), float(preds[0].mean())
    factor = 1.0
    if small_sample_correction and not eem:
        factor = _small_sample_factor(
            d.n_treated, d.n_control,
            len(fits[1][1]), len(fits[0][1]),
        )
    diagnostics = {
        "selected_1": list(selections[1].selected_columns),
        "selected_0": list(selections[0].selected_columns),
        "refit_columns_1": fits[1][1],
        "refit_columns_0": fits[0][1],
        "pi_hat": pi_report,
        "pred1": preds[1],
        "pred0": preds[0],
        "propensity_clamped": clamp_count,
        "eem": eem,
        "warnings": warnings,
        "small_sample_factor": factor,
    }
    method_name = "data_adaptive" + ("_eem" if eem else "")
    return _package(method_name, mu1, mu0, v1, v0, diagnostics, variance_factor=factor)


# --- TMLE ------------------------------------------------------------------

def tmle_update(init_pred_arm, y_arm, family, clever_arm=None):
    """One-parameter offset update enforcing the arm score equation.

    Returns epsilon. Without a clever covariate this is an intercept-only
    ML GLM with offset g(init); with one it is a no-intercept ML GLM on the
    clever covariate with the same offset.
    """
    init = np.asarray(init_pred_arm, dtype=float)
    if family is GlmFamily.BINOMIAL:
        init = np.clip(init, TMLE_PRED_CLIP, 1.0 - TMLE_PRED_CLIP)
    offset = family.link(init)
    if clever_arm is None:
        fit = fit_ml(None, y_arm, family, offset=offset)
        return float(fit.coefficients[0])
    fit = fit_ml_design(
        np.asarray(clever_arm, dtype=float).reshape(-1, 1), y_arm, family,
        offset=offset, column_names=("clever",), has_intercept=False,
    )
    return float(fit.coefficients[0])


def _apply_update(init_pred, family, eps, clever=None):
    init = np.asarray(init_pred, dtype=float)
    if family is GlmFamily.BINOMIAL:
        init = np.clip(init, TMLE_PRED_CLIP, 1.0 - TMLE_PRED_CLIP)
    shift = eps if clever is None else eps * np.asarray(clever, dtype=float)
    return family.inv_link(family.link(init) + shift)


def estimate_tmle(
    d: TrialDataset,
    spec: FeatureExpansion | None = None,
    family: GlmFamily = GlmFamily.GAUSSIAN,
    method: str = "lasso_cv",
    forced=(),
    pi: PiSpec | None = None,
    eem: bool = False,
    seed: int = 0,
    small_sample_correction: bool = False,
    selection_k_cv: int = 5,
    lambda_rule: str = "1se",
    max_terms: int | None = None,
) -> EstimateResult:
    """Targeted update of the data-adaptive initial fit.

    When the initial fit is itself the arm's canonical ML fit the update is
    a numerical no-op (epsilon ~ 0) and the estimate equals the
    data-adaptive one; it becomes material under EEM-mode (least squares)
    initial fits, clamped binomial predictions, or a parametric propensity,
    where the clever covariate 1/p(X) (arm 0: 1/(1-p(X))) enters a
    no-intercept update instead.
    """
    parametric = pi is not None and pi.mode == "parametric"
    work, selections, preds, fits, p_hat, clamp_count, warnings = _data_adaptive_parts(
        d, spec, family, method, forced,
        None if parametric else pi,
        weights_from_ps=False, eem=eem, seed=seed,
        selection_k_cv=selection_k_cv, lambda_rule=lambda_rule, max_terms=max_terms,
    )
    if parametric:
        ps_fit = fit_propensity(d, pi.ps_columns)
        p_hat, clamp_count = propensity_scores(ps_fit, d)

    updated = {}
    epsilons = {}
    for arm in (1, 0):
        rows = _arm_rows(d, arm)
        if parametric:
            clever_all = 1.0 / p_hat if arm == 1 else 1.0 / (1.0 - p_hat)
            eps = tmle_update(preds[arm][rows], work.y[rows], family, clever_all[rows])
            updated[arm] = _apply_update(preds[arm], family, eps, clever_all)
        else:
            eps = tmle_update(preds[arm][rows], work.y[rows], family)
            updated[arm] = _apply_update(preds[arm], family, eps)
        epsilons[arm] = eps

    mu1 = float(updated[1].mean())
    mu0 = float(updated[0].mean())
    pi_for_if = p_hat if parametric else _overall_pi(d, pi)
    v1 = variance.arm_values(d.y, d.z, updated[1], pi_for_if, 1)
    v0 = variance.arm_values(d.y, d.z, updated[0], pi_for_if, 0)
    factor = 1.0
    if small_sample_correction:
        factor = _small_sample_factor(
            d.n_treated, d.n_control, len(fits[1][1]), len(fits[0][1])
        )
    diagnostics = {
        "selected_1": list(selections[1].selected_columns),
        "selected_0": list(selections[0].selected_columns),
        "epsilon_1": epsilons[1],
        "epsilon_0": epsilons[0],
        "pi_hat": None if parametric else pi_for_if,
        "pred1": updated[1],
        "pred0": updated[0],
        "propensity_clamped": clamp_count,
        "eem": eem,
        "warnings": warnings,
        "small_sample_factor": factor,
    }
    return _package("tmle", mu1, mu0, v1, v0, diagnostics, variance_factor=factor)


# --- cross-fitting ---------------------------------------------------------

def _validate_folds(d: TrialDataset, folds: FoldPlan) -> None:
    if folds.n != d.n:
        raise ConfigError("fold plan length does not match the dataset")
    if not MIN_FOLDS <= folds.k <= MAX_FOLDS:
        raise ConfigError(f"fold count must lie in [{MIN_FOLDS}, {MAX_FOLDS}], got {folds.k}")


def _crossfit_predictions(d: TrialDataset, work_x, learner, folds: FoldPlan, family, seed):
    """Out-of-fold predictions per arm: fold k's rows are predicted by
    learners trained on the complement, separately per arm."""
    n = d.n
    pred1 = np.empty(n)
    pred0 = np.empty(n)
    for k in range(1, folds.k + 1):
        test = folds.fold_indices(k)
        train = folds.complement_indices(k)
        z_train = d.z[train]
        if z_train.sum() < 1 or (1 - z_train).sum() < 1:
            raise DegenerateFold(
                f"training complement of fold {k} lacks an arm; use stratified folds"
            )
        for arm, out in ((1, pred1), (0, pred0)):
            rows = train[z_train == arm]
            predictor = learner.train(
                work_x[rows], d.y[rows], family, seed=_learner_seed(seed, k, arm)
            )
            out[test] = predictor.predict(work_x[test])
    return pred1, pred0


def estimate_crossfit_aipw(
    d: TrialDataset,
    learner,
    folds: FoldPlan,
    pi: PiSpec | None = None,
    family: GlmFamily = GlmFamily.GAUSSIAN,
    seed: int = 0,
) -> EstimateResult:
    """K-fold cross-fit AIPW: per fold, average the augmented values using
    that fold's empirical randomization probability (or the known one), then
    average the K fold estimates."""
    check_complete(d)
    _validate_folds(d, folds)
    if pi is None:
        pi = PiSpec.per_fold()
    if pi.mode not in ("known", "estimated_per_fold"):
        raise ConfigError(
            "cross-fit AIPW supports pi modes 'known' and 'estimated_per_fold'; "
            "use estimate_crossfit_aipw_parametric_ps for a parametric propensity"
        )
    pred1, pred0 = _crossfit_predictions(d, d.x, learner, folds, family, seed)

    known = pi.value if pi.mode == "known" else None
    mu1_folds = np.empty(folds.k)
    mu0_folds = np.empty(folds.k)
    pi_by_fold = {}
    for k in range(1, folds.k + 1):
        idx = folds.fold_indices(k)
        if known is not None:
            pik = known
        else:
            pik = float(d.z[idx].mean())
            if pik <= 0.0 or pik >= 1.0:
                raise DegenerateFold(
                    f"fold {k} contains a single arm; use stratified folds"
                )
        pi_by_fold[k] = pik
        mu1_folds[k - 1] = variance.arm_values(d.y[idx], d.z[idx], pred1[idx], pik, 1).mean()
        mu0_folds[k - 1] = variance.arm_values(d.y[idx], d.z[idx], pred0[idx], pik, 0).mean()

    v1, v0, _ = variance.crossfit_values(d.y, d.z, pred1, pred0, folds, known_pi=known)
    diagnostics = {
        "learner": getattr(learner, "name", type(learner).__name__),
        "fold_seed": folds.seed,
        "k": folds.k,
        "pi_by_fold": pi_by_fold,
        "pred1": pred1,
        "pred0": pred0,
        "theta_by_fold": (mu1_folds - mu0_folds).tolist(),
    }
    return _package(
        "crossfit_aipw", mu1_folds.mean(), mu0_folds.mean(), v1, v0, diagnostics
    )


def estimate_cvtmle(
    d: TrialDataset,
    learner,
    folds: FoldPlan,
    family: GlmFamily = GlmFamily.GAUSSIAN,
    pi: PiSpec | None = None,
    seed: int = 0,
) -> EstimateResult:
    """Cross-validated TMLE: out-of-fold initial predictions, one pooled
    epsilon per arm fitted by an intercept-only offset GLM over that arm,
    fold-averaged means of the updated predictions. The update restores the
    pooled score equation, so no correction terms enter the variance."""
    check_complete(d)
    _validate_folds(d, folds)
    init1, init0 = _crossfit_predictions(d, d.x, learner, folds, family, seed)

    updated = {}
    epsilons = {}
    for arm, init in ((1, init1), (0, init0)):
        rows = _arm_rows(d, arm)
        eps = tmle_update(init[rows], d.y[rows], family)
        updated[arm] = _apply_update(init, family, eps)
        epsilons[arm] = eps

    mu1_folds = np.empty(folds.k)
    mu0_folds = np.empty(folds.k)
    for k in range(1, folds.k + 1):
        idx = folds.fold_indices(k)
        mu1_folds[k - 1] = updated[1][idx].mean()
        mu0_folds[k - 1] = updated[0][idx].mean()

    pi_hat = _overall_pi(d, pi)
    v1 = variance.arm_values(d.y, d.z, updated[1], pi_hat, 1)
    v0 = variance.arm_values(d.y, d.z, updated[0], pi_hat, 0)
    diagnostics = {
        "learner": getattr(learner, "name", type(learner).__name__),
        "fold_seed": folds.seed,
        "k": folds.k,
        "epsilon_1": epsilons[1],
        "epsilon_0": epsilons[0],
        "pi_hat": pi_hat,
        "pred1": updated[1],
        "pred0": updated[0],
    }
    return _package("cvtmle", mu1_folds.mean(), mu0_folds.mean(), v1, v0, diagnostics)


# --- strong null -----------------------------------------------------------

def estimate_strong_null(
    d: TrialDataset,
    model=None,
    family: GlmFamily = GlmFamily.GAUSSIAN,
    pi: PiSpec | None = None,
    seed: int = 0,
) -> EstimateResult:
    """Test of the strong null (Z independent of (Y, X)): one pooled model
    of the outcome on covariates only, fit to ALL participants, shared by
    both arms. Any learner may be used, without sample splitting.

    `model` is a Learner, a FeatureExpansion (pooled canonical ML GLM on the
    expanded columns), or None (pooled main-effects GLM).
    """
    check_complete(d)
    if model is None:
        model = FeatureExpansion()
    if isinstance(model, FeatureExpansion):
        work = expand_features(d, model)
        fit = fit_ml(work.x, work.y, family, column_names=work.column_names)
        pred = predict(fit, work.x)
        model_name = "pooled_glm"
    else:
        predictor = model.train(d.x, d.y, family, seed=_learner_seed(seed, 902))
        pred = np.asarray(predictor.predict(d.x), dtype=float)
        model_name = getattr(model, "name", type(model).__name__)

    known = pi is not None and pi.mode == "known"
    pi_hat = _overall_pi(d, pi)
    mu1 = float(variance.arm_values(d.y, d.z, pred, pi_hat, 1).mean())
    mu0 = float(variance.arm_values(d.y, d.z, pred, pi_hat, 0).mean())
    v1, v0 = variance.strong_null_values(d.y, d.z, pred, pi_hat, known=known)
    result = _package(
        "strong_null", mu1, mu0, v1, v0,
        {"model": model_name, "pi_hat": pi_hat, "pred": pred},
    )
    z_stat = result.theta_hat / result.se if result.se > 0 else math.inf * np.sign(result.theta_hat)
    result.diagnostics["z_statistic"] = float(z_stat)
    return result


# --- parametric propensity cross-fit ----------------------------------------

def estimate_crossfit_aipw_parametric_ps(
    d: TrialDataset,
    learner,
    folds: FoldPlan,
    ps_columns,
    family: GlmFamily = GlmFamily.GAUSSIAN,
    seed: int = 0,
) -> EstimateResult:
    """Cross-fit AIPW with a logistic propensity model fitted within each
    fold (outcome learners still train on the complement). The influence
    values add the propensity-score correction c'A^{-1}s built within each
    fold; with no propensity columns this reduces exactly to the per-fold
    empirical probability estimator."""
    check_complete(d)
    _validate_folds(d, folds)
    ps_columns = tuple(ps_columns)
    pred1, pred0 = _crossfit_predictions(d, d.x, learner, folds, family, seed)

    n = d.n
    p_hat = np.empty(n)
    clamp_count = 0
    ps_design = np.column_stack([np.ones(n), d.columns(ps_columns)])
    for k in range(1, folds.k + 1):
        idx = folds.fold_indices(k)
        zk = d.z[idx]
        if zk.sum() < 1 or (1 - zk).sum() < 1:
            raise DegenerateFold(f"fold {k} contains a single arm; use stratified folds")
        cols = d.columns(ps_columns)[idx]
        fit = fit_ml(cols, zk, GlmFamily.BINOMIAL, column_names=ps_columns)
        raw = predict(fit, cols)
        clamped, c = clamp_probabilities(raw)
        p_hat[idx] = clamped
        clamp_count += c

    mu1_folds = np.empty(folds.k)
    mu0_folds = np.empty(folds.k)
    for k in range(1, folds.k + 1):
        idx = folds.fold_indices(k)
        mu1_folds[k - 1] = variance.arm_values(d.y[idx], d.z[idx], pred1[idx], p_hat[idx], 1).mean()
        mu0_folds[k - 1] = variance.arm_values(d.y[idx], d.z[idx], pred0[idx], p_hat[idx], 0).mean()

    v1 = variance.arm_values(d.y, d.z, pred1, p_hat, 1)
    v0 = variance.arm_values(d.y, d.z, pred0, p_hat, 0)
    corr1, corr0 = variance.parametric_ps_corrections(
        d.y, d.z, pred1, pred0, p_hat, ps_design, folds
    )
    diagnostics = {
        "learner": getattr(learner, "name", type(learner).__name__),
        "fold_seed": folds.seed,
        "k": folds.k,
        "ps_columns": list(ps_columns),
        "propensity_clamped": clamp_count,
        "pred1": pred1,
        "pred0": pred0,
        "p_hat": p_hat,
    }
    return _package(
        "crossfit_aipw_parametric_ps",
        mu1_folds.mean(), mu0_folds.mean(), v1 + corr1, v0 + corr0, diagnostics,
    )


# --- contrasts ---------------------------------------------------------------

CONTRASTS = ("risk_difference", "log_risk_ratio", "log_odds_ratio")


def transform_contrast(r: EstimateResult, kind: str) -> EstimateResult:
    """Delta-method transform of a difference-in-means result onto the log
    risk-ratio or log odds-ratio scale. `risk_difference` is the identity."""
    if kind not in CONTRASTS:
        raise ConfigError(f"unknown contrast {kind!r}")
    if kind == "risk_difference":
        diagnostics = dict(r.diagnostics)
        diagnostics["contrast"] = kind
        return EstimateResult(
            r.theta_hat, r.mu1_hat, r.mu0_hat, r.if_mu1, r.if_mu0,
            r.se, r.ci_low, r.ci_high, f"{r.method}:{kind}", diagnostics,
        )
    mu1, mu0 = r.mu1_hat, r.mu0_hat
    if kind == "log_risk_ratio":
        if mu1 <= 0 or mu0 <= 0:
            raise DomainError("risk ratio needs strictly positive arm means")
        point = math.log(mu1) - math.log(mu0)
        grad1, grad0 = 1.0 / mu1, 1.0 / mu0
    else:
        if not (0 < mu1 < 1 and 0 < mu0 < 1):
            raise DomainError("odds ratio needs arm means strictly inside (0, 1)")
        point = math.log(mu1 / (1 - mu1)) - math.log(mu0 / (1 - mu0))
        grad1 = 1.0 / (mu1 * (1 - mu1))
        grad0 = 1.0 / (mu0 * (1 - mu0))
    values = grad1 * r.if_mu1 - grad0 * r.if_mu0
    se = variance.se_from_values(values)
    half = Z_CRIT * se
    diagnostics = dict(r.diagnostics)
    diagnostics["contrast"] = kind
    return EstimateResult(
        point, mu1, mu0, r.if_mu1, r.if_mu0, se,
        point - half, point + half, f"{r.method}:{kind}", diagnostics,
    )

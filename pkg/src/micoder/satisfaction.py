"""Satisfaction analysis: design matrix, weighted logistic fit, and report.

One row per rated conversation: counts of the 16 non-catch-all codes over
listener utterances, member/listener age, and the member's past average
rating (leave-current-out; global mean when the member has no other rated
conversation). Conversations missing a rating or either age are excluded
and counted.

The fit maximizes the inverse-class-frequency-weighted log-likelihood by
iteratively reweighted least squares, with standard errors from the
inverse observed information at the optimum and two-sided Wald p-values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Collection, Mapping, Sequence

import numpy as np
from scipy.special import erfc

from .codes import COVARIATE_CODES, MiCode, SatisfactionClass
from .corpus import Corpus, SpeakerRole, binarize_rating

CONTROL_NAMES = ("member_age", "listener_age", "member_past_avg_rating")
CONTROL_DISPLAY = {
    "member_age": "Member Age",
    "listener_age": "Listener Age",
    "member_past_avg_rating": "Member Past Average Rating",
}
STAR_LEGEND = "***p < 0.001; **p<0.01; *p<0.05 ⊙p<0.1"

MAX_ITER = 100
CONVERGENCE_TOL = 1e-8
SEPARATION_RIDGE = 1e-6
_MAX_ETA = 35.0


class SeparationError(RuntimeError):
    """Perfect separation that even the ridge fallback cannot resolve."""


@dataclass(frozen=True)
class DesignRow:
    conversation_id: str
    counts: dict[MiCode, int]  # the 16 covariate codes
    member_age: float
    listener_age: float
    member_past_avg_rating: float
    outcome: SatisfactionClass


@dataclass(frozen=True)
class DesignResult:
    rows: tuple[DesignRow, ...]
    excluded_no_rating: int
    excluded_missing_age: int
    global_mean_rating: float


@dataclass(frozen=True)
class WeightVector:
    """Per-class observation weights w_c = N_total / (2 * N_c)."""

    satisfactory: float
    unsatisfactory: float

    def for_outcome(self, outcome: SatisfactionClass) -> float:
        if outcome is SatisfactionClass.SATISFACTORY:
            return self.satisfactory
        return self.unsatisfactory


@dataclass(frozen=True)
class RegressionFit:
    names: tuple[str, ...]  # intercept first
    coefficients: np.ndarray
    standard_errors: np.ndarray
    z_scores: np.ndarray
    p_values: np.ndarray
    odds_ratios: np.ndarray
    aic: float
    log_likelihood: float
    weights: WeightVector | None
    iterations: int
    converged: bool
    ridge_used: bool = False
    dropped: tuple[str, ...] = ()
    n_rows: int = 0

    def coefficient(self, name: str) -> float:
        return float(self.coefficients[self.names.index(name)])

    def p_value(self, name: str) -> float:
        return float(self.p_values[self.names.index(name)])


def build_design(
    corpus: Corpus,
    labels: Mapping[str, Collection[MiCode]],
    temporal_past_avg: bool = False,
) -> DesignResult:
    """Assemble regression rows from a labeled corpus.

    ``labels`` maps utterance_id to the codes assigned to it. With
    ``temporal_past_avg`` the control uses only conversations whose first
    utterance precedes the current conversation's, rather than all other
    rated conversations.
    """
    rated = [c for c in corpus if c.rating is not None]
    excluded_no_rating = len(corpus) - len(rated)
    ratings = [c.rating for c in rated]
    global_mean = float(np.mean(ratings)) if ratings else 0.0

    by_member: dict[str, list] = {}
    for conv in rated:
        by_member.setdefault(conv.member_id, []).append(conv)

    def conv_time(conv):
        return conv.utterances[0].timestamp if conv.utterances else None

    rows: list[DesignRow] = []
    excluded_missing_age = 0
    for conv in rated:
        if conv.member_age is None or conv.listener_age is None:
            excluded_missing_age += 1
            continue
        others = [c for c in by_member[conv.member_id] if c.conversation_id != conv.conversation_id]
        if temporal_past_avg:
            now = conv_time(conv)
            others = [
                c
                for c in others
                if conv_time(c) is not None and now is not None and conv_time(c) < now
            ]
        past_avg = float(np.mean([c.rating for c in others])) if others else global_mean

        counts = {code: 0 for code in COVARIATE_CODES}
        for utt in conv.utterances:
            if utt.speaker is not SpeakerRole.LISTENER:
                continue
            for code in labels.get(utt.utterance_id, ()):
                if code in counts:
                    counts[code] += 1
        rows.append(
            DesignRow(
                conversation_id=conv.conversation_id,
                counts=counts,
                member_age=float(conv.member_age),
                listener_age=float(conv.listener_age),
                member_past_avg_rating=past_avg,
                outcome=binarize_rating(conv.rating),
            )
        )
    return DesignResult(
        rows=tuple(rows),
        excluded_no_rating=excluded_no_rating,
        excluded_missing_age=excluded_missing_age,
        global_mean_rating=global_mean,
    )


def class_weights(rows: Sequence[DesignRow]) -> WeightVector:
    """Inverse-class-frequency weights; balanced data gets unit weights."""
    n_sat = sum(1 for r in rows if r.outcome is SatisfactionClass.SATISFACTORY)
    n_unsat = len(rows) - n_sat
    if n_sat == 0 or n_unsat == 0:
        raise ValueError("both outcome classes must be present to weight them")
    n = len(rows)
    return WeightVector(satisfactory=n / (2.0 * n_sat), unsatisfactory=n / (2.0 * n_unsat))


def design_matrix(rows: Sequence[DesignRow]) -> tuple[np.ndarray, np.ndarray, tuple[str, ...]]:
    """Covariate matrix (no intercept), outcome vector, and covariate names
    in report order: the 16 codes then the three controls."""
    names = tuple(code.value for code in COVARIATE_CODES) + CONTROL_NAMES
    X = np.empty((len(rows), len(names)))
    y = np.empty(len(rows))
    for i, row in enumerate(rows):
        for j, code in enumerate(COVARIATE_CODES):
            X[i, j] = row.counts.get(code, 0)
        X[i, len(COVARIATE_CODES)] = row.member_age
        X[i, len(COVARIATE_CODES) + 1] = row.listener_age
        X[i, len(COVARIATE_CODES) + 2] = row.member_past_avg_rating
        y[i] = 1.0 if row.outcome is SatisfactionClass.SATISFACTORY else 0.0
    return X, y, names


def _sigmoid(eta: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(eta, -_MAX_ETA, _MAX_ETA)))


def _weighted_loglik(X: np.ndarray, y: np.ndarray, w: np.ndarray, beta: np.ndarray) -> float:
    eta = np.clip(X @ beta, -_MAX_ETA, _MAX_ETA)
    # y*log(p) + (1-y)*log(1-p) = y*eta - log(1+exp(eta))
    return float(np.sum(w * (y * eta - np.logaddexp(0.0, eta))))


def _irls(
    X: np.ndarray, y: np.ndarray, w: np.ndarray, ridge: float
) -> tuple[np.ndarray, np.ndarray, int, bool]:
    """Returns (beta, information matrix, iterations, converged)."""
    n, p = X.shape
    beta = np.zeros(p)
    info = np.eye(p)
    for iteration in range(1, MAX_ITER + 1):
        mu = _sigmoid(X @ beta)
        v = w * mu * (1.0 - mu)
        info = X.T @ (X * v[:, None])
        if ridge > 0:
            info = info + ridge * np.eye(p)
        grad = X.T @ (w * (y - mu))
        if ridge > 0:
            grad = grad - ridge * beta
        delta = np.linalg.solve(info, grad)
        beta = beta + delta
        if not np.all(np.isfinite(beta)) or np.abs(beta).max() > 1e4:
            raise np.linalg.LinAlgError("diverging coefficients")
        if np.abs(delta).max() < CONVERGENCE_TOL:
            return beta, info, iteration, True
    return beta, info, MAX_ITER, False


def fit_logistic_matrix(
    X: np.ndarray,
    y: np.ndarray,
    sample_weights: np.ndarray,
    names: Sequence[str],
    weights: WeightVector | None = None,
) -> RegressionFit:
    """Core weighted-logistic fit on an explicit covariate matrix.

    Covariates constant across all rows are dropped with a note in
    ``fit.dropped``. On detected separation the fit retries with a small
    ridge; if that still fails, :class:`SeparationError` names the worst
    covariate.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    sample_weights = np.asarray(sample_weights, dtype=float)
    if X.ndim != 2 or len(y) != X.shape[0] or len(sample_weights) != X.shape[0]:
        raise ValueError("shape mismatch between covariates, outcomes, and weights")
    if len(names) != X.shape[1]:
        raise ValueError("covariate name list does not match matrix width")
    pos = int(np.sum(y == 1.0))
    if pos < 2 or len(y) - pos < 2:
        raise ValueError("need at least two rows of each outcome class")

    keep = [j for j in range(X.shape[1]) if np.ptp(X[:, j]) > 0]
    dropped = tuple(names[j] for j in range(X.shape[1]) if j not in keep)
    kept_names = ("intercept",) + tuple(names[j] for j in keep)
    design = np.hstack([np.ones((X.shape[0], 1)), X[:, keep]])

    ridge_used = False
    separation = False
    try:
        beta, info, iterations, converged = _irls(design, y, sample_weights, ridge=0.0)
        # unconverged with implausibly large coefficients = separation walking
        # the likelihood ridge toward infinity
        if not converged and np.abs(beta).max() > 30.0:
            separation = True
    except np.linalg.LinAlgError:
        separation = True
    if separation:
        ridge_used = True
        try:
            beta, info, iterations, converged = _irls(
                design, y, sample_weights, ridge=SEPARATION_RIDGE
            )
        except np.linalg.LinAlgError:
            beta = None
            converged = False
        if beta is None or not converged:
            worst = (
                kept_names[1 + int(np.argmax(np.abs(beta[1:])))]
                if beta is not None and len(beta) > 1
                else "intercept"
            )
            raise SeparationError(
                f"perfect separation: no convergence even with ridge "
                f"{SEPARATION_RIDGE}; worst covariate: {worst}"
            ) from None

    covariance = np.linalg.inv(info)
    ses = np.sqrt(np.maximum(np.diag(covariance), 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(ses > 0, beta / ses, np.inf * np.sign(beta))
    p_values = erfc(np.abs(z) / math.sqrt(2.0))
    loglik = _weighted_loglik(design, y, sample_weights, beta)
    k = design.shape[1]
    return RegressionFit(
        names=kept_names,
        coefficients=beta,
        standard_errors=ses,
        z_scores=z,
        p_values=p_values,
        odds_ratios=np.exp(beta),
        aic=2.0 * k - 2.0 * loglik,
        log_likelihood=loglik,
        weights=weights,
        iterations=iterations,
        converged=converged,
        ridge_used=ridge_used,
        dropped=dropped,
        n_rows=len(y),
    )


def fit_weighted_logistic(
    rows: Sequence[DesignRow], weights: WeightVector | None = None
) -> RegressionFit:
    """Fit the satisfaction model on design rows with per-class weights
    (computed from the rows when not supplied)."""
    if weights is None:
        weights = class_weights(rows)
    X, y, names = design_matrix(rows)
    sample_weights = np.array([weights.for_outcome(r.outcome) for r in rows])
    return fit_logistic_matrix(X, y, sample_weights, names, weights=weights)


def odds_ratio(coefficient: float) -> float:
    if not math.isfinite(coefficient):
        raise ValueError(f"coefficient must be finite, got {coefficient!r}")
    return math.exp(coefficient)


def significance_stars(p: float) -> str:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p-value outside [0, 1]: {p!r}")
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    if p < 0.1:
        return "⊙"
    return ""


_TABLE_GROUPS: tuple[tuple[str, tuple[str, ...]], ...] = (
    (
        "MI-Consistent",
        (
            "Affirm",
            "EmphasizingAutonomy",
            "OpenQuestion",
            "ClosedQuestion",
            "Persuade",
            "Reflection",
            "SeekingCollaboration",
        ),
    ),
    ("MI-Inconsistent", ("Direct", "Inappropriate")),
    (
        "Other",
        (
            "Grounding",
            "GivingInformation",
            "Support",
            "PersonalDisclosure",
            "Introduction",
            "Conclusion",
            "ChitChat",
        ),
    ),
    ("Control Variables", CONTROL_NAMES),
)


def _display_name(name: str) -> str:
    if name in CONTROL_DISPLAY:
        return CONTROL_DISPLAY[name]
    try:
        return MiCode(name).display_name
    except ValueError:
        return name


def satisfaction_table(fit: RegressionFit, design: DesignResult | None = None) -> str:
    """Human-readable report grouped like the published association table:
    consistent, inconsistent, and rapport codes, then controls, with
    3-decimal coefficients, stars, odds ratios, and an AIC footer."""
    lines: list[str] = []
    lines.append("Associations between strategies and satisfactory conversations")
    lines.append("=" * 63)
    if design is not None:
        lines.append(
            f"rows: {len(design.rows)}  "
            f"(excluded: {design.excluded_no_rating} unrated, "
            f"{design.excluded_missing_age} missing age)"
        )
    if fit.weights is not None:
        lines.append(
            f"class weights: satisfactory {fit.weights.satisfactory:.4f}, "
            f"unsatisfactory {fit.weights.unsatisfactory:.4f}"
        )
    if not fit.converged:
        lines.append("WARNING: fit did not converge; results are provisional")
    if fit.ridge_used:
        lines.append(f"note: ridge {SEPARATION_RIDGE} applied (separation detected)")
    lines.append("")
    lines.append(f"{'MI Code':<34}{'Coefficient':<16}{'Odds Ratio':<12}")
    for group, members in _TABLE_GROUPS:
        lines.append(group)
        for name in members:
            if name in fit.dropped:
                lines.append(f"  {_display_name(name):<32}{'(dropped: constant)':<16}")
                continue
            if name not in fit.names:
                continue
            coef = fit.coefficient(name)
            stars = significance_stars(fit.p_value(name))
            orat = odds_ratio(coef)
            lines.append(f"  {_display_name(name):<32}{f'{coef:.3f}{stars}':<16}{orat:.3f}")
    lines.append("")
    lines.append(f"AIC of Model: {fit.aic:.1f}")
    lines.append(STAR_LEGEND)
    return "\n".join(lines) + "\n"


def satisfaction_report_dict(fit: RegressionFit, design: DesignResult | None = None) -> dict:
    """Machine-readable companion to the text table."""
    rows = []
    for i, name in enumerate(fit.names):
        rows.append(
            {
                "covariate": name,
                "coefficient": float(fit.coefficients[i]),
                "se": float(fit.standard_errors[i]),
                "z": float(fit.z_scores[i]),
                "p": float(fit.p_values[i]),
                "stars": significance_stars(float(fit.p_values[i])),
                "odds_ratio": float(fit.odds_ratios[i]),
            }
        )
    header: dict = {
        "aic": fit.aic,
        "log_likelihood": fit.log_likelihood,
        "iterations": fit.iterations,
        "converged": fit.converged,
        "ridge_used": fit.ridge_used,
        "dropped": list(fit.dropped),
        "n_rows": fit.n_rows,
    }
    if fit.weights is not None:
        header["class_weights"] = {
            "satisfactory": fit.weights.satisfactory,
            "unsatisfactory": fit.weights.unsatisfactory,
        }
    if design is not None:
        header["excluded_no_rating"] = design.excluded_no_rating
        header["excluded_missing_age"] = design.excluded_missing_age
        header["global_mean_rating"] = design.global_mean_rating
    return {"header": header, "rows": rows}

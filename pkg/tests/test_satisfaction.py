from __future__ import annotations

import itertools
import math

import numpy as np
import pytest

from micoder.codes import COVARIATE_CODES, MiCode, SatisfactionClass
from micoder.corpus import Corpus
from micoder.satisfaction import (
    STAR_LEGEND,
    DesignRow,
    build_design,
    class_weights,
    design_matrix,
    fit_logistic_matrix,
    fit_weighted_logistic,
    odds_ratio,
    satisfaction_report_dict,
    satisfaction_table,
    significance_stars,
)

from conftest import T0, make_conversation


# --- independent oracle: weighted log-likelihood maximized on a shrinking grid ---


def _loglik(design: np.ndarray, y: np.ndarray, w: np.ndarray, beta: np.ndarray) -> float:
    eta = design @ beta
    p = 1.0 / (1.0 + np.exp(-np.clip(eta, -35, 35)))
    p = np.clip(p, 1e-12, 1 - 1e-12)
    return float(np.sum(w * (y * np.log(p) + (1 - y) * np.log(1 - p))))


def grid_fit(X: np.ndarray, y: np.ndarray, w: np.ndarray, rounds: int = 26, span: float = 4.0):
    """Maximize the weighted likelihood by exhaustive grid refinement."""
    design = np.hstack([np.ones((X.shape[0], 1)), X])
    p = design.shape[1]
    center = np.zeros(p)
    for _ in range(rounds):
        axes = [np.linspace(c - span, c + span, 7) for c in center]
        best_ll, best = -np.inf, center
        for combo in itertools.product(*axes):
            beta = np.array(combo)
            ll = _loglik(design, y, w, beta)
            if ll > best_ll:
                best_ll, best = ll, beta
        center = best
        span *= 0.5
    return center


def _rows_from_arrays(X, y):
    rows = []
    for i in range(len(y)):
        counts = {code: 0 for code in COVARIATE_CODES}
        counts[MiCode.REFLECTION] = int(X[i, 0])
        counts[MiCode.AFFIRM] = int(X[i, 1]) if X.shape[1] > 1 else 0
        rows.append(
            DesignRow(
                conversation_id=f"c{i}",
                counts=counts,
                member_age=30.0,
                listener_age=30.0,
                member_past_avg_rating=4.0,
                outcome=SatisfactionClass.SATISFACTORY if y[i] else SatisfactionClass.UNSATISFACTORY,
            )
        )
    return rows


def test_intercept_only_closed_form():
    X = np.zeros((10, 1))
    y = np.array([1.0] * 7 + [0.0] * 3)
    fit = fit_logistic_matrix(X, y, np.ones(10), names=("dummy",))
    assert fit.dropped == ("dummy",)
    assert fit.coefficients[0] == pytest.approx(math.log(7 / 3), abs=1e-6)
    assert fit.converged


def test_two_covariate_fit_matches_grid_oracle():
    rng = np.random.default_rng(0)
    n = 80
    X = rng.integers(0, 4, size=(n, 2)).astype(float)
    logit = -0.4 + 0.8 * X[:, 0] - 0.5 * X[:, 1]
    y = (rng.random(n) < 1 / (1 + np.exp(-logit))).astype(float)
    w = np.where(y == 1, 0.8, 1.3)
    fit = fit_logistic_matrix(X, y, w, names=("x1", "x2"))
    oracle = grid_fit(X, y, w)
    assert np.allclose(fit.coefficients, oracle, atol=1e-4)


def test_unit_weight_fit_matches_grid_oracle():
    rng = np.random.default_rng(5)
    n = 60
    X = rng.normal(size=(n, 2))
    y = (rng.random(n) < 1 / (1 + np.exp(-(0.2 + X[:, 0])))).astype(float)
    fit = fit_logistic_matrix(X, y, np.ones(n), names=("a", "b"))
    oracle = grid_fit(X, y, np.ones(n))
    assert np.allclose(fit.coefficients, oracle, atol=1e-4)


def test_weight_rescaling_leaves_coefficients_unchanged():
    rng = np.random.default_rng(2)
    n = 100
    X = rng.integers(0, 3, size=(n, 2)).astype(float)
    y = (rng.random(n) < 0.5).astype(float)
    w = np.where(y == 1, 0.7, 2.1)
    fit1 = fit_logistic_matrix(X, y, w, names=("a", "b"))
    fit2 = fit_logistic_matrix(X, y, 3.7 * w, names=("a", "b"))
    assert np.allclose(fit1.coefficients, fit2.coefficients, atol=1e-8)
    assert fit2.log_likelihood == pytest.approx(3.7 * fit1.log_likelihood, rel=1e-9)


def test_identically_zero_covariate_dropped_without_shift():
    rng = np.random.default_rng(4)
    n = 120
    X = rng.integers(0, 3, size=(n, 2)).astype(float)
    y = (rng.random(n) < 1 / (1 + np.exp(-(0.3 * X[:, 0] - 0.2)))).astype(float)
    with_zero = np.hstack([X, np.zeros((n, 1))])
    fit_full = fit_logistic_matrix(with_zero, y, np.ones(n), names=("a", "b", "z"))
    fit_base = fit_logistic_matrix(X, y, np.ones(n), names=("a", "b"))
    assert fit_full.dropped == ("z",)
    assert np.allclose(fit_full.coefficients, fit_base.coefficients, atol=1e-8)


def test_perfect_separation_falls_back_to_ridge():
    X = np.array([[0.0], [1.0], [2.0], [3.0], [4.0], [5.0]])
    y = np.array([0.0, 0.0, 0.0, 1.0, 1.0, 1.0])
    fit = fit_logistic_matrix(X, y, np.ones(6), names=("sep",))
    assert fit.ridge_used
    assert fit.converged
    # ridge pins the otherwise-divergent coefficient at a large finite value
    assert fit.coefficient("sep") > 2.0


def test_class_weights_balanced_unity():
    rows = _rows_from_arrays(np.zeros((4, 1)), [1, 1, 0, 0])
    w = class_weights(rows)
    assert w.satisfactory == 1.0
    assert w.unsatisfactory == 1.0


def test_class_weights_published_counts():
    # 49,892 satisfactory vs 13,120 unsatisfactory of 63,012
    n_sat, n_unsat = 49_892, 13_120
    n = n_sat + n_unsat
    w_sat = n / (2 * n_sat)
    w_unsat = n / (2 * n_unsat)
    assert w_sat == pytest.approx(0.6315, abs=1e-4)
    assert w_unsat == pytest.approx(2.4014, abs=1e-4)
    assert w_unsat / w_sat == pytest.approx(n_sat / n_unsat)


def test_class_weights_single_class_rejected():
    rows = _rows_from_arrays(np.zeros((3, 1)), [1, 1, 1])
    with pytest.raises(ValueError, match="both outcome classes"):
        class_weights(rows)


# --- odds ratios and stars ------------------------------------------------------


@pytest.mark.parametrize(
    "coef,expected",
    [(0.522, 1.685), (0.035, 1.035), (-0.086, 0.917), (0.0, 1.0)],
)
def test_odds_ratio_values(coef, expected):
    assert odds_ratio(coef) == pytest.approx(expected, abs=1e-3)


def test_odds_ratio_log_roundtrip():
    for x in (1e-6, 1e-3, 0.5, 1.0, 42.0, 1e6):
        assert odds_ratio(math.log(x)) == pytest.approx(x, rel=1e-12)


def test_odds_ratio_rejects_non_finite():
    with pytest.raises(ValueError):
        odds_ratio(float("nan"))


@pytest.mark.parametrize(
    "p,stars",
    [
        (0.0005, "***"),
        (0.005, "**"),
        (0.03, "*"),
        (0.07, "⊙"),
        (0.5, ""),
        (0.1, ""),
        (0.05, "⊙"),
    ],
)
def test_significance_stars(p, stars):
    assert significance_stars(p) == stars


# --- design matrix ---------------------------------------------------------------


def _rated_conv(cid, member, rating, n_reflections=0, member_age=25, listener_age=30, start=T0):
    turns = [("m", "hi")]
    for _ in range(n_reflections):
        turns.append(("l", "sounds hard"))
    turns.append(("l", "ok"))
    return make_conversation(
        cid,
        turns,
        member=member,
        rating=rating,
        member_age=member_age,
        listener_age=listener_age,
        start=start,
    )


def test_build_design_counts_reflections():
    conv = _rated_conv("c1", "m1", 4, n_reflections=3)
    labels = {
        u.utterance_id: {MiCode.REFLECTION}
        for u in conv.utterances
        if u.text == "sounds hard"
    }
    design = build_design(Corpus(conversations=(conv,)), labels)
    assert design.rows[0].counts[MiCode.REFLECTION] == 3


def test_build_design_past_average_leave_current_out():
    convs = (
        _rated_conv("c1", "m1", 5),
        _rated_conv("c2", "m1", 4),
        _rated_conv("c3", "m1", 2),
        _rated_conv("c4", "m2", 3),
    )
    design = build_design(Corpus(conversations=convs), {})
    by_id = {r.conversation_id: r for r in design.rows}
    assert by_id["c3"].member_past_avg_rating == pytest.approx(4.5)  # mean of {5,4}
    # member with no other rated conversation falls back to the global mean
    assert by_id["c4"].member_past_avg_rating == pytest.approx(np.mean([5, 4, 2, 3]))
    assert design.global_mean_rating == pytest.approx(3.5)


def test_build_design_temporal_mode():
    from datetime import timedelta

    convs = (
        _rated_conv("c1", "m1", 5, start=T0),
        _rated_conv("c2", "m1", 1, start=T0 + timedelta(days=1)),
        _rated_conv("c3", "m1", 3, start=T0 + timedelta(days=2)),
    )
    design = build_design(Corpus(conversations=convs), {}, temporal_past_avg=True)
    by_id = {r.conversation_id: r for r in design.rows}
    assert by_id["c3"].member_past_avg_rating == pytest.approx(3.0)  # mean of {5,1}
    assert by_id["c2"].member_past_avg_rating == pytest.approx(5.0)
    # first conversation has no earlier ratings: global mean
    assert by_id["c1"].member_past_avg_rating == pytest.approx(3.0)


def test_build_design_exclusions_counted():
    convs = (
        _rated_conv("c1", "m1", 4),
        make_conversation("c2", [("m", "hi")], rating=None),
        _rated_conv("c3", "m3", 2, member_age=None),
    )
    design = build_design(Corpus(conversations=convs), {})
    assert len(design.rows) == 1
    assert design.excluded_no_rating == 1
    assert design.excluded_missing_age == 1


def test_design_matrix_totals_match_labelwise_counts():
    convs = (
        _rated_conv("c1", "m1", 4, n_reflections=2),
        _rated_conv("c2", "m2", 2, n_reflections=1),
    )
    corpus = Corpus(conversations=convs)
    labels = {
        u.utterance_id: {MiCode.REFLECTION}
        for c in corpus
        for u in c.utterances
        if u.text == "sounds hard"
    }
    design = build_design(corpus, labels)
    X, y, names = design_matrix(design.rows)
    j = names.index("Reflection")
    assert X[:, j].sum() == len(labels)


# --- report formatting -------------------------------------------------------------


def _toy_fit():
    rng = np.random.default_rng(8)
    n = 400
    X = rng.integers(0, 3, size=(n, len(COVARIATE_CODES) + 3)).astype(float)
    logit = -0.2 + 0.9 * X[:, 5]  # Reflection column
    y = (rng.random(n) < 1 / (1 + np.exp(-logit))).astype(float)
    names = tuple(c.value for c in COVARIATE_CODES) + (
        "member_age",
        "listener_age",
        "member_past_avg_rating",
    )
    return fit_logistic_matrix(X, y, np.ones(n), names=names)


def test_table_contains_legend_and_groups():
    fit = _toy_fit()
    table = satisfaction_table(fit)
    assert STAR_LEGEND in table
    assert "MI-Consistent" in table
    assert "MI-Inconsistent" in table
    assert "Control Variables" in table
    assert "AIC of Model:" in table
    assert "Other" not in [line.strip().split()[0] for line in table.splitlines() if line.startswith("  ")]


def test_table_row_formatting():
    fit = _toy_fit()
    i = fit.names.index("Reflection")
    coef = fit.coefficients[i]
    stars = significance_stars(fit.p_values[i])
    table = satisfaction_table(fit)
    assert f"Reflection{'':22s}{coef:.3f}{stars}" in table.replace("  Reflection", "Reflection")


def test_table_deterministic():
    fit = _toy_fit()
    assert satisfaction_table(fit) == satisfaction_table(fit)


def test_table_published_style_row():
    # a coefficient of 0.0348 at p=2e-4 renders as "0.035***  1.035"
    import numpy as np

    from micoder.satisfaction import RegressionFit

    names = ("intercept", "Reflection")
    beta = np.array([0.1, 0.0348])
    fit = RegressionFit(
        names=names,
        coefficients=beta,
        standard_errors=np.array([0.05, 0.009]),
        z_scores=beta / np.array([0.05, 0.009]),
        p_values=np.array([0.04, 0.0002]),
        odds_ratios=np.exp(beta),
        aic=1234.5,
        log_likelihood=-610.0,
        weights=None,
        iterations=5,
        converged=True,
    )
    table = satisfaction_table(fit)
    row = next(line for line in table.splitlines() if line.strip().startswith("Reflection"))
    assert "0.035***" in row
    assert "1.035" in row


def test_report_dict_shape():
    fit = _toy_fit()
    report = satisfaction_report_dict(fit)
    assert {"covariate", "coefficient", "se", "z", "p", "stars", "odds_ratio"} == set(
        report["rows"][0]
    )
    assert report["header"]["aic"] == pytest.approx(fit.aic)
    aic_check = 2 * len(fit.names) - 2 * fit.log_likelihood
    assert fit.aic == pytest.approx(aic_check)


def test_fit_weighted_logistic_on_rows():
    rng = np.random.default_rng(10)
    rows = []
    for i in range(300):
        reflections = int(rng.integers(0, 5))
        p = 1 / (1 + math.exp(-(-1.0 + 0.8 * reflections)))
        outcome = (
            SatisfactionClass.SATISFACTORY
            if rng.random() < p
            else SatisfactionClass.UNSATISFACTORY
        )
        counts = {code: 0 for code in COVARIATE_CODES}
        counts[MiCode.REFLECTION] = reflections
        rows.append(
            DesignRow(
                conversation_id=f"c{i}",
                counts=counts,
                member_age=float(rng.integers(18, 60)),
                listener_age=float(rng.integers(18, 60)),
                member_past_avg_rating=float(rng.uniform(1, 5)),
                outcome=outcome,
            )
        )
    fit = fit_weighted_logistic(rows)
    assert fit.converged
    assert fit.weights is not None
    assert fit.coefficient("Reflection") == pytest.approx(0.8, abs=0.35)
    assert np.all(fit.odds_ratios > 0)
    assert np.all((fit.p_values >= 0) & (fit.p_values <= 1))

"""Fit the inverse-class-frequency-weighted satisfaction model on a corpus
with planted effects and print the association table."""

from micoder.codes import MiCode
from micoder.satisfaction import (
    build_design,
    class_weights,
    fit_weighted_logistic,
    satisfaction_table,
)
from micoder.simgen import GeneratorSpec, default_code_probs, generate_corpus

planted = {
    MiCode.REFLECTION: 0.3,
    MiCode.AFFIRM: 0.3,
    MiCode.INAPPROPRIATE: -0.3,
}
probs = {c: max(0.10, p) for c, p in default_code_probs().items()}
spec = GeneratorSpec(
    seed=42,
    n_conversations=6000,
    mean_length=20.0,
    beta_codes=planted,
    beta_intercept=1.0,
    beta_member_age=-0.01,
    n_listeners=40,
    n_members=1500,
    code_probs=probs,
)
corpus, labels, _ = generate_corpus(spec)

design = build_design(corpus, labels)
print(
    f"design rows: {len(design.rows)} "
    f"(excluded {design.excluded_no_rating} unrated, {design.excluded_missing_age} missing ages)"
)
weights = class_weights(design.rows)
print(f"class weights: satisfactory {weights.satisfactory:.3f}, unsatisfactory {weights.unsatisfactory:.3f}")

fit = fit_weighted_logistic(design.rows, weights)
print()
print(satisfaction_table(fit, design))

print("planted vs fitted:")
for code, beta in planted.items():
    print(f"  {code.value:16s} planted {beta:+.2f}  fitted {fit.coefficient(code.value):+.3f}")

"""The human-in-the-loop round: models suggest codes above a confidence
threshold, an annotator accepts or overrides, agreement is tracked, and
the verified labels become the next training set."""

from pathlib import Path
from tempfile import TemporaryDirectory

import numpy as np

from micoder.annotation import (
    LabelStore,
    agreement_report,
    export_training_examples,
    record_decision,
    suggest,
)
from micoder.classifier import Hyper, ModelRegistry, train_code_classifier
from micoder.codes import ALL_CODES
from micoder.corpus import build_context
from micoder.simgen import GeneratorSpec, generate_corpus

corpus, truth, _ = generate_corpus(GeneratorSpec(seed=3, n_conversations=120, mean_length=12.0))

# bootstrap: train on ground truth as if a first annotation round produced it
labeled = [
    (build_context(conv, u.index, 1), truth[u.utterance_id])
    for conv in corpus
    for u in conv.utterances
    if u.utterance_id in truth
]
registry = ModelRegistry()
for code in ALL_CODES:
    y = [code in cs for _, cs in labeled]
    if not any(y) or all(y):
        continue
    model = train_code_classifier(
        [(cu, code in cs) for cu, cs in labeled], code, 1, Hyper(seed=0, epochs=8)
    )
    registry.put(model, code, 1, trained_at="2021-06-01T00:00:00Z", train_hash="demo")

with TemporaryDirectory() as tmp:
    store = LabelStore(Path(tmp) / "labels.jsonl")

    queue = suggest(registry, corpus, threshold=0.7, k=1, exclude=store.human_labeled_utterances())
    print(f"suggestion queue: {len(queue)} utterances at confidence >= {queue.threshold}")
    item = queue.items[0]
    print(f"top item {item.utterance_id}: ", {c.value: round(p, 3) for c, p in item.suggestions.items()})

    # two annotators review the first ten items; the second disagrees sometimes
    rng = np.random.default_rng(0)
    for i, item in enumerate(queue.items[:10]):
        codes = tuple(sorted(item.suggestions, key=lambda c: c.value))[:3]
        record_decision(store, item.utterance_id, "ann_a", codes)
        if rng.random() < 0.3:
            codes = codes[:1]  # override: keep only the strongest code
        record_decision(store, item.utterance_id, "ann_b", codes)

    refreshed = suggest(registry, corpus, threshold=0.7, k=1, exclude=store.human_labeled_utterances())
    print(f"after 10 decisions the queue holds {len(refreshed)} items")

    report = agreement_report(store)
    defined = {c.value: round(r.alpha, 3) for c, r in report.per_code.items() if r.defined}
    print("per-code alphas on the verified slice:", defined)

    examples = export_training_examples(store, corpus, ALL_CODES[0], k=1)
    print(f"training export for {ALL_CODES[0].value}: {len(examples)} examples, "
          f"{sum(1 for _, pos in examples if pos)} positive")

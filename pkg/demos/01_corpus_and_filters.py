"""Walk through the corpus layer: generate a transcript file, parse it,
binarize ratings, build context windows, and apply the cohort filters."""

from pathlib import Path
from tempfile import TemporaryDirectory

from micoder.corpus import (
    binarize_rating,
    build_context,
    filter_active_listeners,
    filter_min_length,
    parse_corpus,
    write_corpus,
)
from micoder.simgen import GeneratorSpec, generate_corpus

with TemporaryDirectory() as tmp:
    path = Path(tmp) / "corpus.jsonl"

    # a synthetic corpus standing in for a real transcript export
    corpus, labels, _ = generate_corpus(GeneratorSpec(seed=1, n_conversations=300, mean_length=60.0))
    write_corpus(corpus, path)

    corpus = parse_corpus(path)
    print(f"parsed {len(corpus)} conversations, {sum(len(c) for c in corpus)} utterances")
    print(f"skipped records: {len(corpus.skipped)}")

    conv = corpus.conversations[0]
    print(f"\nconversation {conv.conversation_id}: rating={conv.rating}", end=" -> ")
    print(binarize_rating(conv.rating).value if conv.rating else "unrated")

    # context windows concatenate up to k preceding utterances, oldest first
    for k in (0, 1, 5):
        cu = build_context(conv, 6, k)
        print(f"k={k}: {cu.context_text[:90]}")

    # the tenure analyses run on active listeners and long conversations only
    active = filter_active_listeners(corpus, min_span_days=180, min_sessions=20)
    long_enough = filter_min_length(corpus, min_utterances=50)
    print(f"\nactive listeners: {sorted(active)}")
    print(f"conversations with >=50 utterances: {len(long_enough)} of {len(corpus)}")

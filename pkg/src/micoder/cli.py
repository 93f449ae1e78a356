"""Command-line pipeline: ingest, simulate, train, label, analyze, serve.

Every subcommand reads declared inputs and writes declared outputs;
identical flags and seed give byte-identical output files. Report
subcommands write a human-readable .txt and a machine-readable .json side
by side. Exit codes: 0 success, 1 data/model error (with a JSON error
line on stderr), 2 usage error.

Set SOURCE_DATE_EPOCH to pin model `trained_at` stamps for reproducible
registries. MICODER_DATA_DIR, when set, is the base for relative paths
that do not resolve against the working directory.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import annotation, classifier, corpus as corpus_mod, satisfaction, simgen, trends
from .codes import ALL_CODES, MiCode, parse_code

K_CHOICES = (0, 1, 5)


class CliError(Exception):
    def __init__(self, message: str, code: str = "data_error"):
        super().__init__(message)
        self.code = code


def _resolve(path: str) -> Path:
    p = Path(path)
    if p.is_absolute() or p.exists() or p.parent.exists():
        return p
    base = os.environ.get("MICODER_DATA_DIR")
    return Path(base) / p if base else p


def _trained_at() -> str | None:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch is None:
        return None
    return datetime.fromtimestamp(int(epoch), tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _dump_json(obj, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        json.dumps(obj, ensure_ascii=False, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def _write_report(prefix: Path, text: str, obj) -> None:
    prefix.parent.mkdir(parents=True, exist_ok=True)
    Path(str(prefix) + ".txt").write_text(text, encoding="utf-8")
    _dump_json(obj, Path(str(prefix) + ".json"))


def _load_corpus(path: str, strict: bool = False) -> corpus_mod.Corpus:
    try:
        return corpus_mod.parse_corpus(_resolve(path), strict=strict)
    except corpus_mod.CorpusError as exc:
        raise CliError(str(exc), code="corpus_error") from exc


def _load_store(path: str) -> annotation.LabelStore:
    p = _resolve(path)
    if not p.exists():
        raise CliError(f"label file not found: {p}", code="label_error")
    try:
        return annotation.load_label_file(p)
    except annotation.LabelStoreError as exc:
        raise CliError(str(exc), code="label_error") from exc


def _load_registry(path: str) -> classifier.ModelRegistry:
    try:
        return classifier.load_registry(_resolve(path))
    except (FileNotFoundError, ValueError) as exc:
        raise CliError(str(exc), code="model_error") from exc


def _analysis_labels(store: annotation.LabelStore, source: str) -> dict[str, frozenset[MiCode]]:
    """Label view for the analyses: model labels when present (the bulk
    pipeline), else consensus-precedence human labels."""
    if source == "model" or (source == "auto" and any(s.startswith("model:") for s in store.sources())):
        labels = store.codes_by_utterance("model:")
        if not labels:
            raise CliError("no model-source labels in label file", code="label_error")
        return labels
    labels = store.effective_human_codes()
    if not labels:
        raise CliError("label file has no usable records", code="label_error")
    return labels


def _filtered_corpus(corp: corpus_mod.Corpus, args) -> tuple[corpus_mod.Corpus, dict]:
    active = corpus_mod.filter_active_listeners(
        corp, min_span_days=args.min_span_days, min_sessions=args.min_sessions
    )
    survivors = corpus_mod.restrict_to_listeners(corp, active)
    survivors = corpus_mod.filter_min_length(survivors, min_utterances=args.min_utterances)
    info = {
        "active_listeners": len(active),
        "conversations_after_filters": len(survivors),
        "min_span_days": args.min_span_days,
        "min_sessions": args.min_sessions,
        "min_utterances": args.min_utterances,
    }
    return survivors, info


# --- subcommands ----------------------------------------------------------------


def cmd_ingest(args) -> int:
    corp = _load_corpus(args.input, strict=args.strict)
    corpus_mod.write_corpus(corp, _resolve(args.out))
    summary = {
        "conversations": len(corp),
        "utterances": sum(len(c) for c in corp),
        "skipped_records": len(corp.skipped),
    }
    print(json.dumps(summary, sort_keys=True))
    for line in corp.skipped:
        print(f"skipped: {line}", file=sys.stderr)
    return 0


def _spec_from_args(args) -> simgen.GeneratorSpec:
    overrides: dict = {}
    if args.spec:
        raw = json.loads(Path(_resolve(args.spec)).read_text(encoding="utf-8"))
        for key in ("code_probs", "beta_codes"):
            if key in raw:
                raw[key] = {parse_code(name): v for name, v in raw[key].items()}
        if "drift" in raw:
            raw["drift"] = {parse_code(name): tuple(v) for name, v in raw["drift"].items()}
        if "context_codes" in raw:
            raw["context_codes"] = frozenset(parse_code(n) for n in raw["context_codes"])
        if "cooccur" in raw:
            raw["cooccur"] = {
                (parse_code(a), parse_code(b)): p
                for (a, b), p in ((key.split("->"), v) for key, v in raw["cooccur"].items())
            }
        if "coupled_codes" in raw:
            raw["coupled_codes"] = tuple(
                (parse_code(a), parse_code(b)) for a, b in raw["coupled_codes"]
            )
        if "lexicons" in raw:
            raw["lexicons"] = {parse_code(n): tuple(ws) for n, ws in raw["lexicons"].items()}
        overrides.update(raw)
    for flag, key in (
        ("conversations", "n_conversations"),
        ("listeners", "n_listeners"),
        ("members", "n_members"),
        ("mean_length", "mean_length"),
        ("span_days", "span_days"),
    ):
        value = getattr(args, flag)
        if value is not None:
            overrides[key] = value
    if args.balance_buckets:
        overrides["balance_tenure_buckets"] = True
    overrides["seed"] = args.seed
    return simgen.GeneratorSpec(**overrides)


def cmd_simgen(args) -> int:
    try:
        spec = _spec_from_args(args)
        corp, labels, planted = simgen.generate_corpus(spec)
    except ValueError as exc:
        raise CliError(str(exc), code="simgen_error") from exc
    corpus_mod.write_corpus(corp, _resolve(args.out))
    annotation.write_label_file(simgen.labels_to_records(labels), _resolve(args.labels_out))
    if args.params_out:
        _dump_json(planted, _resolve(args.params_out))
    print(
        json.dumps(
            {"conversations": len(corp), "labeled_utterances": len(labels)}, sort_keys=True
        )
    )
    return 0


def cmd_train(args) -> int:
    corp = _load_corpus(args.input)
    store = _load_store(args.labels)
    labeled = annotation.labeled_contexts(store, corp, args.k)
    if not labeled:
        raise CliError("no labeled listener utterances to train on", code="label_error")
    hyper = classifier.Hyper(
        l2_penalty=args.l2, epochs=args.epochs, learning_rate=args.lr, seed=args.seed
    )
    models = classifier.train_one_vs_all(labeled, k=args.k, hyper=hyper)
    if not models:
        raise CliError("every code was single-class; nothing trained", code="model_error")
    registry = classifier.ModelRegistry()
    if _resolve(args.models).joinpath("index.json").exists():
        registry = _load_registry(args.models)
    h = classifier.training_set_hash(
        (cu.context_text, "|".join(sorted(c.value for c in cs))) for cu, cs in labeled
    )
    trained_at = _trained_at()
    for code, model in models.items():
        registry.put(model, code, args.k, trained_at=trained_at, train_hash=h)
    classifier.save_registry(registry, _resolve(args.models))
    skipped = [c.value for c in ALL_CODES if c not in models]
    print(
        json.dumps(
            {
                "trained": sorted(c.value for c in models),
                "skipped_single_class": sorted(skipped),
                "k": args.k,
                "examples": len(labeled),
            },
            sort_keys=True,
        )
    )
    return 0


def cmd_evaluate(args) -> int:
    corp = _load_corpus(args.input)
    store = _load_store(args.labels)
    labeled = annotation.labeled_contexts(store, corp, args.k)
    if not labeled:
        raise CliError("no labeled listener utterances to evaluate", code="label_error")
    hyper = classifier.Hyper(
        l2_penalty=args.l2, epochs=args.epochs, learning_rate=args.lr, seed=args.seed
    )
    reports = {}
    lines = [f"{'code':24s}{'P':>8s}{'R':>8s}{'F1':>8s}{'support':>9s}"]
    for code in ALL_CODES:
        y = np.array([code in cs for _, cs in labeled], dtype=bool)
        if not y.any() or y.all():
            lines.append(f"{code.value:24s}{'skipped (single class)':>33s}")
            continue
        train_idx, test_idx = classifier.stratified_split(y, args.test_frac, seed=args.seed)
        train = [(labeled[i][0], bool(y[i])) for i in train_idx]
        test = [(labeled[i][0], bool(y[i])) for i in test_idx]
        model = classifier.train_code_classifier(train, code, args.k, hyper)
        report = classifier.evaluate(model, test)
        reports[code.value] = report.to_dict()
        lines.append(
            f"{code.value:24s}{report.precision:8.3f}{report.recall:8.3f}"
            f"{report.f1:8.3f}{report.support:9d}"
        )
    text = "\n".join(lines) + "\n"
    _write_report(_resolve(args.out), text, {"k": args.k, "test_frac": args.test_frac, "codes": reports})
    print(text, end="")
    return 0


def cmd_label(args) -> int:
    corp = _load_corpus(args.input)
    registry = _load_registry(args.models)
    missing = [c.value for c in ALL_CODES if registry.get(c, args.k) is None]
    if missing:
        raise CliError(
            f"registry lacks models at k={args.k} for: {', '.join(missing)}", code="model_error"
        )
    source = f"model:{registry.version()}"
    records = []
    for cu in corpus_mod.iter_contexts(corp, args.k):
        scores = registry.scores(cu, codes=ALL_CODES)
        passing = sorted(
            ((code, p) for code, p in scores.items() if p >= args.label_threshold),
            key=lambda item: (-item[1], item[0].value),
        )
        if not passing:
            continue
        passing = passing[: annotation.MAX_CODES_PER_RECORD]
        records.append(
            annotation.LabelRecord(
                utterance_id=cu.target.utterance_id,
                source=source,
                codes=tuple(code for code, _ in passing),
                confidence=tuple(round(p, 6) for _, p in passing),
                decided_at="1970-01-01T00:00:00Z",
            )
        )
    annotation.write_label_file(records, _resolve(args.out))
    print(json.dumps({"labeled": len(records), "threshold": args.label_threshold}, sort_keys=True))
    return 0


def cmd_agree(args) -> int:
    store = _load_store(args.labels)
    report = annotation.agreement_report(store)
    lines = [f"{'code':24s}{'alpha':>10s}{'units':>8s}{'positives':>10s}"]
    for code in ALL_CODES:
        result = report.per_code[code]
        alpha = f"{result.alpha:.4f}" if result.defined else "undefined"
        lines.append(f"{code.value:24s}{alpha:>10s}{result.units_used:8d}{report.positives[code]:10d}")
    cum = report.cumulative
    lines.append(
        f"{'Cumulative':24s}{(f'{cum.alpha:.4f}' if cum.defined else 'undefined'):>10s}{cum.units_used:8d}"
    )
    text = "\n".join(lines) + "\n"
    if args.out:
        _write_report(_resolve(args.out), text, report.to_dict())
    print(text, end="")
    return 0


def cmd_suggest(args) -> int:
    corp = _load_corpus(args.input)
    registry = _load_registry(args.models)
    exclude: set[str] = set()
    if args.labels:
        store = _load_store(args.labels)
        exclude = store.human_labeled_utterances()
    queue = annotation.suggest(
        registry, corp, threshold=args.suggest_threshold, k=args.k, exclude=exclude
    )
    items = [
        {
            "utterance_id": item.utterance_id,
            "context_preview": item.context_preview,
            "suggestions": {
                code.value: round(p, 6) for code, p in sorted(item.suggestions.items(), key=lambda kv: kv[0].value)
            },
            "model_ids": list(item.model_ids),
        }
        for item in queue.items[: args.limit]
    ]
    _dump_json({"threshold": queue.threshold, "k": queue.k, "items": items}, _resolve(args.out))
    print(json.dumps({"queued": len(queue), "written": len(items)}, sort_keys=True))
    return 0


def cmd_satisfy(args) -> int:
    corp = _load_corpus(args.input)
    store = _load_store(args.labels)
    labels = _analysis_labels(store, args.source)
    design = satisfaction.build_design(corp, labels, temporal_past_avg=args.temporal_past_avg)
    if not design.rows:
        raise CliError("no usable conversations for the satisfaction model", code="data_error")
    try:
        fit = satisfaction.fit_weighted_logistic(design.rows)
    except (ValueError, satisfaction.SeparationError) as exc:
        raise CliError(str(exc), code="fit_error") from exc
    text = satisfaction.satisfaction_table(fit, design)
    _write_report(_resolve(args.out), text, satisfaction.satisfaction_report_dict(fit, design))
    print(text, end="")
    return 0


def cmd_trends(args) -> int:
    corp = _load_corpus(args.input)
    store = _load_store(args.labels)
    labels = _analysis_labels(store, args.source)
    joins = corpus_mod.listener_first_utterances(corp)
    survivors, info = _filtered_corpus(corp, args)
    if not len(survivors):
        raise CliError("no conversations survive the cohort filters", code="data_error")
    series = trends.code_fraction_by_bucket(survivors, labels, join_times=joins)
    rows = series.rows()
    lines = [f"{'code':24s}{'bucket':>8s}{'utts':>8s}{'count':>8s}{'fraction':>10s}{'ci_low':>9s}{'ci_high':>9s}"]
    for row in rows:
        frac = "undef" if row["fraction"] is None else f"{row['fraction']:.4f}"
        lo = "" if row["ci_low"] is None else f"{row['ci_low']:.4f}"
        hi = "" if row["ci_high"] is None else f"{row['ci_high']:.4f}"
        lines.append(
            f"{row['code']:24s}{row['bucket']:>8s}{row['utterances']:8d}{row['count']:8d}"
            f"{frac:>10s}{lo:>9s}{hi:>9s}"
        )
    text = "\n".join(lines) + "\n"
    _write_report(_resolve(args.out), text, {"filters": info, "rows": rows})
    if args.plot:
        trends.plot_trends(series, str(_resolve(args.plot)))
    print(text, end="")
    return 0


def _corr_csv(matrix: trends.CorrMatrix) -> str:
    lines = ["variable," + ",".join(matrix.variables)]
    for i, var in enumerate(matrix.variables):
        cells = []
        for j in range(len(matrix.variables)):
            value = matrix.r[i, j]
            cells.append("undefined" if np.isnan(value) else f"{value:.6f}")
        lines.append(var + "," + ",".join(cells))
    return "\n".join(lines) + "\n"


def cmd_corr(args) -> int:
    corp = _load_corpus(args.input)
    store = _load_store(args.labels)
    labels = _analysis_labels(store, args.source)
    survivors, info = _filtered_corpus(corp, args)
    if not len(survivors):
        raise CliError("no conversations survive the cohort filters", code="data_error")
    listener_utts = {
        u.utterance_id for u in survivors.listener_utterances() if u.utterance_id in labels
    }
    utt_labels = {uid: labels[uid] for uid in listener_utts}
    out = Path(_resolve(args.out))
    out.parent.mkdir(parents=True, exist_ok=True)
    try:
        results = {
            "utterance": trends.cooccurrence_matrix(utt_labels),
            "conversation": trends.conversation_corr(survivors, labels),
            "listener": trends.listener_corr(survivors, labels),
        }
    except ValueError as exc:
        raise CliError(str(exc), code="data_error") from exc
    for name, matrix in results.items():
        Path(f"{out}.{name}.csv").write_text(_corr_csv(matrix), encoding="utf-8")
    print(json.dumps({"filters": info, "written": sorted(results)}, sort_keys=True))
    return 0


def cmd_topwords(args) -> int:
    corp = _load_corpus(args.input)
    store = _load_store(args.labels)
    labels = _analysis_labels(store, args.source)
    report: dict[str, list] = {}
    lines = []
    for code in ALL_CODES:
        try:
            top = trends.tfidf_top_words(corp, labels, code, n=args.top)
        except ValueError:
            lines.append(f"{code.value:24s}(no labeled utterances)")
            report[code.value] = []
            continue
        report[code.value] = [{"token": t, "score": round(s, 6)} for t, s in top]
        lines.append(f"{code.value:24s}" + ", ".join(t for t, _ in top))
    text = "\n".join(lines) + "\n"
    _write_report(_resolve(args.out), text, {"top": args.top, "codes": report})
    print(text, end="")
    return 0


def cmd_validate(args) -> int:
    store = _load_store(args.labels)
    try:
        report = annotation.validation_sample(store, n=args.n, seed=args.seed)
    except annotation.LabelStoreError as exc:
        raise CliError(str(exc), code="label_error") from exc
    lines = [f"{'code':24s}{'inter-human':>12s}{'vs-model':>10s}"]

    def fmt(result):
        return f"{result.alpha:.4f}" if result.defined else "undef"

    for code in ALL_CODES:
        human, model = report.per_code[code]
        lines.append(f"{code.value:24s}{fmt(human):>12s}{fmt(model):>10s}")
    lines.append(
        f"{'Cumulative':24s}{fmt(report.cumulative_inter_human):>12s}"
        f"{fmt(report.cumulative_vs_model):>10s}"
    )
    text = "\n".join(lines) + "\n"
    _write_report(_resolve(args.out), text, report.to_dict())
    print(text, end="")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import ServiceConfig, create_app

    config = ServiceConfig(
        corpus_path=_resolve(args.input),
        labels_path=_resolve(args.labels),
        registry_path=_resolve(args.models),
        k=args.k,
        suggest_threshold=args.suggest_threshold,
        label_threshold=args.label_threshold,
        min_span_days=args.min_span_days,
        min_sessions=args.min_sessions,
        min_utterances=args.min_utterances,
        seed=args.seed,
    )
    app = create_app(config)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


# --- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="micoder", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common_filters(p):
        p.add_argument("--min-span-days", type=float, default=365.0)
        p.add_argument("--min-sessions", type=int, default=500)
        p.add_argument("--min-utterances", type=int, default=50)

    def source_flag(p):
        p.add_argument("--source", choices=("auto", "model", "human"), default="auto")

    p = sub.add_parser("ingest", help="parse and normalize a transcript file")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--strict", action="store_true")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("simgen", help="generate a synthetic corpus with known ground truth")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--labels-out", required=True)
    p.add_argument("--params-out")
    p.add_argument("--spec", help="JSON file of generator overrides")
    p.add_argument("--conversations", type=int)
    p.add_argument("--listeners", type=int)
    p.add_argument("--members", type=int)
    p.add_argument("--mean-length", type=float)
    p.add_argument("--span-days", type=float)
    p.add_argument("--balance-buckets", action="store_true")
    p.set_defaults(func=cmd_simgen)

    for name, func in (("train", cmd_train), ("evaluate", cmd_evaluate)):
        p = sub.add_parser(name)
        p.add_argument("--input", required=True)
        p.add_argument("--labels", required=True)
        p.add_argument("--models", required=(name == "train"))
        p.add_argument("--k", type=int, choices=K_CHOICES, default=1)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--epochs", type=int, default=20)
        p.add_argument("--l2", type=float, default=1e-4)
        p.add_argument("--lr", type=float, default=0.5)
        if name == "evaluate":
            p.add_argument("--test-frac", type=float, default=0.2)
            p.add_argument("--out", required=True)
        p.set_defaults(func=func)

    p = sub.add_parser("label", help="bulk-label a corpus with registry models")
    p.add_argument("--input", required=True)
    p.add_argument("--models", required=True)
    p.add_argument("--k", type=int, choices=K_CHOICES, default=1)
    p.add_argument("--label-threshold", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("agree", help="inter-annotator agreement report")
    p.add_argument("--labels", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_agree)

    p = sub.add_parser("suggest", help="confidence-thresholded suggestion queue")
    p.add_argument("--input", required=True)
    p.add_argument("--labels")
    p.add_argument("--models", required=True)
    p.add_argument("--k", type=int, choices=K_CHOICES, default=1)
    p.add_argument("--suggest-threshold", type=float, default=0.7)
    p.add_argument("--limit", type=int, default=1000)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_suggest)

    p = sub.add_parser("satisfy", help="satisfaction regression report")
    p.add_argument("--input", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--temporal-past-avg", action="store_true")
    source_flag(p)
    p.set_defaults(func=cmd_satisfy)

    p = sub.add_parser("trends", help="tenure-bucket usage trends")
    p.add_argument("--input", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--plot")
    common_filters(p)
    source_flag(p)
    p.set_defaults(func=cmd_trends)

    p = sub.add_parser("corr", help="correlation matrices at three levels")
    p.add_argument("--input", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    common_filters(p)
    source_flag(p)
    p.set_defaults(func=cmd_corr)

    p = sub.add_parser("topwords", help="TF-IDF top words per code")
    p.add_argument("--input", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--top", type=int, default=5)
    source_flag(p)
    p.set_defaults(func=cmd_topwords)

    p = sub.add_parser("validate", help="model-vs-human validation sample")
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("-n", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("serve", help="run the annotation/analysis HTTP service")
    p.add_argument("--input", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--models", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8799)
    p.add_argument("--k", type=int, choices=K_CHOICES, default=1)
    p.add_argument("--suggest-threshold", type=float, default=0.7)
    p.add_argument("--label-threshold", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    common_filters(p)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(json.dumps({"error": str(exc), "code": exc.code}, sort_keys=True), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

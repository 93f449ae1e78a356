"""Tenure trends, correlation matrices, and lexical diagnostics.

Trend fractions are per tenure bucket: the share of listener utterances in
the bucket carrying each code, with Wilson 95% intervals (correct at
boundary proportions, unlike the normal approximation). Correlations are
Pearson at three granularities; zero-variance cells are reported as
undefined (NaN), never coerced to 0. Top words per code use TF-IDF over
the 17 per-code documents with a built-in stopword list and a
deterministic suffix stemmer.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from datetime import datetime
from enum import Enum
from typing import Collection, Mapping, Sequence

import numpy as np
from scipy.special import ndtri

from .codes import ALL_CODES, BUCKET_ORDER, MiCode, TenureBucket
from .corpus import Corpus, SpeakerRole, listener_first_utterances, tenure_bucket

_WORD_RE = re.compile(r"[a-z]+")


def proportion_ci(successes: int, total: int, level: float = 0.95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if total <= 0:
        raise ValueError("total must be positive")
    if not 0 <= successes <= total:
        raise ValueError(f"successes {successes} outside [0, {total}]")
    if not 0 < level < 1:
        raise ValueError("level must be in (0, 1)")
    z = float(ndtri(0.5 + level / 2.0))
    p = successes / total
    z2 = z * z
    denom = 1.0 + z2 / total
    center = (p + z2 / (2.0 * total)) / denom
    half = (z / denom) * math.sqrt(p * (1.0 - p) / total + z2 / (4.0 * total * total))
    # at the boundaries center-half is exactly 0 (or center+half exactly 1);
    # return that rather than float residue
    low = 0.0 if successes == 0 else max(0.0, center - half)
    high = 1.0 if successes == total else min(1.0, center + half)
    return low, high


@dataclass(frozen=True)
class BucketStat:
    utterance_count: int
    code_count: int
    fraction: float | None  # None when the bucket is empty
    ci_low: float | None
    ci_high: float | None


@dataclass(frozen=True)
class TrendSeries:
    per_code: dict[MiCode, dict[TenureBucket, BucketStat]]
    bucket_totals: dict[TenureBucket, int]

    def rows(self) -> list[dict]:
        out = []
        for code in ALL_CODES:
            for bucket in BUCKET_ORDER:
                stat = self.per_code[code][bucket]
                out.append(
                    {
                        "code": code.value,
                        "bucket": bucket.value,
                        "utterances": stat.utterance_count,
                        "count": stat.code_count,
                        "fraction": stat.fraction,
                        "ci_low": stat.ci_low,
                        "ci_high": stat.ci_high,
                    }
                )
        return out


def code_fraction_by_bucket(
    corpus: Corpus,
    labels: Mapping[str, Collection[MiCode]],
    level: float = 0.95,
    join_times: Mapping[str, datetime] | None = None,
) -> TrendSeries:
    """Per-code usage fraction per tenure bucket with Wilson intervals.

    The corpus is expected to be pre-filtered (active listeners, minimum
    conversation length). Joining time defaults to each listener's first
    utterance within the given corpus; pass ``join_times`` to anchor tenure
    on the unfiltered corpus instead.
    """
    joins = dict(join_times) if join_times is not None else listener_first_utterances(corpus)
    totals: dict[TenureBucket, int] = {b: 0 for b in BUCKET_ORDER}
    counts: dict[MiCode, dict[TenureBucket, int]] = {
        code: {b: 0 for b in BUCKET_ORDER} for code in ALL_CODES
    }
    for conv in corpus:
        join = joins.get(conv.listener_id)
        if join is None:
            continue
        for utt in conv.utterances:
            if utt.speaker is not SpeakerRole.LISTENER:
                continue
            bucket = tenure_bucket(join, utt.timestamp)
            totals[bucket] += 1
            for code in labels.get(utt.utterance_id, ()):
                counts[code][bucket] += 1

    per_code: dict[MiCode, dict[TenureBucket, BucketStat]] = {}
    for code in ALL_CODES:
        stats: dict[TenureBucket, BucketStat] = {}
        for bucket in BUCKET_ORDER:
            total = totals[bucket]
            count = counts[code][bucket]
            if total == 0:
                stats[bucket] = BucketStat(0, 0, None, None, None)
            else:
                low, high = proportion_ci(count, total, level)
                stats[bucket] = BucketStat(total, count, count / total, low, high)
        per_code[code] = stats
    return TrendSeries(per_code=per_code, bucket_totals=totals)


# --- Pearson correlation matrices ---------------------------------------------


class CorrLevel(Enum):
    UTTERANCE = "Utterance"
    CONVERSATION = "Conversation"
    LISTENER = "Listener"


@dataclass(frozen=True)
class CorrMatrix:
    level: CorrLevel
    variables: tuple[str, ...]
    r: np.ndarray  # NaN where undefined (zero variance)
    n: int  # observations per cell

    def cell(self, a: str, b: str) -> float:
        i, j = self.variables.index(a), self.variables.index(b)
        return float(self.r[i, j])


def pearson_matrix(columns: np.ndarray) -> np.ndarray:
    """Pairwise Pearson coefficients of the columns of a 2-D array.

    Zero-variance columns give NaN rows/columns; defined diagonal cells are
    exactly 1.
    """
    X = np.asarray(columns, dtype=float)
    n, p = X.shape
    centered = X - X.mean(axis=0)
    ss = np.sqrt(np.sum(centered**2, axis=0))
    r = np.full((p, p), np.nan)
    for i in range(p):
        if ss[i] == 0:
            continue
        for j in range(i, p):
            if ss[j] == 0:
                continue
            value = float(centered[:, i] @ centered[:, j] / (ss[i] * ss[j]))
            r[i, j] = r[j, i] = min(1.0, max(-1.0, value))
        r[i, i] = 1.0
    return r


def _matrix_from_columns(
    columns: np.ndarray, variables: Sequence[str], level: CorrLevel
) -> CorrMatrix:
    if columns.shape[0] < 2:
        raise ValueError(f"{level.value}-level correlation needs at least 2 observations")
    return CorrMatrix(
        level=level,
        variables=tuple(variables),
        r=pearson_matrix(columns),
        n=int(columns.shape[0]),
    )


def cooccurrence_matrix(labels: Mapping[str, Collection[MiCode]]) -> CorrMatrix:
    """Utterance-level Pearson correlation of the 17 binary indicators."""
    ids = sorted(labels)
    if len(ids) < 2:
        raise ValueError("need at least 2 labeled utterances")
    X = np.zeros((len(ids), len(ALL_CODES)))
    for i, uid in enumerate(ids):
        for code in labels[uid]:
            X[i, ALL_CODES.index(code)] = 1.0
    return _matrix_from_columns(X, [c.value for c in ALL_CODES], CorrLevel.UTTERANCE)


def conversation_corr(corpus: Corpus, labels: Mapping[str, Collection[MiCode]]) -> CorrMatrix:
    """Conversation-level correlation of per-conversation code counts plus
    conversation length as an extra variable."""
    rows = []
    for conv in corpus:
        counts = np.zeros(len(ALL_CODES) + 1)
        for utt in conv.utterances:
            if utt.speaker is not SpeakerRole.LISTENER:
                continue
            for code in labels.get(utt.utterance_id, ()):
                counts[ALL_CODES.index(code)] += 1
        counts[-1] = len(conv)
        rows.append(counts)
    if len(rows) < 2:
        raise ValueError("need at least 2 conversations")
    variables = [c.value for c in ALL_CODES] + ["length"]
    return _matrix_from_columns(np.array(rows), variables, CorrLevel.CONVERSATION)


def listener_corr(corpus: Corpus, labels: Mapping[str, Collection[MiCode]]) -> CorrMatrix:
    """Listener-level correlation of per-listener code-usage rates."""
    utts: dict[str, int] = {}
    counts: dict[str, np.ndarray] = {}
    for conv in corpus:
        for utt in conv.utterances:
            if utt.speaker is not SpeakerRole.LISTENER:
                continue
            lid = conv.listener_id
            utts[lid] = utts.get(lid, 0) + 1
            if lid not in counts:
                counts[lid] = np.zeros(len(ALL_CODES))
            for code in labels.get(utt.utterance_id, ()):
                counts[lid][ALL_CODES.index(code)] += 1
    listeners = sorted(lid for lid, n in utts.items() if n > 0)
    if len(listeners) < 2:
        raise ValueError("need at least 2 listeners with utterances")
    rates = np.array([counts[lid] / utts[lid] for lid in listeners])
    return _matrix_from_columns(rates, [c.value for c in ALL_CODES], CorrLevel.LISTENER)


# --- TF-IDF top words ----------------------------------------------------------

#: Common English function words excluded from top-word reports. Fixed and
#: shipped with the artifact for reproducibility.
STOPWORDS = frozenset(
    """
    a about above after again against all am an and any are aren as at be
    because been before being below between both but by can cannot could
    couldn did didn do does doesn doing don down during each few for from
    further had hadn has hasn have haven having he her here hers herself him
    himself his how i if in into is isn it its itself just ll me mightn more
    most mustn my myself needn no nor not now o of off on once only or other
    our ours ourselves out over own re s same shan she should shouldn so some
    such t than that the their theirs them themselves then there these they
    this those through to too under until up ve very was wasn we were weren
    what when where which while who whom why will with won would wouldn you
    your yours yourself yourselves
    """.split()
)

_SUFFIX_RULES: tuple[tuple[str, str], ...] = (
    ("sses", "ss"),
    ("ies", "i"),
    ("ness", ""),
    ("ment", ""),
    ("ing", ""),
    ("ed", ""),
    ("ly", ""),
    ("es", ""),
    ("s", ""),
)


def stem(token: str) -> str:
    """Light deterministic suffix stripper (first matching rule wins)."""
    for suffix, replacement in _SUFFIX_RULES:
        if token.endswith(suffix) and len(token) - len(suffix) + len(replacement) >= 3:
            return token[: -len(suffix)] + replacement
    return token


def _tokenize(text: str) -> list[str]:
    return [stem(t) for t in _WORD_RE.findall(text.lower()) if t not in STOPWORDS]


def _code_documents(
    corpus: Corpus, labels: Mapping[str, Collection[MiCode]]
) -> dict[MiCode, list[str]]:
    docs: dict[MiCode, list[str]] = {code: [] for code in ALL_CODES}
    for conv in corpus:
        for utt in conv.utterances:
            for code in labels.get(utt.utterance_id, ()):
                docs[code].extend(_tokenize(utt.text))
    return docs


def tfidf_top_words(
    corpus: Corpus,
    labels: Mapping[str, Collection[MiCode]],
    code: MiCode,
    n: int = 5,
) -> list[tuple[str, float]]:
    """Top-n stemmed tokens for one code by TF-IDF over the 17 per-code
    documents (idf = ln(1 + N/(1 + df))); ties break lexicographically."""
    report = tfidf_report(corpus, labels, n=n, codes=[code])
    return report[code]


def tfidf_report(
    corpus: Corpus,
    labels: Mapping[str, Collection[MiCode]],
    n: int = 5,
    codes: Sequence[MiCode] | None = None,
) -> dict[MiCode, list[tuple[str, float]]]:
    docs = _code_documents(corpus, labels)
    df: dict[str, int] = {}
    for tokens in docs.values():
        for token in set(tokens):
            df[token] = df.get(token, 0) + 1
    n_docs = len(ALL_CODES)

    wanted = list(codes) if codes is not None else list(ALL_CODES)
    out: dict[MiCode, list[tuple[str, float]]] = {}
    for code in wanted:
        tokens = docs[code]
        if not tokens:
            raise ValueError(f"no labeled utterances for code {code.value}")
        tf: dict[str, int] = {}
        for token in tokens:
            tf[token] = tf.get(token, 0) + 1
        scored = [
            (token, count * math.log(1.0 + n_docs / (1.0 + df[token])))
            for token, count in tf.items()
        ]
        scored.sort(key=lambda item: (-item[1], item[0]))
        out[code] = scored[:n]
    return out


def plot_trends(series: TrendSeries, path: str) -> None:
    """Optional static plot of bucket fractions per code (PNG/SVG by
    extension); requires matplotlib."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(10, 6))
    x = range(len(BUCKET_ORDER))
    for code in ALL_CODES:
        stats = series.per_code[code]
        ys = [stats[b].fraction for b in BUCKET_ORDER]
        if all(y is None for y in ys):
            continue
        ax.plot(x, [float("nan") if y is None else y for y in ys], marker="o", label=code.value)
    ax.set_xticks(list(x), [b.value for b in BUCKET_ORDER])
    ax.set_xlabel("tenure bucket")
    ax.set_ylabel("fraction of listener utterances")
    ax.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)

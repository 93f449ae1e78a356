"""Deterministic synthetic-corpus generator with fully known ground truth.

Every random quantity derives from a single seed through namespaced
sub-streams (one per conversation), so identical seeds give byte-identical
corpora regardless of how generation is chunked.

Codes per listener utterance are drawn as independent Bernoullis, then
repaired to the 1..3-codes rule: all-zero rows are redrawn and rows with
more than three codes keep a uniform random 3-subset. The underlying
Bernoulli rates are calibrated (exact count-distribution math, fixed-point
iteration) so that post-repair per-code frequencies match the
GeneratorSpec's target probabilities. Co-occurrence boosts, when
configured, are applied after the zero-redraw and perturb marginals
slightly; the planted record flags this.

Conversation ratings are drawn from a planted logistic model on the
emitted code counts and age controls, then discretized so that rating
binarization reproduces the latent satisfaction draw exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from typing import Mapping

import numpy as np

from .codes import ALL_CODES, MiCode
from .corpus import Conversation, Corpus, SpeakerRole, Utterance

_BASE_TIME = datetime(2020, 1, 1, tzinfo=timezone.utc)
_UTTERANCE_GAP_SECONDS = 20
_MAX_CODES = 3

#: Annotated-corpus label counts that shape the default code frequencies.
_DEFAULT_CODE_COUNTS: dict[MiCode, int] = {
    MiCode.GIVING_INFORMATION: 304,
    MiCode.REFLECTION: 1697,
    MiCode.AFFIRM: 346,
    MiCode.CLOSED_QUESTION: 1956,
    MiCode.OPEN_QUESTION: 2507,
    MiCode.PERSUADE: 1918,
    MiCode.DIRECT: 250,
    MiCode.EMPHASIZING_AUTONOMY: 120,
    MiCode.GROUNDING: 1027,
    MiCode.PERSONAL_DISCLOSURE: 1605,
    MiCode.INTRODUCTION: 1260,
    MiCode.CONCLUSION: 340,
    MiCode.SEEKING_COLLABORATION: 271,
    MiCode.SUPPORT: 1493,
    MiCode.INAPPROPRIATE: 224,
    MiCode.CHIT_CHAT: 963,
    MiCode.OTHER: 1299,
}
_DEFAULT_TOTAL_UTTERANCES = 14797

DEFAULT_LEXICONS: dict[MiCode, tuple[str, ...]] = {
    MiCode.AFFIRM: ("proud", "bravo", "awesome", "great"),
    MiCode.EMPHASIZING_AUTONOMY: ("decide", "yours", "freedom", "control"),
    MiCode.OPEN_QUESTION: ("how", "what", "explore", "describe"),
    MiCode.CLOSED_QUESTION: ("whether", "confirm", "did", "yesno"),
    MiCode.PERSUADE: ("suggest", "recommend", "consider", "perhaps"),
    MiCode.REFLECTION: ("sounds", "hearing", "seems", "restate"),
    MiCode.SEEKING_COLLABORATION: ("together", "permission", "collaborate", "allowed"),
    MiCode.DIRECT: ("must", "immediately", "stop", "obey"),
    MiCode.INAPPROPRIATE: ("rude", "crude", "vulgar", "offensive"),
    MiCode.GROUNDING: ("okay", "yeah", "hmm", "sure"),
    MiCode.GIVING_INFORMATION: ("resource", "link", "fact", "info"),
    MiCode.SUPPORT: ("understand", "sorry", "compassion", "care"),
    MiCode.PERSONAL_DISCLOSURE: ("personally", "experience", "story", "relate"),
    MiCode.INTRODUCTION: ("hello", "good", "morning", "today", "welcome"),
    MiCode.CONCLUSION: ("bye", "goodbye", "farewell", "leaving"),
    MiCode.CHIT_CHAT: ("weather", "movie", "hobby", "trivia"),
    MiCode.OTHER: ("misc", "blank", "stray", "noise"),
}


def default_code_probs() -> dict[MiCode, float]:
    return {
        code: count / _DEFAULT_TOTAL_UTTERANCES for code, count in _DEFAULT_CODE_COUNTS.items()
    }


def _filler_vocabulary() -> tuple[str, ...]:
    """Fixed 1,000 pseudo-words, disjoint from every default lexicon."""
    consonants = "bdfgklmnprstvz"
    vowels = "aeiou"
    syllables = [c + v for c in consonants for v in vowels]
    reserved = {w for lex in DEFAULT_LEXICONS.values() for w in lex}
    words = []
    for a in syllables:
        for b in syllables:
            w = a + b
            if w not in reserved:
                words.append(w)
            if len(words) == 1000:
                return tuple(words)
    raise AssertionError("filler vocabulary underfilled")


FILLER_WORDS: tuple[str, ...] = _filler_vocabulary()


@dataclass(frozen=True)
class GeneratorSpec:
    seed: int = 0
    n_conversations: int = 100
    n_listeners: int = 10
    n_members: int = 40
    mean_length: float = 12.0
    length_sd: float = 2.0
    min_length: int = 4
    code_probs: dict[MiCode, float] = field(default_factory=default_code_probs)
    lexicons: dict[MiCode, tuple[str, ...]] = field(
        default_factory=lambda: dict(DEFAULT_LEXICONS)
    )
    context_codes: frozenset[MiCode] = frozenset()
    beta_codes: dict[MiCode, float] = field(default_factory=dict)
    beta_intercept: float = 1.0
    beta_member_age: float = 0.0
    beta_listener_age: float = 0.0
    drift: dict[MiCode, tuple[float, float]] = field(default_factory=dict)
    cooccur: dict[tuple[MiCode, MiCode], float] = field(default_factory=dict)
    listener_propensity_sd: float = 0.0
    coupled_codes: tuple[tuple[MiCode, MiCode], ...] = ()
    rating_missing_prob: float = 0.0
    age_missing_prob: float = 0.0
    span_days: float = 730.0
    balance_tenure_buckets: bool = False
    member_age_range: tuple[int, int] = (18, 60)
    listener_age_range: tuple[int, int] = (18, 70)

    def validate(self) -> None:
        for code, p in self.code_probs.items():
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"probability for {code.value} outside [0,1]: {p}")
            if p > 0 and not self.lexicons.get(code):
                raise ValueError(f"active code {code.value} has an empty lexicon")
        for code, (a, b) in self.drift.items():
            if not (0.0 <= a <= 1.0 and 0.0 <= b <= 1.0):
                raise ValueError(f"drift for {code.value} outside [0,1]")
            if not self.lexicons.get(code):
                raise ValueError(f"drifting code {code.value} has an empty lexicon")
        seen: set[str] = set()
        for code, words in self.lexicons.items():
            overlap = seen & set(words)
            if overlap:
                raise ValueError(f"lexicons are not pairwise disjoint: {sorted(overlap)}")
            seen.update(words)
        if self.n_conversations <= 0 or self.n_listeners <= 0 or self.n_members <= 0:
            raise ValueError("population sizes must be positive")


# --- exact marginal math for the 1..3 repair ----------------------------------


def _count_distribution(q: np.ndarray, skip: int | None = None) -> np.ndarray:
    """Distribution of the number of successes among independent
    Bernoullis with rates q (optionally leaving one out)."""
    dist = np.zeros(len(q) + 1)
    dist[0] = 1.0
    for i, p in enumerate(q):
        if i == skip:
            continue
        shifted = np.empty_like(dist)
        shifted[0] = 0.0
        shifted[1:] = dist[:-1]
        dist = dist * (1.0 - p) + shifted * p
    return dist


def repaired_marginals(q: np.ndarray) -> np.ndarray:
    """Per-code inclusion probability after zero-redraw and 3-cap repair."""
    q = np.asarray(q, dtype=float)
    keep_frac = np.array(
        [min(1.0, _MAX_CODES / x) if x > 0 else 0.0 for x in range(len(q) + 2)]
    )
    p_any = 1.0 - float(np.prod(1.0 - q))
    if p_any <= 0:
        return np.zeros_like(q)
    out = np.empty_like(q)
    for c in range(len(q)):
        if q[c] == 0.0:
            out[c] = 0.0
            continue
        rest = _count_distribution(q, skip=c)
        # present with total count x means x-1 others; kept with prob 3/x
        total = 0.0
        for others in range(len(rest)):
            total += rest[others] * keep_frac[others + 1]
        out[c] = q[c] * total / p_any
    return out


def calibrate_rates(targets: np.ndarray, max_iter: int = 300, tol: float = 1e-12) -> np.ndarray:
    """Bernoulli rates whose repaired marginals equal the targets.

    Feasible targets must sum to more than 1 (every utterance carries at
    least one code) and at most ~2.5 (the 3-codes cap).
    """
    targets = np.asarray(targets, dtype=float)
    if targets.sum() >= 2.5:
        raise ValueError(
            f"infeasible spec: target code probabilities sum to {targets.sum():.3f}, "
            "which the 3-codes cap cannot accommodate"
        )
    if targets.sum() <= 1.005:
        raise ValueError(
            f"infeasible spec: target code probabilities sum to {targets.sum():.3f}; "
            "the 1-code minimum forces per-utterance code frequencies to sum above 1"
        )
    q = targets.copy()
    for _ in range(max_iter):
        eff = repaired_marginals(q)
        ratio = np.where(eff > 0, targets / np.maximum(eff, 1e-300), 0.0)
        new_q = np.clip(q * ratio, 0.0, 0.97)
        change = np.abs(new_q - q).max()
        q = new_q
        if change < tol:
            break
    eff = repaired_marginals(q)
    if np.abs(eff - targets).max() > 1e-6:
        raise ValueError("infeasible spec: rate calibration did not converge")
    return q


# --- generation ----------------------------------------------------------------


def _bucket_index(day: float) -> int:
    if day < 30:
        return 0
    if day < 180:
        return 1
    if day < 365:
        return 2
    return 3


_BUCKET_RANGES = ((0.0, 29.0), (30.0, 179.0), (180.0, 364.0), (365.0, None))


def _target_probs_for_bucket(spec: GeneratorSpec, bucket: int) -> np.ndarray:
    probs = np.array([spec.code_probs.get(code, 0.0) for code in ALL_CODES])
    for code, (start, end) in spec.drift.items():
        probs[ALL_CODES.index(code)] = start + (end - start) * bucket / 3.0
    return probs


def generate_corpus(
    spec: GeneratorSpec,
) -> tuple[Corpus, dict[str, frozenset[MiCode]], dict]:
    """Build (corpus, ground-truth labels, planted-parameter record)."""
    spec.validate()
    n_codes = len(ALL_CODES)
    code_index = {code: i for i, code in enumerate(ALL_CODES)}

    participants_rng = np.random.default_rng([spec.seed, 1])
    schedule_rng = np.random.default_rng([spec.seed, 2])

    member_ages = participants_rng.integers(
        spec.member_age_range[0], spec.member_age_range[1] + 1, size=spec.n_members
    )
    listener_ages = participants_rng.integers(
        spec.listener_age_range[0], spec.listener_age_range[1] + 1, size=spec.n_listeners
    )
    member_age_missing = participants_rng.random(spec.n_members) < spec.age_missing_prob
    listener_age_missing = participants_rng.random(spec.n_listeners) < spec.age_missing_prob

    # per-listener per-code propensity multipliers (coupled codes share a latent)
    latents = participants_rng.standard_normal((spec.n_listeners, n_codes))
    for a, b in spec.coupled_codes:
        latents[:, code_index[b]] = latents[:, code_index[a]]
    sd = spec.listener_propensity_sd
    multipliers = np.exp(sd * latents - 0.5 * sd * sd) if sd > 0 else np.ones_like(latents)

    # schedule: listener round-robin; first conversation per listener at day 0
    listener_of = [i % spec.n_listeners for i in range(spec.n_conversations)]
    member_of = schedule_rng.integers(0, spec.n_members, size=spec.n_conversations)
    days = np.zeros(spec.n_conversations)
    per_listener_count = [0] * spec.n_listeners
    for i in range(spec.n_conversations):
        lid = listener_of[i]
        if per_listener_count[lid] == 0:
            days[i] = 0.0
        elif spec.balance_tenure_buckets:
            bucket = (per_listener_count[lid] - 1) % 4
            lo, hi = _BUCKET_RANGES[bucket]
            hi = hi if hi is not None else max(spec.span_days - 1.0, 366.0)
            days[i] = schedule_rng.uniform(lo, hi)
        else:
            days[i] = schedule_rng.uniform(0.0, max(spec.span_days - 1.0, 1.0))
        per_listener_count[lid] += 1

    max_len = int(spec.mean_length + 8 * spec.length_sd) + 4
    lengths = np.clip(
        np.rint(schedule_rng.normal(spec.mean_length, spec.length_sd, size=spec.n_conversations)),
        spec.min_length,
        max_len,
    ).astype(int)

    # calibrated Bernoulli rates per (bucket, listener-multiplier signature)
    base_targets = [_target_probs_for_bucket(spec, b) for b in range(4)]
    rate_cache: dict[bytes, np.ndarray] = {}

    if sd > 0:

        def rates_for(bucket: int, listener: int) -> np.ndarray:
            # propensity-scaled targets, pulled back into the band the
            # 1..3-codes rule can realize (relative propensities preserved)
            targets = np.clip(base_targets[bucket] * multipliers[listener], 0.0, 0.8)
            total = targets.sum()
            if total > 2.2:
                targets = targets * (2.2 / total)
            elif total < 1.10:
                targets = targets * (1.10 / total)
            key = targets.tobytes()
            cached = rate_cache.get(key)
            if cached is None:
                cached = calibrate_rates(targets)
                rate_cache[key] = cached
            return cached

    else:
        bucket_rates = [calibrate_rates(np.clip(t, 0.0, 0.9)) for t in base_targets]

        def rates_for(bucket: int, listener: int) -> np.ndarray:
            return bucket_rates[bucket]

    cooccur_items = [
        (code_index[a], code_index[b], boost) for (a, b), boost in spec.cooccur.items()
    ]
    context_idx = {code_index[c] for c in spec.context_codes}
    lexicon_lists = [tuple(spec.lexicons.get(code, ())) for code in ALL_CODES]
    beta = np.array([spec.beta_codes.get(code, 0.0) for code in ALL_CODES])

    conversations: list[Conversation] = []
    labels: dict[str, frozenset[MiCode]] = {}
    n_filler = len(FILLER_WORDS)
    gaps = [timedelta(seconds=_UTTERANCE_GAP_SECONDS * g) for g in range(max_len + 1)]
    id_suffix = [f"_u{g:04d}" for g in range(max_len + 1)]
    lengths_list = lengths.tolist()
    member_list = member_of.tolist()
    days_list = days.tolist()

    for i in range(spec.n_conversations):
        rng = np.random.default_rng([spec.seed, 3, i])
        lid = listener_of[i]
        mid = member_list[i]
        day = days_list[i]
        bucket = _bucket_index(day)
        start = _BASE_TIME + timedelta(days=day)

        n_utts = lengths_list[i]
        m = n_utts // 2  # listener utterances sit at odd positions

        q = rates_for(bucket, lid)
        present = rng.random((m, n_codes)) < q
        zero = ~present.any(axis=1)
        while zero.any():
            present[zero] = rng.random((int(zero.sum()), n_codes)) < q
            zero = ~present.any(axis=1)
        for ia, ib, boost in cooccur_items:
            can_add = present[:, ia] & ~present[:, ib]
            if can_add.any():
                present[can_add, ib] = rng.random(int(can_add.sum())) < boost
        over = np.flatnonzero(present.sum(axis=1) > _MAX_CODES)
        for row in over:
            drawn = np.flatnonzero(present[row])
            keep = rng.choice(drawn, size=_MAX_CODES, replace=False)
            present[row, :] = False
            present[row, keep] = True

        # flatten the code assignment once; the utterance loop below is pure
        # Python over small lists
        rows_nz, cols_nz = np.nonzero(present)
        codes_per_utt: list[list[int]] = [[] for _ in range(m)]
        for r, c in zip(rows_nz.tolist(), cols_nz.tolist()):
            codes_per_utt[r].append(c)

        # second pass for text: context codes plant their keyword in the
        # preceding (member) utterance instead of the target
        filler_counts = rng.integers(2, 6, size=n_utts).tolist()
        filler_words = [
            FILLER_WORDS[j] for j in rng.integers(0, n_filler, size=int(sum(filler_counts))).tolist()
        ]
        # one keyword draw per code slot (records carry at most 3 codes)
        keyword_draws = rng.random((m, _MAX_CODES)).tolist()

        cid = f"c{i:06d}"
        utterances = []
        fpos = 0
        listener_role = SpeakerRole.LISTENER
        member_role = SpeakerRole.MEMBER
        for g in range(n_utts):
            take = filler_counts[g]
            tokens = filler_words[fpos : fpos + take]
            fpos += take
            if g % 2 == 1:
                j = g // 2
                draws = keyword_draws[j]
                for slot, c in enumerate(codes_per_utt[j]):
                    if c in context_idx:
                        continue
                    lex = lexicon_lists[c]
                    tokens.append(lex[int(draws[slot] * len(lex))])
            elif g + 1 < n_utts:
                j = (g + 1) // 2
                draws = keyword_draws[j]
                for slot, c in enumerate(codes_per_utt[j]):
                    if c in context_idx:
                        lex = lexicon_lists[c]
                        tokens.append(lex[int(draws[slot] * len(lex))])
            utterances.append(
                Utterance(
                    cid + id_suffix[g],
                    cid,
                    g,
                    listener_role if g % 2 == 1 else member_role,
                    start + gaps[g],
                    " ".join(tokens),
                )
            )

        for j in range(m):
            labels[cid + id_suffix[2 * j + 1]] = frozenset(
                ALL_CODES[c] for c in codes_per_utt[j]
            )

        counts = present.sum(axis=0).astype(float)
        member_age = None if member_age_missing[mid] else int(member_ages[mid])
        listener_age = None if listener_age_missing[lid] else int(listener_ages[lid])
        logit = (
            spec.beta_intercept
            + float(beta @ counts)
            + spec.beta_member_age * (member_age if member_age is not None else 0)
            + spec.beta_listener_age * (listener_age if listener_age is not None else 0)
        )
        p_sat = 1.0 / (1.0 + math.exp(-max(-35.0, min(35.0, logit))))
        satisfied = rng.random() < p_sat
        if rng.random() < spec.rating_missing_prob:
            rating = None
        elif satisfied:
            rating = int(rng.integers(4, 6))
        else:
            rating = int(rng.integers(1, 4))

        conversations.append(
            Conversation(
                conversation_id=cid,
                listener_id=f"l{lid:04d}",
                member_id=f"m{mid:05d}",
                listener_age=listener_age,
                member_age=member_age,
                rating=rating,
                utterances=tuple(utterances),
            )
        )

    planted: dict = {
        "seed": spec.seed,
        "n_conversations": spec.n_conversations,
        "n_listeners": spec.n_listeners,
        "n_members": spec.n_members,
        "code_probs": {code.value: spec.code_probs.get(code, 0.0) for code in ALL_CODES},
        "drift": {code.value: list(v) for code, v in spec.drift.items()},
        "beta_codes": {code.value: v for code, v in spec.beta_codes.items()},
        "beta_intercept": spec.beta_intercept,
        "beta_member_age": spec.beta_member_age,
        "beta_listener_age": spec.beta_listener_age,
        "context_codes": sorted(c.value for c in spec.context_codes),
        "cooccur": {f"{a.value}->{b.value}": p for (a, b), p in spec.cooccur.items()},
        "marginals_exact": not spec.cooccur,
        "lexicons": {code.value: list(words) for code, words in spec.lexicons.items()},
    }
    return Corpus(conversations=tuple(conversations)), labels, planted


def labels_to_records(labels: Mapping[str, frozenset[MiCode]], source: str = "human:truth"):
    """Ground-truth labels as store records (lazy import avoids a cycle)."""
    from .annotation import LabelRecord

    records = []
    for uid in sorted(labels):
        codes = tuple(sorted(labels[uid], key=lambda c: c.value))
        records.append(
            LabelRecord(
                utterance_id=uid,
                source=source,
                codes=codes,
                decided_at="1970-01-01T00:00:00Z",
            )
        )
    return records

"""Human-label store, agreement computation, and the suggestion loop.

The store is an append-only log of label records; the current view keeps
the latest record per (utterance, source). Agreement is Krippendorff's
alpha with a nominal metric over the per-code multi-hot decomposition:
each code is scored separately on binary presence/absence, so the
per-code rows line up with the one-vs-all modeling.

A distinguished "consensus" annotator represents reconciliation outcomes;
its records take precedence for training-set export and are excluded from
inter-annotator agreement.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .classifier import ModelRegistry
from .codes import ALL_CODES, MiCode, parse_code
from .corpus import Corpus, ContextualUtterance, SpeakerRole, build_context

MAX_CODES_PER_RECORD = 3
CONSENSUS_ANNOTATOR = "consensus"
#: Alpha at or above this is the accepted agreement level; some codes are
#: known to land below it.
AGREEMENT_ACCEPTANCE_ALPHA = 0.7


class LabelStoreError(ValueError):
    pass


@dataclass(frozen=True)
class LabelRecord:
    utterance_id: str
    source: str  # "human:<annotator_id>" | "model:<model_id>"
    codes: tuple[MiCode, ...]
    confidence: tuple[float, ...] | None = None  # aligned with codes
    decided_at: str = ""

    @property
    def is_human(self) -> bool:
        return self.source.startswith("human:")

    @property
    def annotator_id(self) -> str | None:
        return self.source.split(":", 1)[1] if self.is_human else None

    def to_json(self) -> str:
        obj: dict = {
            "utterance_id": self.utterance_id,
            "source": self.source,
            "codes": [c.value for c in self.codes],
            "decided_at": self.decided_at,
        }
        if self.confidence is not None:
            obj["confidence"] = list(self.confidence)
        return json.dumps(obj, ensure_ascii=False, sort_keys=True)


def _validate_codes(codes: Sequence[MiCode]) -> tuple[MiCode, ...]:
    if not codes:
        raise LabelStoreError("a label record needs at least one code")
    if len(codes) > MAX_CODES_PER_RECORD:
        raise LabelStoreError(f"max {MAX_CODES_PER_RECORD} codes per record, got {len(codes)}")
    if len(set(codes)) != len(codes):
        raise LabelStoreError("duplicate codes in record")
    for code in codes:
        if not isinstance(code, MiCode):
            raise LabelStoreError(f"unknown MI code: {code!r}")
    return tuple(codes)


def parse_record(obj: Mapping) -> LabelRecord:
    codes = _validate_codes([parse_code(name) for name in obj["codes"]])
    source = obj["source"]
    if not isinstance(source, str) or ":" not in source or source.split(":", 1)[0] not in (
        "human",
        "model",
    ):
        raise LabelStoreError(f"bad source: {source!r}")
    confidence = obj.get("confidence")
    if confidence is not None:
        confidence = tuple(float(c) for c in confidence)
        if len(confidence) != len(codes):
            raise LabelStoreError("confidence list not aligned with codes")
        if any(not 0.0 <= c <= 1.0 for c in confidence):
            raise LabelStoreError("confidence outside [0, 1]")
    return LabelRecord(
        utterance_id=str(obj["utterance_id"]),
        source=source,
        codes=codes,
        confidence=confidence,
        decided_at=str(obj.get("decided_at", "")),
    )


def _now_iso() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


class LabelStore:
    """Append-only label log, optionally file-backed.

    Appends are durable before acknowledgment (flush + fsync). Replaying
    the log reconstructs the identical current view; a trailing partial
    line from a crash is ignored. With ``exclusive`` the store takes an
    advisory lock so a second writer on the same file fails fast.
    """

    def __init__(
        self,
        path: str | Path | None = None,
        known_utterances: set[str] | None = None,
        exclusive: bool = False,
    ):
        self.path = Path(path) if path is not None else None
        self.known_utterances = known_utterances
        self.records: list[LabelRecord] = []
        self._view: dict[tuple[str, str], LabelRecord] = {}
        self._fh = None
        self._lock_fh = None
        if self.path is not None:
            if exclusive:
                self._acquire_lock()
            if self.path.exists():
                self._replay(self.path)
            self._fh = self.path.open("a", encoding="utf-8")

    def _acquire_lock(self) -> None:
        import fcntl

        lock_path = self.path.with_suffix(self.path.suffix + ".lock")
        self._lock_fh = lock_path.open("a")
        try:
            fcntl.flock(self._lock_fh.fileno(), fcntl.LOCK_EX | fcntl.LOCK_NB)
        except OSError:
            self._lock_fh.close()
            self._lock_fh = None
            raise LabelStoreError(
                f"label store {self.path} is locked by another service instance"
            ) from None

    def _replay(self, path: Path) -> None:
        data = path.read_text(encoding="utf-8")
        lines = data.split("\n")
        # Without a trailing newline the final line may be a torn write.
        complete, tail = lines[:-1], lines[-1]
        for lineno, line in enumerate(complete, start=1):
            if not line.strip():
                continue
            try:
                record = parse_record(json.loads(line))
            except (json.JSONDecodeError, KeyError, LabelStoreError) as exc:
                raise LabelStoreError(f"{path}:{lineno}: corrupt record: {exc}") from exc
            self._apply(record)
        if tail.strip():
            try:
                self._apply(parse_record(json.loads(tail)))
            except (json.JSONDecodeError, KeyError, LabelStoreError):
                pass  # torn final write: not acknowledged, dropped on replay

    def _apply(self, record: LabelRecord) -> None:
        self.records.append(record)
        self._view[(record.utterance_id, record.source)] = record

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None
        if self._lock_fh is not None:
            self._lock_fh.close()
            self._lock_fh = None

    def append(self, record: LabelRecord) -> LabelRecord:
        _validate_codes(record.codes)
        if self.known_utterances is not None and record.utterance_id not in self.known_utterances:
            raise LabelStoreError(f"unknown utterance: {record.utterance_id!r}")
        if not record.decided_at:
            record = LabelRecord(
                utterance_id=record.utterance_id,
                source=record.source,
                codes=record.codes,
                confidence=record.confidence,
                decided_at=_now_iso(),
            )
        if self._fh is not None:
            self._fh.write(record.to_json() + "\n")
            self._fh.flush()
            os.fsync(self._fh.fileno())
        self._apply(record)
        return record

    def append_if_changed(self, record: LabelRecord) -> bool:
        """Idempotent append: skip when the current view already holds an
        identical (codes, confidence) record for (utterance, source)."""
        current = self._view.get((record.utterance_id, record.source))
        if current is not None and current.codes == record.codes and current.confidence == record.confidence:
            return False
        self.append(record)
        return True

    # -- views ------------------------------------------------------------

    def current_view(self) -> dict[tuple[str, str], LabelRecord]:
        return dict(self._view)

    def sources(self) -> set[str]:
        return {source for (_, source) in self._view}

    def human_annotators(self, include_consensus: bool = False) -> list[str]:
        out = set()
        for (_, source) in self._view:
            if source.startswith("human:"):
                annotator = source.split(":", 1)[1]
                if include_consensus or annotator != CONSENSUS_ANNOTATOR:
                    out.add(annotator)
        return sorted(out)

    def human_labeled_utterances(self) -> set[str]:
        return {uid for (uid, source) in self._view if source.startswith("human:")}

    def model_labeled_utterances(self, model_source: str | None = None) -> set[str]:
        return {
            uid
            for (uid, source) in self._view
            if source.startswith("model:") and (model_source is None or source == model_source)
        }

    def record_for(self, utterance_id: str, source: str) -> LabelRecord | None:
        return self._view.get((utterance_id, source))

    def codes_by_utterance(self, source_prefix: str = "model:") -> dict[str, frozenset[MiCode]]:
        """Latest per-utterance code sets, merged across matching sources."""
        merged: dict[str, set[MiCode]] = {}
        for (uid, source), record in self._view.items():
            if source.startswith(source_prefix):
                merged.setdefault(uid, set()).update(record.codes)
        return {uid: frozenset(codes) for uid, codes in merged.items()}

    def effective_human_codes(self) -> dict[str, frozenset[MiCode]]:
        """Per-utterance human labels with consensus precedence: the
        consensus record wins outright, else the union over annotators."""
        consensus: dict[str, frozenset[MiCode]] = {}
        pooled: dict[str, set[MiCode]] = {}
        for (uid, source), record in self._view.items():
            if not source.startswith("human:"):
                continue
            if source == f"human:{CONSENSUS_ANNOTATOR}":
                consensus[uid] = frozenset(record.codes)
            else:
                pooled.setdefault(uid, set()).update(record.codes)
        out = {uid: frozenset(codes) for uid, codes in pooled.items()}
        out.update(consensus)
        return out


def load_label_file(path: str | Path) -> LabelStore:
    """Open an existing label file read-only (no write handle)."""
    store = LabelStore(path=None)
    store._replay(Path(path))
    return store


def write_label_file(records: Iterable[LabelRecord], path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(record.to_json() + "\n")


# --- Krippendorff's alpha -----------------------------------------------------


@dataclass(frozen=True)
class AlphaResult:
    alpha: float | None  # None = undefined (no pairable units or zero
    # expected disagreement), reported explicitly
    units_used: int
    pairable_values: int

    @property
    def defined(self) -> bool:
        return self.alpha is not None


def krippendorff_alpha(values: np.ndarray) -> AlphaResult:
    """Nominal-metric alpha over a units x observers matrix with NaN for
    missing ratings.

    Uses the coincidence-matrix formulation: a unit with m ratings
    contributes its value pairs weighted 1/(m-1). Units with fewer than two
    ratings are excluded.
    """
    values = np.asarray(values, dtype=float)
    if values.ndim != 2:
        raise ValueError("reliability matrix must be 2-D (units x observers)")

    unit_values: list[np.ndarray] = []
    for row in values:
        present = row[~np.isnan(row)]
        if len(present) >= 2:
            unit_values.append(present)
    if not unit_values:
        return AlphaResult(alpha=None, units_used=0, pairable_values=0)

    categories = sorted({float(v) for row in unit_values for v in row})
    cat_index = {c: i for i, c in enumerate(categories)}
    n_cats = len(categories)
    coincidence = np.zeros((n_cats, n_cats))
    for row in unit_values:
        m = len(row)
        counts = np.zeros(n_cats)
        for v in row:
            counts[cat_index[float(v)]] += 1
        pair_counts = np.outer(counts, counts) - np.diag(counts)
        coincidence += pair_counts / (m - 1)

    n = coincidence.sum()
    marginals = coincidence.sum(axis=1)
    observed_disagreement = (n - np.trace(coincidence)) / n
    expected_disagreement = (n * n - np.sum(marginals**2)) / (n * (n - 1))
    if expected_disagreement <= 0:
        return AlphaResult(alpha=None, units_used=len(unit_values), pairable_values=int(round(n)))
    alpha = 1.0 - observed_disagreement / expected_disagreement
    return AlphaResult(
        alpha=float(alpha), units_used=len(unit_values), pairable_values=int(round(n))
    )


def reliability_matrix(
    store: LabelStore,
    code: MiCode,
    observers: Sequence[str] | None = None,
    utterance_ids: Sequence[str] | None = None,
) -> tuple[np.ndarray, list[str], list[str]]:
    """Binary presence/absence matrix for one code from human records only
    (consensus excluded). Returns (matrix, unit_ids, observer_ids); cells
    are NaN where the observer never labeled the unit."""
    obs = list(observers) if observers is not None else store.human_annotators()
    if utterance_ids is None:
        units = sorted(
            {
                uid
                for (uid, source) in store.current_view()
                if source.startswith("human:") and source != f"human:{CONSENSUS_ANNOTATOR}"
            }
        )
    else:
        units = list(utterance_ids)
    matrix = np.full((len(units), len(obs)), np.nan)
    for j, annotator in enumerate(obs):
        source = f"human:{annotator}"
        for i, uid in enumerate(units):
            record = store.record_for(uid, source)
            if record is not None:
                matrix[i, j] = 1.0 if code in record.codes else 0.0
    return matrix, units, obs


@dataclass(frozen=True)
class AgreementReport:
    per_code: dict[MiCode, AlphaResult]
    positives: dict[MiCode, int]
    cumulative: AlphaResult

    def to_dict(self) -> dict:
        return {
            "per_code": {
                code.value: {
                    "alpha": result.alpha,
                    "units_used": result.units_used,
                    "positives": self.positives[code],
                }
                for code, result in self.per_code.items()
            },
            "cumulative": {
                "alpha": self.cumulative.alpha,
                "units_used": self.cumulative.units_used,
            },
        }


def agreement_report(store: LabelStore, codes: Sequence[MiCode] = ALL_CODES) -> AgreementReport:
    """Per-code alphas over the multi-hot view plus per-code positive counts.

    The cumulative row pools (unit, code) pairs as units, a definition
    choice documented with the artifact.
    """
    observers = store.human_annotators()
    per_code: dict[MiCode, AlphaResult] = {}
    positives: dict[MiCode, int] = {}
    stacked: list[np.ndarray] = []
    for code in codes:
        matrix, _, _ = reliability_matrix(store, code, observers=observers)
        per_code[code] = krippendorff_alpha(matrix) if matrix.size else AlphaResult(None, 0, 0)
        if matrix.size:
            stacked.append(matrix)
        positives[code] = sum(
            1
            for (_, source), record in store.current_view().items()
            if source.startswith("human:")
            and source != f"human:{CONSENSUS_ANNOTATOR}"
            and code in record.codes
        )
    cumulative = (
        krippendorff_alpha(np.vstack(stacked)) if stacked else AlphaResult(None, 0, 0)
    )
    return AgreementReport(per_code=per_code, positives=positives, cumulative=cumulative)


# --- suggestion queue ---------------------------------------------------------


@dataclass(frozen=True)
class SuggestionItem:
    utterance_id: str
    context_preview: str
    suggestions: dict[MiCode, float]  # every confidence >= queue threshold
    model_ids: tuple[str, ...]

    @property
    def max_confidence(self) -> float:
        return max(self.suggestions.values())


@dataclass(frozen=True)
class SuggestionQueue:
    threshold: float
    k: int
    items: tuple[SuggestionItem, ...]

    def __len__(self) -> int:
        return len(self.items)

    def utterance_ids(self) -> set[str]:
        return {item.utterance_id for item in self.items}


def suggest(
    registry: ModelRegistry,
    corpus: Corpus,
    threshold: float = 0.7,
    k: int = 1,
    exclude: Iterable[str] = (),
    utterance_ids: Iterable[str] | None = None,
) -> SuggestionQueue:
    """Confidence-thresholded suggestions for unverified listener utterances.

    Only codes with confidence at or above the threshold appear; utterances
    with no such code are omitted. Items are ordered by descending max
    confidence (utterance id breaks ties).
    """
    excluded = set(exclude)
    wanted = set(utterance_ids) if utterance_ids is not None else None
    codes = registry.available_codes(k)
    items: list[SuggestionItem] = []
    version = registry.version()
    for conv in corpus:
        for utt in conv.utterances:
            if utt.speaker is not SpeakerRole.LISTENER:
                continue
            if utt.utterance_id in excluded:
                continue
            if wanted is not None and utt.utterance_id not in wanted:
                continue
            cu = build_context(conv, utt.index, k)
            scores = registry.scores(cu, codes=codes)
            passing = {code: p for code, p in scores.items() if p >= threshold}
            if not passing:
                continue
            items.append(
                SuggestionItem(
                    utterance_id=utt.utterance_id,
                    context_preview=cu.context_text,
                    suggestions=passing,
                    model_ids=(version,),
                )
            )
    items.sort(key=lambda item: (-item.max_confidence, item.utterance_id))
    return SuggestionQueue(threshold=threshold, k=k, items=tuple(items))


def record_decision(
    store: LabelStore, utterance_id: str, annotator_id: str, codes: Sequence[MiCode]
) -> LabelRecord:
    """Append a human decision; the utterance then leaves the queue."""
    validated = _validate_codes(codes)
    return store.append(
        LabelRecord(
            utterance_id=utterance_id,
            source=f"human:{annotator_id}",
            codes=validated,
        )
    )


# --- model-vs-human validation ------------------------------------------------


@dataclass(frozen=True)
class ValidationReport:
    """Per-code and cumulative agreement, humans alone vs humans + model."""

    sampled: tuple[str, ...]
    per_code: dict[MiCode, tuple[AlphaResult, AlphaResult]]  # (inter_human, vs_model)
    cumulative_inter_human: AlphaResult
    cumulative_vs_model: AlphaResult

    def to_dict(self) -> dict:
        return {
            "n": len(self.sampled),
            "per_code": {
                code.value: {
                    "inter_human": human.alpha,
                    "vs_model": model.alpha,
                }
                for code, (human, model) in self.per_code.items()
            },
            "cumulative": {
                "inter_human": self.cumulative_inter_human.alpha,
                "vs_model": self.cumulative_vs_model.alpha,
            },
        }


def validation_sample(
    store: LabelStore,
    registry: ModelRegistry | None = None,
    n: int = 100,
    seed: int = 0,
    model_source: str | None = None,
) -> ValidationReport:
    """Seeded uniform sample of model-labeled utterances, scoring the model
    as one more observer against the human annotators."""
    if model_source is None and registry is not None:
        candidate = f"model:{registry.version()}"
        if candidate in store.sources():
            model_source = candidate
    if model_source is None:
        model_sources = sorted(s for s in store.sources() if s.startswith("model:"))
        if not model_sources:
            raise LabelStoreError("store has no model-source records")
        model_source = model_sources[-1]

    pool = sorted(store.model_labeled_utterances(model_source))
    if len(pool) < n:
        raise LabelStoreError(
            f"need at least {n} model-labeled utterances, have {len(pool)}"
        )
    rng = np.random.default_rng(seed)
    sampled = sorted(rng.choice(len(pool), size=n, replace=False).tolist())
    sample_ids = [pool[i] for i in sampled]

    observers = store.human_annotators()
    per_code: dict[MiCode, tuple[AlphaResult, AlphaResult]] = {}
    human_stack: list[np.ndarray] = []
    full_stack: list[np.ndarray] = []
    for code in ALL_CODES:
        human_matrix, _, _ = reliability_matrix(
            store, code, observers=observers, utterance_ids=sample_ids
        )
        model_col = np.full((len(sample_ids), 1), np.nan)
        for i, uid in enumerate(sample_ids):
            record = store.record_for(uid, model_source)
            if record is not None:
                model_col[i, 0] = 1.0 if code in record.codes else 0.0
        full_matrix = np.hstack([human_matrix, model_col])
        per_code[code] = (krippendorff_alpha(human_matrix), krippendorff_alpha(full_matrix))
        human_stack.append(human_matrix)
        full_stack.append(full_matrix)

    return ValidationReport(
        sampled=tuple(sample_ids),
        per_code=per_code,
        cumulative_inter_human=krippendorff_alpha(np.vstack(human_stack)),
        cumulative_vs_model=krippendorff_alpha(np.vstack(full_stack)),
    )


# --- training-set export ------------------------------------------------------


def export_training_examples(
    store: LabelStore, corpus: Corpus, code: MiCode, k: int
) -> list[tuple[ContextualUtterance, bool]]:
    """(context, is_positive) pairs for one (code, k) from consensus-
    precedence human labels over listener utterances."""
    effective = store.effective_human_codes()
    examples: list[tuple[ContextualUtterance, bool]] = []
    for conv in corpus:
        for utt in conv.utterances:
            if utt.speaker is not SpeakerRole.LISTENER:
                continue
            codes = effective.get(utt.utterance_id)
            if codes is None:
                continue
            examples.append((build_context(conv, utt.index, k), code in codes))
    return examples


def labeled_contexts(
    store: LabelStore, corpus: Corpus, k: int
) -> list[tuple[ContextualUtterance, frozenset[MiCode]]]:
    """All human-labeled listener utterances as (context, code set) pairs."""
    effective = store.effective_human_codes()
    out: list[tuple[ContextualUtterance, frozenset[MiCode]]] = []
    for conv in corpus:
        for utt in conv.utterances:
            if utt.speaker is not SpeakerRole.LISTENER:
                continue
            codes = effective.get(utt.utterance_id)
            if codes is None:
                continue
            out.append((build_context(conv, utt.index, k), codes))
    return out


def write_training_file(
    examples: Sequence[tuple[ContextualUtterance, bool]], path: str | Path
) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for cu, positive in examples:
            fh.write(
                json.dumps(
                    {"context_text": cu.context_text, "is_positive": positive},
                    ensure_ascii=False,
                    sort_keys=True,
                )
                + "\n"
            )

"""Conversation data model, transcript ingestion, and cohort filters.

Transcript files are newline-delimited JSON with two record kinds: a
conversation header (``conversation_id``, ``listener_id``, ``member_id``,
optional ages and rating) and an utterance (``utterance_id``,
``conversation_id``, ``index``, ``speaker``, ISO-8601 ``timestamp``,
``text``). Records are distinguished by the presence of ``utterance_id``.

Malformed records are collected, reported, and skipped unless ``strict``.
Text is normalized to NFC and trimmed; the context separator marker is
reserved and escaped away at ingestion so context strings round-trip.
"""

from __future__ import annotations

import json
import unicodedata
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple

from .codes import (
    BUCKET_BOUNDS_DAYS,
    SatisfactionClass,
    SpeakerRole,
    TenureBucket,
)

#: Separator placed between context utterances. Reserved: ingestion replaces
#: any occurrence in transcript text with ESCAPED_SEPARATOR.
SEPARATOR = "⟂"  # ⟂
ESCAPED_SEPARATOR = "⊥"  # ⊥

SECONDS_PER_DAY = 86400.0


class CorpusError(Exception):
    """Raised for unreadable files or, under strict mode, bad records."""


class Utterance(NamedTuple):
    # NamedTuple rather than a dataclass: corpora at analysis scale hold
    # hundreds of thousands of these.
    utterance_id: str
    conversation_id: str
    index: int
    speaker: SpeakerRole
    timestamp: datetime
    text: str


@dataclass(frozen=True)
class Conversation:
    conversation_id: str
    listener_id: str
    member_id: str
    listener_age: int | None = None
    member_age: int | None = None
    rating: int | None = None
    utterances: tuple[Utterance, ...] = ()

    def __len__(self) -> int:
        return len(self.utterances)


@dataclass(frozen=True)
class Corpus:
    """Immutable collection of conversations, ordered by conversation_id."""

    conversations: tuple[Conversation, ...]
    skipped: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(
            self,
            "_by_id",
            {c.conversation_id: c for c in self.conversations},
        )

    def __len__(self) -> int:
        return len(self.conversations)

    def __iter__(self) -> Iterator[Conversation]:
        return iter(self.conversations)

    def get(self, conversation_id: str) -> Conversation:
        return self._by_id[conversation_id]  # type: ignore[attr-defined]

    def __contains__(self, conversation_id: str) -> bool:
        return conversation_id in self._by_id  # type: ignore[attr-defined]

    def utterances(self) -> Iterator[Utterance]:
        for conv in self.conversations:
            yield from conv.utterances

    def listener_utterances(self) -> Iterator[Utterance]:
        for utt in self.utterances():
            if utt.speaker is SpeakerRole.LISTENER:
                yield utt

    def listener_ids(self) -> set[str]:
        return {c.listener_id for c in self.conversations}


@dataclass(frozen=True)
class ContextualUtterance:
    """A target utterance plus up to k preceding utterances joined for
    classification. Context crosses speaker roles."""

    target: Utterance
    k: int
    context_text: str


def normalize_text(text: str) -> str:
    """NFC-normalize, trim outer whitespace, and escape the separator marker."""
    cleaned = unicodedata.normalize("NFC", text).strip()
    return cleaned.replace(SEPARATOR, ESCAPED_SEPARATOR)


def parse_timestamp(raw: str) -> datetime:
    """Parse ISO-8601 UTC timestamps; 'Z' suffix accepted, seconds precision."""
    value = raw.replace("Z", "+00:00")
    ts = datetime.fromisoformat(value)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc).replace(microsecond=0)


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def binarize_rating(rating: int) -> SatisfactionClass:
    """Map a 1..5 conversation rating to the two-class outcome: 4 and 5 are
    satisfactory, 1 through 3 unsatisfactory."""
    if rating not in (1, 2, 3, 4, 5):
        raise ValueError(f"rating out of range 1..5: {rating!r}")
    if rating >= 4:
        return SatisfactionClass.SATISFACTORY
    return SatisfactionClass.UNSATISFACTORY


def build_context(conversation: Conversation, index: int, k: int) -> ContextualUtterance:
    """Join min(k, index) preceding utterances and the target, oldest first,
    with the separator marker. With k=0 the context is the target text."""
    if k < 0:
        raise ValueError(f"context size must be non-negative, got {k}")
    if not 0 <= index < len(conversation.utterances):
        raise IndexError(
            f"utterance index {index} out of range for conversation "
            f"{conversation.conversation_id} of length {len(conversation)}"
        )
    start = max(0, index - k)
    window = conversation.utterances[start : index + 1]
    context_text = f" {SEPARATOR} ".join(u.text for u in window)
    return ContextualUtterance(target=conversation.utterances[index], k=k, context_text=context_text)


def iter_contexts(corpus: Corpus, k: int, listener_only: bool = True) -> Iterator[ContextualUtterance]:
    for conv in corpus:
        for utt in conv.utterances:
            if listener_only and utt.speaker is not SpeakerRole.LISTENER:
                continue
            yield build_context(conv, utt.index, k)


def tenure_bucket(listener_first_utterance: datetime, utterance_time: datetime) -> TenureBucket:
    """Bucket an utterance by days since the listener's first corpus utterance.

    Boundaries are lower-inclusive at 30/180/365 days.
    """
    elapsed = (utterance_time - listener_first_utterance).total_seconds()
    if elapsed < 0:
        raise ValueError("utterance precedes the listener's first utterance")
    days = elapsed / SECONDS_PER_DAY
    b30, b180, b365 = BUCKET_BOUNDS_DAYS
    if days < b30:
        return TenureBucket.M0TO1
    if days < b180:
        return TenureBucket.M1TO6
    if days < b365:
        return TenureBucket.M6TO12
    return TenureBucket.Y1PLUS


def listener_first_utterances(corpus: Corpus) -> dict[str, datetime]:
    """Joining time per listener: the earliest utterance they wrote."""
    first: dict[str, datetime] = {}
    for conv in corpus:
        for utt in conv.utterances:
            if utt.speaker is not SpeakerRole.LISTENER:
                continue
            prev = first.get(conv.listener_id)
            if prev is None or utt.timestamp < prev:
                first[conv.listener_id] = utt.timestamp
    return first


def filter_active_listeners(
    corpus: Corpus,
    min_span_days: float = 365.0,
    min_sessions: int = 500,
) -> set[str]:
    """Listeners whose first-to-last utterance span is at least ``min_span_days``
    and who participated in at least ``min_sessions`` distinct conversations."""
    spans: dict[str, tuple[datetime, datetime]] = {}
    sessions: dict[str, set[str]] = {}
    for conv in corpus:
        for utt in conv.utterances:
            if utt.speaker is not SpeakerRole.LISTENER:
                continue
            lid = conv.listener_id
            if lid in spans:
                lo, hi = spans[lid]
                spans[lid] = (min(lo, utt.timestamp), max(hi, utt.timestamp))
            else:
                spans[lid] = (utt.timestamp, utt.timestamp)
            sessions.setdefault(lid, set()).add(conv.conversation_id)
    kept: set[str] = set()
    for lid, (lo, hi) in spans.items():
        span_days = (hi - lo).total_seconds() / SECONDS_PER_DAY
        if span_days >= min_span_days and len(sessions[lid]) >= min_sessions:
            kept.add(lid)
    return kept


def filter_min_length(corpus: Corpus, min_utterances: int = 50) -> Corpus:
    """Keep conversations with at least ``min_utterances`` utterances."""
    kept = tuple(c for c in corpus if len(c) >= min_utterances)
    return Corpus(conversations=kept)


def restrict_to_listeners(corpus: Corpus, listener_ids: set[str]) -> Corpus:
    kept = tuple(c for c in corpus if c.listener_id in listener_ids)
    return Corpus(conversations=kept)


# --- ingestion ---------------------------------------------------------------


def _parse_header(obj: dict) -> dict:
    for key in ("conversation_id", "listener_id", "member_id"):
        if not isinstance(obj.get(key), str) or not obj[key]:
            raise ValueError(f"header missing {key}")
    rating = obj.get("rating")
    if rating is not None:
        if not isinstance(rating, int) or rating not in (1, 2, 3, 4, 5):
            raise ValueError(f"rating out of range: {rating!r}")
    for key in ("listener_age", "member_age"):
        age = obj.get(key)
        if age is not None and (not isinstance(age, int) or age < 0):
            raise ValueError(f"bad {key}: {age!r}")
    return obj


def _parse_utterance(obj: dict) -> Utterance:
    for key in ("utterance_id", "conversation_id", "text"):
        if not isinstance(obj.get(key), str):
            raise ValueError(f"utterance missing {key}")
    text = normalize_text(obj["text"])
    if not text:
        raise ValueError("utterance text empty after trimming")
    index = obj.get("index")
    if not isinstance(index, int) or index < 0:
        raise ValueError(f"bad index: {index!r}")
    speaker_raw = obj.get("speaker")
    try:
        speaker = SpeakerRole(speaker_raw)
    except ValueError:
        raise ValueError(f"bad speaker: {speaker_raw!r}") from None
    timestamp = parse_timestamp(obj["timestamp"])
    return Utterance(
        utterance_id=obj["utterance_id"],
        conversation_id=obj["conversation_id"],
        index=index,
        speaker=speaker,
        timestamp=timestamp,
        text=text,
    )


def parse_corpus(path: str | Path, strict: bool = False) -> Corpus:
    """Read a transcript file into a Corpus.

    Record-level problems (bad JSON, schema violations, duplicate utterance
    ids, out-of-range ratings, broken index/timestamp ordering) are skipped
    and reported via ``Corpus.skipped`` unless ``strict``, in which case the
    first problem raises :class:`CorpusError`.
    """
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise CorpusError(f"cannot read corpus file {path}: {exc}") from exc

    headers: dict[str, dict] = {}
    utterances: dict[str, list[Utterance]] = {}
    seen_utterance_ids: set[str] = set()
    skipped: list[str] = []

    def record_error(lineno: int, message: str) -> None:
        if strict:
            raise CorpusError(f"{path}:{lineno}: {message}")
        skipped.append(f"line {lineno}: {message}")

    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            record_error(lineno, f"invalid JSON: {exc.msg}")
            continue
        if not isinstance(obj, dict):
            record_error(lineno, "record is not an object")
            continue
        try:
            if "utterance_id" in obj:
                utt = _parse_utterance(obj)
                if utt.utterance_id in seen_utterance_ids:
                    raise ValueError(f"duplicate utterance_id {utt.utterance_id!r}")
                seen_utterance_ids.add(utt.utterance_id)
                utterances.setdefault(utt.conversation_id, []).append(utt)
            else:
                header = _parse_header(obj)
                cid = header["conversation_id"]
                if cid in headers:
                    raise ValueError(f"duplicate conversation header {cid!r}")
                headers[cid] = header
        except ValueError as exc:
            record_error(lineno, str(exc))

    conversations: list[Conversation] = []
    for cid in sorted(headers):
        header = headers[cid]
        utts = sorted(utterances.get(cid, []), key=lambda u: u.index)
        ok = True
        for prev, cur in zip(utts, utts[1:]):
            if cur.index <= prev.index:
                record_error(0, f"conversation {cid}: non-increasing utterance index")
                ok = False
                break
            if cur.timestamp < prev.timestamp:
                record_error(0, f"conversation {cid}: timestamps decrease at index {cur.index}")
                ok = False
                break
        if not ok:
            continue
        conversations.append(
            Conversation(
                conversation_id=cid,
                listener_id=header["listener_id"],
                member_id=header["member_id"],
                listener_age=header.get("listener_age"),
                member_age=header.get("member_age"),
                rating=header.get("rating"),
                utterances=tuple(utts),
            )
        )
    for cid in sorted(set(utterances) - set(headers)):
        record_error(0, f"utterances for unknown conversation {cid!r} dropped")

    return Corpus(conversations=tuple(conversations), skipped=tuple(skipped))


def write_corpus(corpus: Corpus | Iterable[Conversation], path: str | Path) -> None:
    """Write conversations in the newline-delimited transcript format."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for conv in corpus:
            header: dict = {
                "conversation_id": conv.conversation_id,
                "listener_id": conv.listener_id,
                "member_id": conv.member_id,
            }
            if conv.listener_age is not None:
                header["listener_age"] = conv.listener_age
            if conv.member_age is not None:
                header["member_age"] = conv.member_age
            if conv.rating is not None:
                header["rating"] = conv.rating
            fh.write(json.dumps(header, ensure_ascii=False, sort_keys=True) + "\n")
            for utt in conv.utterances:
                fh.write(
                    json.dumps(
                        {
                            "utterance_id": utt.utterance_id,
                            "conversation_id": utt.conversation_id,
                            "index": utt.index,
                            "speaker": utt.speaker.value,
                            "timestamp": format_timestamp(utt.timestamp),
                            "text": utt.text,
                        },
                        ensure_ascii=False,
                        sort_keys=True,
                    )
                    + "\n"
                )

from __future__ import annotations

from datetime import datetime, timedelta, timezone

import pytest

from micoder.codes import SpeakerRole
from micoder.corpus import Conversation, Corpus, Utterance

T0 = datetime(2021, 3, 1, 12, 0, 0, tzinfo=timezone.utc)


def make_conversation(
    cid: str,
    turns: list[tuple[str, str]],
    listener: str = "l1",
    member: str = "m1",
    rating: int | None = None,
    listener_age: int | None = 30,
    member_age: int | None = 25,
    start: datetime = T0,
    gap_seconds: int = 30,
) -> Conversation:
    """Build a conversation from (speaker, text) turns; speaker is 'l'/'m'."""
    utterances = tuple(
        Utterance(
            utterance_id=f"{cid}_u{i}",
            conversation_id=cid,
            index=i,
            speaker=SpeakerRole.LISTENER if speaker == "l" else SpeakerRole.MEMBER,
            timestamp=start + timedelta(seconds=gap_seconds * i),
            text=text,
        )
        for i, (speaker, text) in enumerate(turns)
    )
    return Conversation(
        conversation_id=cid,
        listener_id=listener,
        member_id=member,
        listener_age=listener_age,
        member_age=member_age,
        rating=rating,
        utterances=utterances,
    )


@pytest.fixture
def two_turn_corpus() -> Corpus:
    return Corpus(
        conversations=(
            make_conversation("c1", [("m", "hi"), ("l", "hello")], rating=4),
            make_conversation("c2", [("m", "hey"), ("l", "welcome"), ("m", "thanks")], rating=2),
        )
    )

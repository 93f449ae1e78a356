"""The 17-code MI schema: code names, category grouping, and related enums.

Every other module keys its per-code work off :class:`MiCode`, so the
enumeration order here is the canonical display/report order (consistent
codes first, then inconsistent, then rapport codes, then the catch-all).
"""

from __future__ import annotations

from enum import Enum


class SpeakerRole(Enum):
    LISTENER = "listener"
    MEMBER = "member"


class MiCategory(Enum):
    MI_CONSISTENT = "MI-Consistent"
    MI_INCONSISTENT = "MI-Inconsistent"
    OTHER = "Other"


class MiCode(Enum):
    AFFIRM = "Affirm"
    EMPHASIZING_AUTONOMY = "EmphasizingAutonomy"
    OPEN_QUESTION = "OpenQuestion"
    CLOSED_QUESTION = "ClosedQuestion"
    PERSUADE = "Persuade"
    REFLECTION = "Reflection"
    SEEKING_COLLABORATION = "SeekingCollaboration"
    DIRECT = "Direct"
    INAPPROPRIATE = "Inappropriate"
    GROUNDING = "Grounding"
    GIVING_INFORMATION = "GivingInformation"
    SUPPORT = "Support"
    PERSONAL_DISCLOSURE = "PersonalDisclosure"
    INTRODUCTION = "Introduction"
    CONCLUSION = "Conclusion"
    CHIT_CHAT = "ChitChat"
    OTHER = "Other"

    @property
    def category(self) -> MiCategory:
        return CODE_CATEGORY[self]

    @property
    def display_name(self) -> str:
        return DISPLAY_NAMES[self]


MI_CONSISTENT = (
    MiCode.AFFIRM,
    MiCode.EMPHASIZING_AUTONOMY,
    MiCode.OPEN_QUESTION,
    MiCode.CLOSED_QUESTION,
    MiCode.PERSUADE,
    MiCode.REFLECTION,
    MiCode.SEEKING_COLLABORATION,
)

MI_INCONSISTENT = (MiCode.DIRECT, MiCode.INAPPROPRIATE)

CODE_CATEGORY: dict[MiCode, MiCategory] = {
    code: (
        MiCategory.MI_CONSISTENT
        if code in MI_CONSISTENT
        else MiCategory.MI_INCONSISTENT
        if code in MI_INCONSISTENT
        else MiCategory.OTHER
    )
    for code in MiCode
}

DISPLAY_NAMES: dict[MiCode, str] = {
    MiCode.AFFIRM: "Affirm",
    MiCode.EMPHASIZING_AUTONOMY: "Emphasizing Autonomy",
    MiCode.OPEN_QUESTION: "Open Question",
    MiCode.CLOSED_QUESTION: "Closed Question",
    MiCode.PERSUADE: "Persuade (with permission)",
    MiCode.REFLECTION: "Reflection",
    MiCode.SEEKING_COLLABORATION: "Seeking Collaboration",
    MiCode.DIRECT: "Direct",
    MiCode.INAPPROPRIATE: "Inappropriate",
    MiCode.GROUNDING: "Grounding",
    MiCode.GIVING_INFORMATION: "Giving Information",
    MiCode.SUPPORT: "Support",
    MiCode.PERSONAL_DISCLOSURE: "Personal Disclosure",
    MiCode.INTRODUCTION: "Introduction",
    MiCode.CONCLUSION: "Conclusion",
    MiCode.CHIT_CHAT: "Chit-Chat",
    MiCode.OTHER: "Other",
}

ALL_CODES: tuple[MiCode, ...] = tuple(MiCode)

#: The 16 codes used as regression covariates (the catch-all is excluded).
COVARIATE_CODES: tuple[MiCode, ...] = tuple(c for c in MiCode if c is not MiCode.OTHER)

CODE_NAMES: tuple[str, ...] = tuple(c.value for c in MiCode)


class SatisfactionClass(Enum):
    SATISFACTORY = "Satisfactory"
    UNSATISFACTORY = "Unsatisfactory"


class TenureBucket(Enum):
    M0TO1 = "M0to1"
    M1TO6 = "M1to6"
    M6TO12 = "M6to12"
    Y1PLUS = "Y1plus"


BUCKET_ORDER: tuple[TenureBucket, ...] = (
    TenureBucket.M0TO1,
    TenureBucket.M1TO6,
    TenureBucket.M6TO12,
    TenureBucket.Y1PLUS,
)

#: Lower-inclusive day boundaries of the tenure buckets (month = 30 days,
#: year = 365 days).
BUCKET_BOUNDS_DAYS: tuple[float, float, float] = (30.0, 180.0, 365.0)


def parse_code(name: str) -> MiCode:
    """Resolve a code name as written in label files; raises on unknown names."""
    try:
        return MiCode(name)
    except ValueError:
        raise ValueError(f"unknown MI code: {name!r}") from None

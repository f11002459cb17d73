"""Built-in label spaces: grouped MISC (turn level) and binarized CTRS (session level)."""

from __future__ import annotations

from .model import SESSION, TURN, LabelSpace

MISC_GROUPS: dict[str, tuple[str, ...]] = {
    "FA": ("Facilitate",),
    "GI": ("Giving information",),
    "QUC": ("Closed question",),
    "QUO": ("Open question",),
    "REC": ("Complex reflection",),
    "RES": ("Simple reflection",),
    "MIA": (
        "Affirm",
        "Reframe",
        "Emphasize control",
        "Support",
        "Filler",
        "Advice with permission",
        "Structure",
        "Raise concern with permission",
    ),
    "MIN": (
        "Confront",
        "Direct",
        "Advice without permission",
        "Warn",
        "Raise concern without permission",
    ),
    "FN": ("Follow/Neutral",),
    "POS": (
        "Change talk: Reasons",
        "Change talk: Commitments",
        "Change talk: Taking steps",
        "Change talk: Other",
    ),
    "NEG": (
        "Sustain talk: Reasons",
        "Sustain talk: Commitments",
        "Sustain talk: Taking steps",
        "Sustain talk: Other",
    ),
}

THERAPIST_MISC = ("FA", "GI", "QUC", "QUO", "REC", "RES", "MIA", "MIN")
CLIENT_MISC = ("FN", "POS", "NEG")

CTRS_CODES: dict[str, str] = {
    "AG": "agenda",
    "AT": "application of cognitive-behavioral techniques",
    "CO": "collaboration",
    "FB": "feedback",
    "GD": "guided discovery",
    "HW": "homework",
    "IP": "interpersonal effectiveness",
    "KC": "focusing on key cognitions and behaviors",
    "PT": "pacing and efficient use of time",
    "SC": "strategy for change",
    "UN": "understanding",
}

CTRS_THRESHOLD = 3


def misc_raw_codes() -> list[str]:
    return [raw for raws in MISC_GROUPS.values() for raw in raws]


def misc_space(task: str = "MISC") -> LabelSpace:
    grouping = {raw: group for group, raws in MISC_GROUPS.items() for raw in raws}
    return LabelSpace(task=task, codes=tuple(MISC_GROUPS), granularity=TURN, grouping=grouping)


def ctrs_space(task: str = "CTRS") -> LabelSpace:
    grouping = {name: code for code, name in CTRS_CODES.items()}
    return LabelSpace(
        task=task,
        codes=tuple(CTRS_CODES),
        granularity=SESSION,
        grouping=grouping,
        binarize_threshold=CTRS_THRESHOLD,
    )

from __future__ import annotations

import re

from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..core.exceptions import DecompositionError

ZERO_INITIAL = "∅"

INITIALS: tuple[str, ...] = (
    "b", "p", "m", "f", "d", "t", "n", "l", "g", "k", "h", "j", "q", "x",
    "zh", "ch", "sh", "r", "z", "c", "s", "y", "w",
)

FINALS: tuple[str, ...] = (
    "a", "o", "e", "ai", "ei", "ao", "ou", "an", "en", "ang", "eng", "ong", "er",
    "i", "ia", "ie", "iao", "iu", "ian", "in", "iang", "ing", "iong",
    "u", "ua", "uo", "uai", "ui", "uan", "un", "uang",
    "ü", "üe", "ue",
)

# Written (surface) finals legal after each initial. j/q/x and y spell ü as u.
_LEGAL_FINALS: dict[str, str] = {
    ZERO_INITIAL: "a o e ai ei ao ou an en ang eng er",
    "y": "i a o e ao ou an in ang ing ong u ue uan un",
    "w": "u a o ai ei an en ang eng",
    "b": "a o ai ei ao an en ang eng i ie iao ian in ing u",
    "p": "a o ai ei ao ou an en ang eng i ie iao ian in ing u",
    "m": "a o e ai ei ao ou an en ang eng i ie iao iu ian in ing u",
    "f": "a o ei ou an en ang eng u",
    "d": "a e ai ei ao ou an en ang eng ong i ia ie iao iu ian ing u uo ui uan un",
    "t": "a e ai ao ou an ang eng ong i ie iao ian ing u uo ui uan un",
    "n": "a e ai ei ao ou an en ang eng ong i ie iao iu ian in iang ing u uo uan ü üe",
    "l": "a o e ai ei ao ou an ang eng ong i ia ie iao iu ian in iang ing u uo uan un ü üe",
    "g": "a e ai ei ao ou an en ang eng ong u ua uo uai ui uan un uang",
    "k": "a e ai ei ao ou an en ang eng ong u ua uo uai ui uan un uang",
    "h": "a e ai ei ao ou an en ang eng ong u ua uo uai ui uan un uang",
    "j": "i ia ie iao iu ian in iang ing iong u ue uan un",
    "q": "i ia ie iao iu ian in iang ing iong u ue uan un",
    "x": "i ia ie iao iu ian in iang ing iong u ue uan un",
    "zh": "a e i ai ei ao ou an en ang eng ong u ua uo uai ui uan un uang",
    "ch": "a e i ai ao ou an en ang eng ong u ua uo uai ui uan un uang",
    "sh": "a e i ai ei ao ou an en ang eng u ua uo uai ui uan un uang",
    "r": "e i ao ou an en ang eng ong u uo ui uan un",
    "z": "a e i ai ei ao ou an en ang eng ong u uo ui uan un",
    "c": "a e i ai ao ou an en ang eng ong u uo ui uan un",
    "s": "a e i ai ao ou an en ang eng ong u uo ui uan un",
}

VALID_SYLLABLES: frozenset[str] = frozenset(
    ("" if initial == ZERO_INITIAL else initial) + final
    for initial, finals in _LEGAL_FINALS.items()
    for final in finals.split()
)

# Longest initials first so zh/ch/sh win over z/c/s.
_INITIALS_BY_LENGTH = sorted(INITIALS, key=len, reverse=True)
_SYLLABLE_RE = re.compile(r"^([a-zü]+)([0-4])?$")


class Syllable(BaseModel):
    model_config = ConfigDict(frozen=True)

    initial: str
    final: str
    tone: int = Field(default=0, ge=0, le=4)

    @model_validator(mode="after")
    def _check_inventory(self) -> "Syllable":
        if self.initial != ZERO_INITIAL and self.initial not in INITIALS:
            raise ValueError(f"Unknown initial '{self.initial}'")
        if self.final not in FINALS:
            raise ValueError(f"Unknown final '{self.final}'")
        return self

    @property
    def key(self) -> tuple[str, str]:
        return self.initial, self.final

    @property
    def toneless(self) -> str:
        initial = "" if self.initial == ZERO_INITIAL else self.initial
        return initial + self.final

    def __str__(self) -> str:
        return f"{self.toneless}{self.tone}"


def normalize(text: str) -> str:
    """Lowercase, fold the v / u: aliases onto ü and drop surrounding whitespace."""
    return text.strip().lower().replace("u:", "ü").replace("v", "ü")


def decompose(syllable_text: str) -> Syllable:
    text = normalize(syllable_text)
    match = _SYLLABLE_RE.match(text)
    if match is None:
        raise DecompositionError(f"Unparseable syllable '{syllable_text}'")
    base, tone = match.group(1), int(match.group(2) or 0)
    if base not in VALID_SYLLABLES:
        raise DecompositionError(f"'{syllable_text}' is not a Hanyu Pinyin syllable")

    for initial in _INITIALS_BY_LENGTH:
        if base.startswith(initial) and base[len(initial):] in FINALS:
            return Syllable(initial=initial, final=base[len(initial):], tone=tone)
    if base in FINALS:
        return Syllable(initial=ZERO_INITIAL, final=base, tone=tone)
    raise DecompositionError(f"No initial/final split for '{syllable_text}'")

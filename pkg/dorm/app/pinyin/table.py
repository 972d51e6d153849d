from __future__ import annotations

import logging
from pathlib import Path

from ..core.exceptions import DecompositionError, PinyinTableError
from .syllable import Syllable, decompose

logger = logging.getLogger(__name__)


def is_chinese(ch: str) -> bool:
    """CJK Unified Ideographs plus Extension A."""
    if len(ch) != 1:
        return False
    code = ord(ch)
    return 0x4E00 <= code <= 0x9FFF or 0x3400 <= code <= 0x4DBF


class PinyinTable:
    """Character readings with a reverse (initial, final) index. Immutable after construction."""

    def __init__(self, readings: dict[str, list[Syllable]]):
        for ch, syllables in readings.items():
            if not syllables:
                raise PinyinTableError(f"Character '{ch}' has no reading")
        self._readings: dict[str, tuple[Syllable, ...]] = {
            ch: tuple(syllables) for ch, syllables in readings.items()
        }
        reverse: dict[tuple[str, str], set[str]] = {}
        by_default: dict[tuple[str, str], set[str]] = {}
        for ch, syllables in self._readings.items():
            for syllable in syllables:
                reverse.setdefault(syllable.key, set()).add(ch)
            by_default.setdefault(syllables[0].key, set()).add(ch)
        self._reverse = {key: frozenset(chars) for key, chars in reverse.items()}
        self._by_default = {key: frozenset(chars) for key, chars in by_default.items()}

    def __len__(self) -> int:
        return len(self._readings)

    def __contains__(self, ch: str) -> bool:
        return ch in self._readings

    def characters(self) -> list[str]:
        return sorted(self._readings)

    def readings(self, ch: str) -> tuple[Syllable, ...]:
        return self._readings.get(ch, ())

    def characters_for(self, initial: str, final: str) -> frozenset[str]:
        return self._reverse.get((initial, final), frozenset())

    def char_to_syllable(self, ch: str) -> Syllable | None:
        syllables = self._readings.get(ch)
        return syllables[0] if syllables else None

    def confusion_candidates(self, ch: str) -> list[str]:
        syllable = self.char_to_syllable(ch)
        if syllable is None:
            raise PinyinTableError(f"Character '{ch}' is not in the pinyin table")
        return sorted(self._by_default[syllable.key] - {ch})

    def to_lines(self) -> list[str]:
        return [
            f"{ch}\t{','.join(str(s) for s in self._readings[ch])}"
            for ch in self.characters()
        ]

    def save(self, path: str | Path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as write:
            write.write("\n".join(self.to_lines()) + "\n")


def load_pinyin_table(path: str | Path) -> PinyinTable:
    path = Path(path)
    if not path.exists():
        raise PinyinTableError(f"Pinyin table not found: {path}")

    try:
        with open(path, encoding="utf-8") as read:
            lines = read.read().split("\n")
    except UnicodeDecodeError as e:
        raise PinyinTableError(f"{path}: not UTF-8 text (byte {e.start}: {e.reason})") from e
    except OSError as e:
        raise PinyinTableError(f"Cannot read pinyin table {path}: {e.strerror}") from e

    readings: dict[str, list[Syllable]] = {}
    for line_no, raw in enumerate(lines, start=1):
        line = raw.rstrip("\r")
        if not line.strip():
            continue
        if "\t" not in line:
            raise PinyinTableError(f"{path}:{line_no}: missing tab separator")
        ch, _, rest = line.partition("\t")
        if len(ch) != 1:
            raise PinyinTableError(f"{path}:{line_no}: expected a single character, got '{ch}'")
        if ch in readings:
            raise PinyinTableError(f"{path}:{line_no}: duplicate character '{ch}'")
        try:
            readings[ch] = [decompose(text) for text in rest.split(",") if text.strip()]
        except DecompositionError as e:
            raise PinyinTableError(f"{path}:{line_no}: {e}") from e
        if not readings[ch]:
            raise PinyinTableError(f"{path}:{line_no}: no readings for '{ch}'")

    if not readings:
        raise PinyinTableError(f"Pinyin table is empty: {path}")
    logger.info(f"Loaded pinyin table with {len(readings)} characters from {path}")
    return PinyinTable(readings)


def char_to_syllable(table: PinyinTable, ch: str) -> Syllable | None:
    return table.char_to_syllable(ch)


def confusion_candidates(table: PinyinTable, ch: str) -> list[str]:
    return table.confusion_candidates(ch)

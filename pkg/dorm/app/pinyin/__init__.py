"""
Character to pinyin mapping and syllable decomposition.
"""
from .syllable import FINALS, INITIALS, VALID_SYLLABLES, ZERO_INITIAL, Syllable, decompose
from .table import (
    PinyinTable,
    char_to_syllable,
    confusion_candidates,
    is_chinese,
    load_pinyin_table,
)

__all__ = [
    "FINALS",
    "INITIALS",
    "VALID_SYLLABLES",
    "ZERO_INITIAL",
    "Syllable",
    "decompose",
    "PinyinTable",
    "char_to_syllable",
    "confusion_candidates",
    "is_chinese",
    "load_pinyin_table",
]

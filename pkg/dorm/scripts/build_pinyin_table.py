"""
Regenerate a pinyin table file (`<char>\\t<reading>[,<reading>...]`) from text files with pypinyin.

Every distinct Chinese character in the inputs gets pypinyin's readings in its own order, so the
first reading is the common one. Readings outside the syllable inventory (interjections such as
"hm" or "ng") are skipped with a warning; characters left without a reading are dropped.
"""
import argparse
import logging
from pathlib import Path

from pypinyin import Style, pinyin

from app.core.exceptions import DecompositionError
from app.observability import init_observability
from app.pinyin.syllable import Syllable, decompose
from app.pinyin.table import PinyinTable, is_chinese

logger = logging.getLogger(__name__)


def readings_for(ch: str, heteronym: bool = True) -> list[Syllable]:
    readings = []
    for text in pinyin(ch, style=Style.TONE3, heteronym=heteronym)[0]:
        # TONE3 leaves the neutral tone without a digit, which decompose reads as tone 0.
        try:
            syllable = decompose(text)
        except DecompositionError:
            logger.warning(f"Skipping reading '{text}' of '{ch}': not in the syllable inventory")
            continue
        if syllable not in readings:
            readings.append(syllable)
    return readings


def build_table(paths: list[str], heteronym: bool = True) -> PinyinTable:
    characters: set[str] = set()
    for path in paths:
        with open(path, encoding="utf-8") as read:
            characters.update(ch for ch in read.read() if is_chinese(ch))
    logger.info(f"Found {len(characters)} distinct Chinese characters in {len(paths)} files")

    table = {}
    for ch in sorted(characters):
        readings = readings_for(ch, heteronym)
        if readings:
            table[ch] = readings
        else:
            logger.warning(f"Dropping '{ch}': no usable reading")
    return PinyinTable(table)


def main():
    parser = argparse.ArgumentParser(description="Build a pinyin table from text files")
    parser.add_argument("inputs", nargs="+", help="UTF-8 text files whose characters to cover")
    parser.add_argument("--out", required=True, help="Output table path")
    parser.add_argument(
        "--first-reading-only", action="store_true", help="Keep only pypinyin's default reading"
    )
    args = parser.parse_args()

    init_observability()
    table = build_table(args.inputs, heteronym=not args.first_reading_only)
    table.save(Path(args.out))
    logger.info(f"Wrote {len(table)} characters to {args.out}")


if __name__ == "__main__":
    main()

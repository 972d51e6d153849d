from __future__ import annotations

import logging
import re
from pathlib import Path
from typing import Iterable, Sequence

from pydantic import ValidationError

from ..core.exceptions import DatasetError
from .models import CorrectionExample, DatasetStats

logger = logging.getLogger(__name__)

SENTENCE_END = "。！？；…!?;"
_SENTENCE_RE = re.compile(rf"[^{SENTENCE_END}]*[{SENTENCE_END}]+|[^{SENTENCE_END}]+")


def read_dataset(path: str | Path) -> list[CorrectionExample]:
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"Dataset not found: {path}")

    try:
        with open(path, encoding="utf-8") as read:
            lines = read.read().split("\n")
    except UnicodeDecodeError as e:
        raise DatasetError(f"{path}: not UTF-8 text (byte {e.start}: {e.reason})") from e
    except OSError as e:
        raise DatasetError(f"Cannot read dataset {path}: {e.strerror}") from e

    examples = []
    for line_no, raw in enumerate(lines, start=1):
        line = raw.rstrip("\r")
        if not line:
            continue
        fields = line.split("\t")
        if len(fields) != 2:
            raise DatasetError(
                f"{path}:{line_no}: expected '<source>\\t<target>', "
                f"found {len(fields) - 1} tabs"
            )
        try:
            examples.append(CorrectionExample(source=fields[0], target=fields[1], line_no=line_no))
        except ValidationError as e:
            raise DatasetError(f"{path}:{line_no}: {e.errors()[0]['msg']}") from e

    if not examples:
        raise DatasetError(f"Dataset is empty: {path}")
    logger.info(f"Read {len(examples)} examples from {path}")
    return examples


def write_dataset(examples: Iterable[CorrectionExample], path: str | Path) -> int:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as write:
        for ex in examples:
            write.write(ex.as_line() + "\n")
            count += 1
    return count


def dataset_stats(examples: Sequence[CorrectionExample]) -> DatasetStats:
    if not examples:
        return DatasetStats(sentences=0, errors=0, average_length=0.0, sentences_with_errors=0)
    return DatasetStats(
        sentences=len(examples),
        errors=sum(len(ex.error_positions) for ex in examples),
        average_length=sum(len(ex.source) for ex in examples) / len(examples),
        sentences_with_errors=sum(1 for ex in examples if ex.has_errors),
    )


def cut_fragments(text: str, max_fragment: int = 256) -> list[str]:
    """
    Split running text into fragments of at most max_fragment characters.

    Sentences (runs ending in sentence-final punctuation) are packed greedily; a single sentence
    longer than max_fragment is split hard. Line breaks always end a fragment and tabs are dropped.
    """
    if max_fragment < 1:
        raise DatasetError(f"max_fragment must be positive, got {max_fragment}")

    fragments: list[str] = []
    for line in text.replace("\t", "").splitlines():
        line = line.strip()
        if not line:
            continue
        current = ""
        for sentence in _SENTENCE_RE.findall(line):
            if len(current) + len(sentence) <= max_fragment:
                current += sentence
                continue
            if current:
                fragments.append(current)
            while len(sentence) > max_fragment:
                fragments.append(sentence[:max_fragment])
                sentence = sentence[max_fragment:]
            current = sentence
        if current:
            fragments.append(current)
    return fragments

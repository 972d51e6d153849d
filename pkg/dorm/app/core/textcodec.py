"""
Vocabularies and the phonetics-aware input layout.

A batch of B sentences padded to N characters is laid out over 2N slots: text slots 0..N-1
followed by pinyin slots N..2N-1. Slot j of the pinyin half shares its position id with text slot j.
"""
from __future__ import annotations

import hashlib
import logging
from collections import Counter
from pathlib import Path
from typing import Iterable, Sequence

import torch
from pydantic import BaseModel, ConfigDict

from ..data.models import CorrectionExample
from ..pinyin.syllable import FINALS, INITIALS, ZERO_INITIAL
from ..pinyin.table import PinyinTable, is_chinese
from .exceptions import DatasetError, EncodingError
from .numeric import IGNORE_INDEX, MASK_VALUE

logger = logging.getLogger(__name__)

PAD = "[PAD]"
UNK = "[UNK]"
NOPY = "[NOPY]"


class CharVocab:
    RESERVED = (PAD, UNK)

    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[: len(self.RESERVED)]) != self.RESERVED:
            raise EncodingError(f"Vocabulary must start with {self.RESERVED}")
        if len(set(tokens)) != len(tokens):
            raise EncodingError("Vocabulary contains duplicate tokens")
        self.tokens: list[str] = list(tokens)
        self._ids = {token: i for i, token in enumerate(self.tokens)}

    @classmethod
    def from_characters(cls, characters: Iterable[str]) -> "CharVocab":
        return cls(list(cls.RESERVED) + [ch for ch in characters if ch not in cls.RESERVED])

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def unk_id(self) -> int:
        return 1

    def id_of(self, token: str) -> int:
        return self._ids.get(token, self.unk_id)

    def token_of(self, index: int) -> str:
        return self.tokens[index]

    def is_reserved(self, index: int) -> bool:
        return index < len(self.RESERVED)

    def chinese_characters(self) -> list[str]:
        return [t for t in self.tokens[len(self.RESERVED):] if is_chinese(t)]

    def to_text(self) -> str:
        return "\n".join(self.tokens) + "\n"

    def sha256(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()

    def save(self, path: str | Path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as write:
            write.write(self.to_text())

    @classmethod
    def load(cls, path: str | Path) -> "CharVocab":
        try:
            with open(path, encoding="utf-8", newline="\n") as read:
                tokens = read.read().split("\n")
        except UnicodeDecodeError as e:
            raise DatasetError(f"{path}: not UTF-8 text (byte {e.start}: {e.reason})") from e
        except OSError as e:
            raise DatasetError(f"Cannot read vocabulary {path}: {e.strerror}") from e
        if tokens and tokens[-1] == "":
            tokens.pop()
        return cls(tokens)


class PhonemeVocab:
    def __init__(self):
        self.initials: list[str] = [NOPY, ZERO_INITIAL, *INITIALS]
        self.finals: list[str] = [NOPY, *FINALS]
        self._initial_ids = {s: i for i, s in enumerate(self.initials)}
        self._final_ids = {s: i for i, s in enumerate(self.finals)}

    @property
    def nopy_id(self) -> int:
        return 0

    @property
    def num_initials(self) -> int:
        return len(self.initials)

    @property
    def num_finals(self) -> int:
        return len(self.finals)

    def initial_id(self, initial: str) -> int:
        return self._initial_ids[initial]

    def final_id(self, final: str) -> int:
        return self._final_ids[final]

    def sha256(self) -> str:
        text = "\n".join(self.initials) + "\n--\n" + "\n".join(self.finals)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


def build_char_vocab(corpus_paths: Sequence[str | Path], min_count: int = 1) -> CharVocab:
    counts: Counter[str] = Counter()
    for path in corpus_paths:
        try:
            with open(path, encoding="utf-8") as read:
                for line in read:
                    counts.update(ch for ch in line if ch not in "\t\r\n")
        except UnicodeDecodeError as e:
            raise DatasetError(f"{path}: not UTF-8 text (byte {e.start}: {e.reason})") from e
        except OSError as e:
            raise DatasetError(f"Cannot read corpus {path}: {e.strerror}") from e
    if not counts:
        raise DatasetError(f"Cannot build a vocabulary from an empty corpus: {list(corpus_paths)}")
    kept = sorted(
        (ch for ch, count in counts.items() if count >= min_count and ch not in CharVocab.RESERVED),
        key=lambda ch: (-counts[ch], ord(ch)),
    )
    logger.info(f"Built vocabulary of {len(kept)} characters (min_count={min_count})")
    return CharVocab.from_characters(kept)


class SeparationMask(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    n: int
    matrix: torch.Tensor


def build_separation_mask(n: int) -> SeparationMask:
    """2n x 2n additive mask: pinyin queries (rows n..2n-1) never see text keys (cols 0..n-1)."""
    if n < 1:
        raise EncodingError(f"Separation mask needs n >= 1, got {n}")
    matrix = torch.zeros(2 * n, 2 * n, dtype=torch.float32)
    matrix[n:, :n] = MASK_VALUE
    return SeparationMask(n=n, matrix=matrix)


class EncodedExample(BaseModel):
    char_ids: list[int]
    initial_ids: list[int]
    final_ids: list[int]
    label_ids: list[int] | None = None

    @property
    def n(self) -> int:
        return len(self.char_ids)


class PhoneticsAwareBatch(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    char_ids: torch.Tensor  # (B, N)
    initial_ids: torch.Tensor  # (B, N)
    final_ids: torch.Tensor  # (B, N)
    positions: torch.Tensor  # (B, 2N), 1-based, 0 = padding
    segments: torch.Tensor  # (B, 2N)
    mask: torch.Tensor  # (B, 2N, 2N) additive
    lengths: torch.Tensor  # (B,)
    labels_z: torch.Tensor | None = None  # (B, 2N), IGNORE_INDEX on padding

    @property
    def n(self) -> int:
        return self.char_ids.shape[1]

    @property
    def size(self) -> int:
        return self.char_ids.shape[0]

    @property
    def text_mask(self) -> torch.Tensor:
        """(B, N) bool, True on real (non-padding) character positions."""
        return torch.arange(self.n)[None, :] < self.lengths[:, None]

    @property
    def text_labels(self) -> torch.Tensor | None:
        return None if self.labels_z is None else self.labels_z[:, : self.n]

    @property
    def pinyin_labels(self) -> torch.Tensor | None:
        return None if self.labels_z is None else self.labels_z[:, self.n:]


def encode_ids(
    ex: CorrectionExample | str,
    cv: CharVocab,
    pv: PhonemeVocab,
    table: PinyinTable,
    with_labels: bool,
    max_len: int,
) -> EncodedExample:
    source = ex if isinstance(ex, str) else ex.source
    if with_labels:
        if isinstance(ex, str):
            raise EncodingError("Labels requested for an unlabelled sentence")
        if len(ex.source) != len(ex.target):
            raise EncodingError(
                f"Source/target length mismatch: {len(ex.source)} vs {len(ex.target)}"
            )
    if len(source) == 0:
        raise EncodingError("Cannot encode an empty sentence")
    if len(source) > max_len:
        raise EncodingError(f"Sentence of length {len(source)} exceeds max_len={max_len}")

    initial_ids, final_ids = [], []
    for ch in source:
        syllable = table.char_to_syllable(ch)
        if syllable is None or ch not in cv:
            initial_ids.append(pv.nopy_id)
            final_ids.append(pv.nopy_id)
        else:
            initial_ids.append(pv.initial_id(syllable.initial))
            final_ids.append(pv.final_id(syllable.final))

    return EncodedExample(
        char_ids=[cv.id_of(ch) for ch in source],
        initial_ids=initial_ids,
        final_ids=final_ids,
        label_ids=[cv.id_of(ch) for ch in ex.target] if with_labels else None,
    )


def padding_mask(lengths: torch.Tensor, n: int, halves: int = 1) -> torch.Tensor:
    """
    Additive mask of shape (B, halves*n, halves*n) hiding padded key columns from every query.
    With halves=2 the padding of the text half repeats in the pinyin half.
    """
    half_padded = torch.arange(n)[None, :] >= lengths[:, None]
    keys_padded = half_padded.repeat(1, halves)
    size = halves * n
    mask = torch.zeros(lengths.shape[0], size, size, dtype=torch.float32)
    return mask.masked_fill(keys_padded[:, None, :], MASK_VALUE)


def collate(encoded: Sequence[EncodedExample], separation: bool = True) -> PhoneticsAwareBatch:
    if not encoded:
        raise EncodingError("Cannot collate an empty batch")
    batch_size = len(encoded)
    n = max(e.n for e in encoded)
    lengths = torch.tensor([e.n for e in encoded], dtype=torch.long)
    with_labels = encoded[0].label_ids is not None

    char_ids = torch.zeros(batch_size, n, dtype=torch.long)
    initial_ids = torch.zeros(batch_size, n, dtype=torch.long)
    final_ids = torch.zeros(batch_size, n, dtype=torch.long)
    positions = torch.zeros(batch_size, 2 * n, dtype=torch.long)
    labels = None
    if with_labels:
        labels = torch.full((batch_size, 2 * n), IGNORE_INDEX, dtype=torch.long)
    for b, e in enumerate(encoded):
        k = e.n
        char_ids[b, :k] = torch.tensor(e.char_ids)
        initial_ids[b, :k] = torch.tensor(e.initial_ids)
        final_ids[b, :k] = torch.tensor(e.final_ids)
        positions[b, :k] = torch.arange(1, k + 1)
        positions[b, n:n + k] = torch.arange(1, k + 1)
        if labels is not None:
            if e.label_ids is None:
                raise EncodingError("Cannot mix labelled and unlabelled examples in one batch")
            labels[b, :k] = torch.tensor(e.label_ids)
            labels[b, n:n + k] = torch.tensor(e.label_ids)

    segments = torch.cat(
        [torch.zeros(batch_size, n, dtype=torch.long), torch.ones(batch_size, n, dtype=torch.long)],
        dim=1,
    )
    mask = padding_mask(lengths, n, halves=2)
    if separation:
        mask = torch.minimum(mask, build_separation_mask(n).matrix)

    return PhoneticsAwareBatch(
        char_ids=char_ids,
        initial_ids=initial_ids,
        final_ids=final_ids,
        positions=positions,
        segments=segments,
        mask=mask,
        lengths=lengths,
        labels_z=labels,
    )


def encode_example(
    ex: CorrectionExample | str,
    cv: CharVocab,
    pv: PhonemeVocab,
    table: PinyinTable,
    with_labels: bool,
    max_len: int = 140,
) -> PhoneticsAwareBatch:
    return collate([encode_ids(ex, cv, pv, table, with_labels, max_len)])


def encode_batch(
    examples: Sequence[CorrectionExample | str],
    cv: CharVocab,
    pv: PhonemeVocab,
    table: PinyinTable,
    with_labels: bool,
    max_len: int = 140,
    separation: bool = True,
) -> PhoneticsAwareBatch:
    return collate(
        [encode_ids(ex, cv, pv, table, with_labels, max_len) for ex in examples], separation
    )


def decode_ids(ids: Sequence[int], cv: CharVocab) -> str:
    return "".join(cv.token_of(i) for i in ids)


def decode_prediction(ids: Sequence[int], source: str, cv: CharVocab) -> str:
    """Map predicted ids to text; reserved ids and unknown source characters keep the source."""
    chars = []
    for index, ch in zip(ids, source):
        if cv.is_reserved(index) or ch not in cv:
            chars.append(ch)
        else:
            chars.append(cv.token_of(index))
    return "".join(chars)

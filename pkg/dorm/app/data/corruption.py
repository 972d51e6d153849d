"""
Synthetic misspellings: the pretraining corruption procedure and the toy corpus generator.

Every fragment draws from its own numpy stream seeded by (policy seed, fragment index), so output
does not depend on how fragments are scheduled.
"""
from __future__ import annotations

import json
import logging
import math
from pathlib import Path
from typing import TYPE_CHECKING, Literal, Sequence

import numpy as np
from pydantic import BaseModel
from tqdm import tqdm

from ..core.exceptions import DatasetError
from ..pinyin.syllable import VALID_SYLLABLES, decompose
from ..pinyin.table import PinyinTable, is_chinese
from .dataset import cut_fragments, dataset_stats, write_dataset
from .models import CorrectionExample, CorruptionPolicy, DatasetStats

if TYPE_CHECKING:
    from ..core.textcodec import CharVocab

logger = logging.getLogger(__name__)

Branch = Literal["confusion", "random", "keep"]


class CorruptionEvent(BaseModel):
    position: int  # 0-based index into the fragment
    original: str
    replacement: str
    branch: Branch


class ToyManifest(BaseModel):
    seed: int
    vocab_size: int
    n_examples: int
    min_len: int
    max_len: int
    policy: CorruptionPolicy
    syllables: dict[str, str]


class ToyCorpus(BaseModel):
    dataset_path: Path
    manifest_path: Path
    table_path: Path
    characters: list[str]


def fragment_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


def _draw_branch(policy: CorruptionPolicy, rng: np.random.Generator) -> Branch:
    u = rng.random()
    if u < policy.p_confusion:
        return "confusion"
    if u < policy.p_confusion + policy.p_random:
        return "random"
    return "keep"


def corrupt_fragment_with_events(
    clean: str,
    policy: CorruptionPolicy,
    table: PinyinTable,
    vocab: "CharVocab",
    rng: np.random.Generator | None = None,
    random_pool: Sequence[str] | None = None,
) -> tuple[CorrectionExample, list[CorruptionEvent]]:
    if rng is None:
        rng = np.random.default_rng(policy.seed)
    chinese = [i for i, ch in enumerate(clean) if is_chinese(ch)]
    if not chinese:
        return CorrectionExample(source=clean, target=clean), []

    pool = list(random_pool) if random_pool is not None else vocab.chinese_characters()
    # round() absorbs float noise such as 0.15 * 20 = 3.0000000000000004
    k = min(len(chinese), math.ceil(round(policy.select_rate * len(chinese), 9)))
    selected = sorted(rng.choice(chinese, size=k, replace=False).tolist()) if k else []

    source = list(clean)
    events: list[CorruptionEvent] = []
    for i in selected:
        ch = clean[i]
        branch = _draw_branch(policy, rng)
        replacement = ch
        if branch == "confusion":
            candidates = table.confusion_candidates(ch) if ch in table else []
            if candidates:
                replacement = candidates[rng.integers(len(candidates))]
            else:
                branch = "random"
        if branch == "random":
            others = [c for c in pool if c != ch]
            if others:
                replacement = others[rng.integers(len(others))]
            else:
                branch = "keep"
        source[i] = replacement
        events.append(
            CorruptionEvent(position=i, original=ch, replacement=replacement, branch=branch)
        )

    return CorrectionExample(source="".join(source), target=clean), events


def corrupt_fragment(
    clean: str,
    policy: CorruptionPolicy,
    table: PinyinTable,
    vocab: "CharVocab",
    rng: np.random.Generator | None = None,
) -> CorrectionExample:
    example, _ = corrupt_fragment_with_events(clean, policy, table, vocab, rng)
    return example


def make_pretrain_corpus(
    raw_paths: Sequence[str | Path],
    out_path: str | Path,
    policy: CorruptionPolicy,
    table: PinyinTable,
    vocab: "CharVocab",
    max_fragment: int = 256,
) -> DatasetStats:
    fragments: list[str] = []
    for path in raw_paths:
        try:
            with open(path, encoding="utf-8") as read:
                text = read.read()
        except UnicodeDecodeError as e:
            raise DatasetError(f"{path}: not UTF-8 text (byte {e.start}: {e.reason})") from e
        except OSError as e:
            raise DatasetError(f"Cannot read raw text {path}: {e.strerror}") from e
        fragments.extend(cut_fragments(text, max_fragment))
    logger.info(f"Cut {len(fragments)} fragments from {len(raw_paths)} files")

    pool = vocab.chinese_characters()
    examples = []
    for index, fragment in enumerate(tqdm(fragments, desc="Corrupting", unit="fragment")):
        example, _ = corrupt_fragment_with_events(
            fragment, policy, table, vocab, fragment_rng(policy.seed, index), pool
        )
        examples.append(example)
    write_dataset(examples, out_path)

    stats = dataset_stats(examples)
    logger.info(
        f"Wrote {stats.sentences} pretraining examples with {stats.errors} corrupted characters "
        f"to {out_path}"
    )
    return stats


def _toy_table(
    characters: list[str], rng: np.random.Generator, group_size: int = 4
) -> PinyinTable:
    """Assign one syllable per group of characters so every character has homophones."""
    inventory = sorted(VALID_SYLLABLES)
    n_groups = math.ceil(len(characters) / group_size)
    if n_groups > len(inventory):
        raise DatasetError(f"Toy vocabulary of {len(characters)} exceeds the syllable inventory")
    picks = rng.choice(len(inventory), size=n_groups, replace=False)
    readings = {}
    for i, ch in enumerate(characters):
        base = inventory[picks[i // group_size]]
        readings[ch] = [decompose(f"{base}{int(rng.integers(1, 5))}")]
    return PinyinTable(readings)


def make_toy_corpus(
    out_path: str | Path,
    vocab_size: int = 100,
    n_examples: int = 64,
    min_len: int = 8,
    max_len: int = 16,
    seed: int = 7,
    policy: CorruptionPolicy | None = None,
) -> ToyCorpus:
    """
    Write a seeded synthetic corpus: characters from U+4E00 upward grouped onto shared syllables,
    sentences drawn by a fixed-successor random walk and closed with '。', then corrupted.
    """
    from ..core.textcodec import CharVocab

    if vocab_size < 1 or n_examples < 1 or not 2 <= min_len <= max_len:
        raise DatasetError(
            f"Invalid toy corpus parameters: vocab_size={vocab_size}, n_examples={n_examples}, "
            f"lengths {min_len}-{max_len}"
        )
    policy = policy or CorruptionPolicy(seed=seed)
    rng = np.random.default_rng(seed)

    characters = [chr(0x4E00 + i) for i in range(vocab_size)]
    table = _toy_table(characters, rng)
    successors = rng.integers(vocab_size, size=(vocab_size, 3))

    vocab = CharVocab.from_characters(characters + ["。"])
    examples = []
    for index in range(n_examples):
        length = int(rng.integers(min_len, max_len + 1))
        walk = [int(rng.integers(vocab_size))]
        while len(walk) < length - 1:
            walk.append(int(successors[walk[-1], rng.integers(3)]))
        clean = "".join(characters[i] for i in walk) + "。"
        examples.append(
            corrupt_fragment(clean, policy, table, vocab, fragment_rng(policy.seed, index))
        )

    out_path = Path(out_path)
    write_dataset(examples, out_path)
    table_path = out_path.with_suffix(".pinyin.tsv")
    table.save(table_path)
    manifest = ToyManifest(
        seed=seed,
        vocab_size=vocab_size,
        n_examples=n_examples,
        min_len=min_len,
        max_len=max_len,
        policy=policy,
        syllables={ch: str(table.char_to_syllable(ch)) for ch in characters},
    )
    manifest_path = out_path.with_suffix(".manifest.json")
    with open(manifest_path, "w", encoding="utf-8") as write:
        json.dump(manifest.model_dump(), write, ensure_ascii=False, indent=2)

    logger.info(f"Wrote toy corpus of {n_examples} examples to {out_path}")
    return ToyCorpus(
        dataset_path=out_path,
        manifest_path=manifest_path,
        table_path=table_path,
        characters=characters,
    )

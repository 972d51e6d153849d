"""
Correction datasets, corpus statistics and synthetic corruption.
"""
from .models import CorrectionExample, CorruptionPolicy, DatasetStats
from .dataset import cut_fragments, dataset_stats, read_dataset, write_dataset
from .corruption import (
    CorruptionEvent,
    corrupt_fragment,
    corrupt_fragment_with_events,
    fragment_rng,
    make_pretrain_corpus,
    make_toy_corpus,
)

__all__ = [
    "CorrectionExample",
    "CorruptionPolicy",
    "DatasetStats",
    "cut_fragments",
    "dataset_stats",
    "read_dataset",
    "write_dataset",
    "CorruptionEvent",
    "corrupt_fragment",
    "corrupt_fragment_with_events",
    "fragment_rng",
    "make_pretrain_corpus",
    "make_toy_corpus",
]

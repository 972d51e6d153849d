"""
Sentence-level detection and correction metrics.

A sentence is a detection hit when its predicted error positions equal the gold ones exactly, and a
correction hit when the prediction equals the target. Both are counted only for sentences that
contain errors. Precision is taken over sentences the system changed; zero denominators give 0.
"""
from __future__ import annotations

import logging
from typing import Sequence

from pydantic import BaseModel, Field, computed_field

from ..core.exceptions import DatasetError
from ..data.models import CorrectionExample
from ..pinyin.table import PinyinTable

logger = logging.getLogger(__name__)

SIGHAN13_IGNORED = frozenset("的得地")


class EvalReport(BaseModel):
    detection_precision: float = Field(ge=0.0, le=1.0)
    detection_recall: float = Field(ge=0.0, le=1.0)
    detection_f1: float = Field(ge=0.0, le=1.0)
    correction_precision: float = Field(ge=0.0, le=1.0)
    correction_recall: float = Field(ge=0.0, le=1.0)
    correction_f1: float = Field(ge=0.0, le=1.0)
    overcorrections: int
    undercorrections: int
    sentences: int
    sentences_with_errors: int
    predicted_positive: int
    detection_tp: int
    correction_tp: int
    postproc13: bool = False

    def as_text(self) -> str:
        return "".join(f"{key}: {value}\n" for key, value in self.model_dump().items())

    def as_json_line(self) -> str:
        return self.model_dump_json()


class PhoneticRecall(BaseModel):
    restored: int
    total: int

    @computed_field
    @property
    def recall(self) -> float:
        return self.restored / self.total if self.total else 0.0


def _ratio(numerator: int, denominator: int) -> float:
    return numerator / denominator if denominator else 0.0


def _f1(precision: float, recall: float) -> float:
    return 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0


def postprocess_sighan13(source: str, prediction: str) -> str:
    """Keep the source character wherever it is 的, 得 or 地, whatever was predicted there."""
    if len(source) != len(prediction):
        raise DatasetError(
            f"postprocess_sighan13: lengths differ ({len(source)} vs {len(prediction)})"
        )
    return "".join(x if x in SIGHAN13_IGNORED else p for x, p in zip(source, prediction))


def evaluate(triples: Sequence[tuple[str, str, str]], postproc13: bool = False) -> EvalReport:
    """Score (source, target, prediction) triples."""
    gold_positive = predicted_positive = 0
    detection_tp = correction_tp = 0
    over = under = 0
    for index, (source, target, prediction) in enumerate(triples):
        if not len(source) == len(target) == len(prediction):
            raise DatasetError(
                f"Sentence {index}: lengths differ "
                f"(source {len(source)}, target {len(target)}, prediction {len(prediction)})"
            )
        if postproc13:
            prediction = postprocess_sighan13(source, prediction)

        gold = {i for i, (x, y) in enumerate(zip(source, target)) if x != y}
        predicted = {i for i, (x, p) in enumerate(zip(source, prediction)) if x != p}
        if gold:
            gold_positive += 1
            detection_tp += predicted == gold
            correction_tp += prediction == target
        predicted_positive += bool(predicted)

        for x, y, p in zip(source, target, prediction):
            if p != y:
                if x == y:
                    over += 1
                else:
                    under += 1

    detection_p = _ratio(detection_tp, predicted_positive)
    detection_r = _ratio(detection_tp, gold_positive)
    correction_p = _ratio(correction_tp, predicted_positive)
    correction_r = _ratio(correction_tp, gold_positive)
    return EvalReport(
        detection_precision=detection_p,
        detection_recall=detection_r,
        detection_f1=_f1(detection_p, detection_r),
        correction_precision=correction_p,
        correction_recall=correction_r,
        correction_f1=_f1(correction_p, correction_r),
        overcorrections=over,
        undercorrections=under,
        sentences=len(triples),
        sentences_with_errors=gold_positive,
        predicted_positive=predicted_positive,
        detection_tp=detection_tp,
        correction_tp=correction_tp,
        postproc13=postproc13,
    )


def evaluate_examples(
    examples: Sequence[CorrectionExample], predictions: Sequence[str], postproc13: bool = False
) -> EvalReport:
    if len(examples) != len(predictions):
        raise DatasetError(
            f"{len(examples)} examples but {len(predictions)} predictions"
        )
    return evaluate(
        [(ex.source, ex.target, p) for ex, p in zip(examples, predictions)], postproc13
    )


def phonetic_recall(
    examples: Sequence[CorrectionExample],
    predictions: Sequence[str],
    table: PinyinTable,
    postproc13: bool = False,
) -> PhoneticRecall:
    """Character-level recall over misspellings whose default readings share initial and final."""
    restored = total = 0
    for index, (ex, prediction) in enumerate(zip(examples, predictions)):
        if len(prediction) != len(ex.source):
            raise DatasetError(f"Sentence {index}: prediction length differs from source")
        if postproc13:
            prediction = postprocess_sighan13(ex.source, prediction)
        for x, y, p in zip(ex.source, ex.target, prediction):
            if x == y:
                continue
            sx, sy = table.char_to_syllable(x), table.char_to_syllable(y)
            if sx is None or sy is None or sx.key != sy.key:
                continue
            total += 1
            restored += p == y
    return PhoneticRecall(restored=restored, total=total)

from .evaluator import (
    EvalReport,
    PhoneticRecall,
    evaluate,
    evaluate_examples,
    phonetic_recall,
    postprocess_sighan13,
)

__all__ = [
    "EvalReport",
    "PhoneticRecall",
    "evaluate",
    "evaluate_examples",
    "phonetic_recall",
    "postprocess_sighan13",
]

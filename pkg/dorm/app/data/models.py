from __future__ import annotations

import math

from pydantic import BaseModel, ConfigDict, Field, model_validator


class CorrectionExample(BaseModel):
    """A misspelled sentence and its correction, aligned character by character."""

    model_config = ConfigDict(frozen=True)

    source: str
    target: str
    line_no: int | None = None

    @model_validator(mode="after")
    def _check_lengths(self) -> "CorrectionExample":
        if len(self.source) != len(self.target):
            raise ValueError(
                f"source and target lengths differ: {len(self.source)} vs {len(self.target)}"
            )
        return self

    @property
    def error_positions(self) -> list[int]:
        """1-based positions where source and target disagree."""
        return [i + 1 for i, (x, y) in enumerate(zip(self.source, self.target)) if x != y]

    @property
    def has_errors(self) -> bool:
        return self.source != self.target

    def as_line(self) -> str:
        return f"{self.source}\t{self.target}"


class CorruptionPolicy(BaseModel):
    select_rate: float = Field(default=0.15, ge=0.0, le=1.0)
    p_confusion: float = Field(default=0.80, ge=0.0, le=1.0)
    p_random: float = Field(default=0.10, ge=0.0, le=1.0)
    p_keep: float = Field(default=0.10, ge=0.0, le=1.0)
    seed: int = 0

    @model_validator(mode="after")
    def _check_branches(self) -> "CorruptionPolicy":
        total = self.p_confusion + self.p_random + self.p_keep
        if not math.isclose(total, 1.0, abs_tol=1e-9):
            raise ValueError(f"branch probabilities must sum to 1, got {total}")
        return self


class DatasetStats(BaseModel):
    sentences: int
    errors: int
    average_length: float
    sentences_with_errors: int

from __future__ import annotations

import logging
import math

import torch
from pydantic import BaseModel, ConfigDict, Field

from .exceptions import EncodingError, NonFiniteLossError
from .model import DormModel
from .numeric import bidirectional_kl, cross_entropy
from .textcodec import PhoneticsAwareBatch

logger = logging.getLogger(__name__)


class LossWeights(BaseModel):
    """Coefficients of the pinyin, self-distillation and raw-text terms."""

    alpha: float = Field(default=1.0, ge=0.0, allow_inf_nan=False)
    beta: float = Field(default=1.2, ge=0.0, allow_inf_nan=False)
    gamma: float = Field(default=0.97, ge=0.0, allow_inf_nan=False)

    @property
    def needs_raw_pass(self) -> bool:
        return self.beta > 0 or self.gamma > 0


class LossBreakdown(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    l_text: torch.Tensor
    l_pinyin: torch.Tensor
    l_kl: torch.Tensor
    l_raw: torch.Tensor
    l_joint: torch.Tensor

    def as_floats(self) -> dict[str, float]:
        return {
            name: getattr(self, name).item()
            for name in ("l_text", "l_pinyin", "l_kl", "l_raw", "l_joint")
        }


def loss_text(text_logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    return cross_entropy(text_logits, labels)


def loss_pinyin(pinyin_logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """labels are the second half of Z, i.e. the gold characters again."""
    return cross_entropy(pinyin_logits, labels)


def loss_selfdistill(
    text_logits: torch.Tensor, raw_logits: torch.Tensor, text_mask: torch.Tensor | None = None
) -> torch.Tensor:
    """Symmetric KL between the two passes over text positions; padding excluded via text_mask."""
    return bidirectional_kl(text_logits, raw_logits, text_mask)


def loss_raw(raw_logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    return cross_entropy(raw_logits, labels)


def loss_joint(
    l_text: torch.Tensor,
    l_pinyin: torch.Tensor,
    l_kl: torch.Tensor,
    l_raw: torch.Tensor,
    weights: LossWeights,
) -> LossBreakdown:
    terms = {"l_text": l_text, "l_pinyin": l_pinyin, "l_kl": l_kl, "l_raw": l_raw}
    for name, value in terms.items():
        number = float(value.detach())
        if not math.isfinite(number):
            raise NonFiniteLossError(name, number)
    l_joint = l_text + weights.alpha * l_pinyin + weights.beta * l_kl + weights.gamma * l_raw
    return LossBreakdown(**terms, l_joint=l_joint)


def compute_losses(
    model: DormModel, batch: PhoneticsAwareBatch, weights: LossWeights
) -> LossBreakdown:
    """
    Both forward passes and the joint loss for a labelled batch.

    Pass 1 encodes the phonetics-aware sequence; pass 2 encodes the characters alone and is skipped
    when neither beta nor gamma uses it.
    """
    if batch.labels_z is None:
        raise EncodingError("Loss computation needs a batch encoded with labels")
    text_logits, pinyin_logits = model.forward_phonetics(batch)
    labels = batch.text_labels
    l_text = loss_text(text_logits, labels)
    l_pinyin = loss_pinyin(pinyin_logits, batch.pinyin_labels)

    if weights.needs_raw_pass:
        raw_logits = model.forward_raw(batch.char_ids, batch.lengths)
        l_kl = loss_selfdistill(text_logits, raw_logits, batch.text_mask)
        l_raw = loss_raw(raw_logits, labels)
    else:
        l_kl = l_raw = torch.zeros((), dtype=l_text.dtype)
    return loss_joint(l_text, l_pinyin, l_kl, l_raw, weights)

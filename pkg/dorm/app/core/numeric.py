"""
Tensor operations the encoder and the losses are built from.

Tensors and reverse-mode differentiation come from torch; the functions here add the shape
contracts, the additive-mask convention and the error behaviour the rest of the package relies on.
"""
from __future__ import annotations

import logging
import random
from typing import Callable, Iterable

import numpy as np
import torch
import torch.nn.functional as F
from pydantic import BaseModel

from .exceptions import GradientCheckError, NonFiniteLossError, NumericError, ShapeError

logger = logging.getLogger(__name__)

# Additive mask value. exp(MASK_VALUE - rowmax) underflows to exactly 0 in float32 and float64.
MASK_VALUE = -1e9
LAYER_NORM_EPS = 1e-12
IGNORE_INDEX = -100


def set_deterministic(seed: int, enabled: bool = True) -> None:
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)
    if enabled:
        torch.use_deterministic_algorithms(True)
        torch.set_num_threads(1)
        logger.info(f"Deterministic numeric mode enabled (seed={seed})")


def matmul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.dim() < 2 or b.dim() < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {tuple(a.shape)} x {tuple(b.shape)}")
    return torch.matmul(a, b)


def masked_softmax(logits: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
    """Softmax over the last dimension after adding an additive mask of 0 / MASK_VALUE entries."""
    if mask is None:
        return torch.softmax(logits, dim=-1)
    if mask.shape[-1] != logits.shape[-1]:
        raise ShapeError(
            f"mask row length {mask.shape[-1]} does not match logits {tuple(logits.shape)}"
        )
    if bool((mask <= MASK_VALUE / 2).all(dim=-1).any()):
        raise NumericError("masked_softmax: a row is entirely masked")
    return torch.softmax(logits + mask.to(logits.dtype), dim=-1)


def layer_norm(
    x: torch.Tensor, gain: torch.Tensor, bias: torch.Tensor, eps: float = LAYER_NORM_EPS
) -> torch.Tensor:
    if gain.shape != x.shape[-1:] or bias.shape != x.shape[-1:]:
        raise ShapeError(
            f"layer_norm gain/bias {tuple(gain.shape)}/{tuple(bias.shape)} "
            f"do not match last dimension of {tuple(x.shape)}"
        )
    return F.layer_norm(x, x.shape[-1:], gain, bias, eps)


def cross_entropy(
    logits: torch.Tensor, labels: torch.Tensor, ignore_index: int = IGNORE_INDEX
) -> torch.Tensor:
    """Mean of -log softmax(logits)[label] over positions whose label is not ignore_index."""
    if logits.shape[:-1] != labels.shape:
        raise ShapeError(
            f"cross_entropy logits {tuple(logits.shape)} vs labels {tuple(labels.shape)}"
        )
    kept = labels != ignore_index
    if not bool(kept.any()):
        raise NumericError("cross_entropy: every position is ignored")
    vocab_size = logits.shape[-1]
    if bool(((labels[kept] < 0) | (labels[kept] >= vocab_size)).any()):
        raise ShapeError(f"cross_entropy: label out of range for |V|={vocab_size}")
    return F.cross_entropy(
        logits.reshape(-1, vocab_size), labels.reshape(-1), ignore_index=ignore_index
    )


def bidirectional_kl(
    p_logits: torch.Tensor, q_logits: torch.Tensor, weights: torch.Tensor | None = None
) -> torch.Tensor:
    """0.5 * (KL(P||Q) + KL(Q||P)) per position, averaged over positions (weighted if given)."""
    if p_logits.shape != q_logits.shape:
        raise ShapeError(
            f"bidirectional_kl shapes differ: {tuple(p_logits.shape)} vs {tuple(q_logits.shape)}"
        )
    log_p = F.log_softmax(p_logits, dim=-1)
    log_q = F.log_softmax(q_logits, dim=-1)
    kl_pq = (log_p.exp() * (log_p - log_q)).sum(dim=-1)
    kl_qp = (log_q.exp() * (log_q - log_p)).sum(dim=-1)
    per_position = 0.5 * (kl_pq + kl_qp)
    if weights is None:
        return per_position.mean()
    weights = weights.to(per_position.dtype)
    return (per_position * weights).sum() / weights.sum().clamp_min(1.0)


class GradientReport(BaseModel):
    max_relative_error: float
    per_parameter: dict[str, float]
    checked_entries: int


def check_gradients(
    f: Callable[[], torch.Tensor],
    params: dict[str, torch.Tensor] | Iterable[tuple[str, torch.Tensor]],
    h: float = 1e-3,
    floor: float = 1e-3,
    max_entries: int | None = None,
    seed: int = 0,
) -> GradientReport:
    """
    Compare autograd gradients of the scalar f() with central differences
    (f(x+h) - f(x-h)) / 2h. The relative error of an entry is
    |analytic - numeric| / max(|analytic|, |numeric|, floor).

    Parameters with requires_grad=False are skipped. max_entries samples that many entries per
    tensor (seeded); None checks every entry.
    """
    named = [(name, p) for name, p in dict(params).items() if p.requires_grad]
    if not named:
        raise GradientCheckError("check_gradients: no trainable parameters given")

    loss = f()
    if not torch.isfinite(loss):
        raise NonFiniteLossError("f", loss.item())
    grads = torch.autograd.grad(loss, [p for _, p in named], allow_unused=True)

    generator = torch.Generator().manual_seed(seed)
    per_parameter: dict[str, float] = {}
    checked = 0
    with torch.no_grad():
        for (name, param), grad in zip(named, grads):
            flat = param.detach().view(-1)
            analytic = torch.zeros_like(flat) if grad is None else grad.reshape(-1)
            indices = torch.arange(flat.numel())
            if max_entries is not None and flat.numel() > max_entries:
                indices = torch.randperm(flat.numel(), generator=generator)[:max_entries]
            worst = 0.0
            for i in indices.tolist():
                original = flat[i].item()
                flat[i] = original + h
                plus = f().item()
                flat[i] = original - h
                minus = f().item()
                flat[i] = original
                if not (np.isfinite(plus) and np.isfinite(minus)):
                    raise NonFiniteLossError(name, plus if not np.isfinite(plus) else minus)
                numeric = (plus - minus) / (2 * h)
                a = analytic[i].item()
                error = abs(a - numeric) / max(abs(a), abs(numeric), floor)
                worst = max(worst, error)
                checked += 1
            per_parameter[name] = worst

    report = GradientReport(
        max_relative_error=max(per_parameter.values()),
        per_parameter=per_parameter,
        checked_entries=checked,
    )
    logger.debug(
        f"Gradient check over {checked} entries: max rel. err {report.max_relative_error:.3e}"
    )
    return report

"""
Encoder over the phonetics-aware sequence.

The text half is embedded as word + position + segment 0, the pinyin half as initial + final +
position + segment 1, with each pinyin slot reusing its character's position. Blocks are post-norm
transformer layers. The output head is the word embedding table itself plus a bias, shared by text
and pinyin positions.
"""
from __future__ import annotations

import logging
import math
from typing import Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F
from pydantic import BaseModel, Field, model_validator

from ..pinyin.table import PinyinTable
from .exceptions import EncodingError, ShapeError
from .numeric import LAYER_NORM_EPS, layer_norm, masked_softmax, matmul
from .textcodec import (
    CharVocab,
    PhonemeVocab,
    PhoneticsAwareBatch,
    decode_prediction,
    encode_batch,
    padding_mask,
)

logger = logging.getLogger(__name__)

INIT_STD = 0.02


class ModelConfig(BaseModel):
    vocab_size: int = Field(gt=2)
    num_initials: int = Field(gt=1)
    num_finals: int = Field(gt=1)
    layers: int = Field(default=2, ge=1)
    heads: int = Field(default=2, ge=1)
    d_model: int = Field(default=64, ge=1)
    ffn_size: int = Field(default=256, ge=1)
    dropout: float = Field(default=0.1, ge=0.0, lt=1.0)
    max_len: int = Field(default=140, ge=1)
    separation_mask: bool = True

    @model_validator(mode="after")
    def _check_heads(self) -> "ModelConfig":
        if self.d_model % self.heads != 0:
            raise ValueError(f"d_model={self.d_model} is not divisible by heads={self.heads}")
        return self

    @property
    def head_size(self) -> int:
        return self.d_model // self.heads

    @classmethod
    def for_vocabs(cls, cv: CharVocab, pv: PhonemeVocab, **overrides) -> "ModelConfig":
        return cls(
            vocab_size=len(cv),
            num_initials=pv.num_initials,
            num_finals=pv.num_finals,
            **overrides,
        )


class LayerNorm(nn.Module):
    def __init__(self, size: int, eps: float = LAYER_NORM_EPS):
        super().__init__()
        self.gain = nn.Parameter(torch.ones(size))
        self.bias = nn.Parameter(torch.zeros(size))
        self.eps = eps

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return layer_norm(x, self.gain, self.bias, self.eps)


class MultiHeadAttention(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.heads = config.heads
        self.head_size = config.head_size
        self.query = nn.Linear(config.d_model, config.d_model)
        self.key = nn.Linear(config.d_model, config.d_model)
        self.value = nn.Linear(config.d_model, config.d_model)
        self.output = nn.Linear(config.d_model, config.d_model)
        self.dropout = nn.Dropout(config.dropout)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        batch, length, _ = x.shape
        return x.view(batch, length, self.heads, self.head_size).transpose(1, 2)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns the projected context and the (B, heads, T, T) attention weights."""
        q, k, v = self._split(self.query(x)), self._split(self.key(x)), self._split(self.value(x))
        scores = matmul(q, k.transpose(-1, -2)) / math.sqrt(self.head_size)
        weights = masked_softmax(scores, mask[:, None, :, :])
        context = matmul(self.dropout(weights), v)
        batch, _, length, _ = context.shape
        context = context.transpose(1, 2).reshape(batch, length, self.heads * self.head_size)
        return self.output(context), weights


class EncoderBlock(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.attention = MultiHeadAttention(config)
        self.attention_norm = LayerNorm(config.d_model)
        self.ffn_in = nn.Linear(config.d_model, config.ffn_size)
        self.ffn_out = nn.Linear(config.ffn_size, config.d_model)
        self.ffn_norm = LayerNorm(config.d_model)
        self.dropout = nn.Dropout(config.dropout)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        attended, weights = self.attention(x, mask)
        x = self.attention_norm(x + self.dropout(attended))
        inner = F.gelu(self.ffn_in(x))
        x = self.ffn_norm(x + self.dropout(self.ffn_out(inner)))
        return x, weights


class DormModel(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.word_embeddings = nn.Embedding(config.vocab_size, config.d_model)
        self.initial_embeddings = nn.Embedding(config.num_initials, config.d_model)
        self.final_embeddings = nn.Embedding(config.num_finals, config.d_model)
        self.position_embeddings = nn.Embedding(config.max_len + 1, config.d_model)
        self.segment_embeddings = nn.Embedding(2, config.d_model)
        self.dropout = nn.Dropout(config.dropout)
        self.blocks = nn.ModuleList([EncoderBlock(config) for _ in range(config.layers)])
        self.output_bias = nn.Parameter(torch.zeros(config.vocab_size))
        self.apply(self._init_weights)

    @staticmethod
    def _init_weights(module: nn.Module) -> None:
        if isinstance(module, (nn.Linear, nn.Embedding)):
            nn.init.trunc_normal_(module.weight, std=INIT_STD, a=-2 * INIT_STD, b=2 * INIT_STD)
        if isinstance(module, nn.Linear) and module.bias is not None:
            nn.init.zeros_(module.bias)

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def _lookup(self, table: nn.Embedding, ids: torch.Tensor, name: str) -> torch.Tensor:
        if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= table.num_embeddings):
            raise ShapeError(f"{name} id out of range [0, {table.num_embeddings})")
        return table(ids)

    def embed(self, batch: PhoneticsAwareBatch) -> torch.Tensor:
        """H^0 of shape (B, 2N, d_model)."""
        positions = self._lookup(self.position_embeddings, batch.positions, "position")
        segments = self._lookup(self.segment_embeddings, batch.segments, "segment")
        text = self._lookup(self.word_embeddings, batch.char_ids, "character")
        pinyin = self._lookup(self.initial_embeddings, batch.initial_ids, "initial") + self._lookup(
            self.final_embeddings, batch.final_ids, "final"
        )
        return torch.cat([text, pinyin], dim=1) + positions + segments

    def encode(
        self, h0: torch.Tensor, mask: torch.Tensor, return_attention: bool = False
    ) -> torch.Tensor | tuple[torch.Tensor, list[torch.Tensor]]:
        if h0.dim() != 3 or h0.shape[-1] != self.config.d_model:
            raise ShapeError(f"encode expects (B, T, {self.config.d_model}), got {tuple(h0.shape)}")
        length = h0.shape[1]
        if mask.dim() == 2:
            mask = mask[None]
        if mask.shape[-2:] != (length, length):
            raise ShapeError(f"mask {tuple(mask.shape)} does not fit sequence length {length}")

        h = self.dropout(h0)
        attentions = []
        for block in self.blocks:
            h, weights = block(h, mask)
            attentions.append(weights)
        return (h, attentions) if return_attention else h

    def predict_logits(self, h: torch.Tensor) -> torch.Tensor:
        if h.shape[-1] != self.config.d_model:
            raise ShapeError(
                f"predict_logits expects last dim {self.config.d_model}, got {h.shape[-1]}"
            )
        return matmul(h, self.word_embeddings.weight.transpose(0, 1)) + self.output_bias

    def attention_mask(self, batch: PhoneticsAwareBatch) -> torch.Tensor:
        if self.config.separation_mask:
            return batch.mask
        return padding_mask(batch.lengths, batch.n, halves=2)

    def forward_phonetics(self, batch: PhoneticsAwareBatch) -> tuple[torch.Tensor, torch.Tensor]:
        self._check_length(batch.n)
        h = self.encode(self.embed(batch), self.attention_mask(batch))
        logits = self.predict_logits(h)
        return logits[:, : batch.n], logits[:, batch.n:]

    def _raw_positions(self, lengths: torch.Tensor, n: int) -> torch.Tensor:
        steps = torch.arange(1, n + 1)[None, :].expand(lengths.shape[0], n)
        return torch.where(steps <= lengths[:, None], steps, torch.zeros_like(steps))

    def forward_raw(
        self, char_ids: torch.Tensor, lengths: torch.Tensor | None = None
    ) -> torch.Tensor:
        """Text logits of the characters alone: positions 1..n, segment 0, padding mask only."""
        batch, n = char_ids.shape
        self._check_length(n)
        if lengths is None:
            lengths = torch.full((batch,), n, dtype=torch.long)
        h0 = (
            self._lookup(self.word_embeddings, char_ids, "character")
            + self.position_embeddings(self._raw_positions(lengths, n))
            + self.segment_embeddings.weight[0]
        )
        return self.predict_logits(self.encode(h0, padding_mask(lengths, n)))

    def encode_pinyin_only(self, batch: PhoneticsAwareBatch) -> torch.Tensor:
        """Hidden states of the pinyin sub-sequence encoded on its own (segment 1)."""
        n = batch.n
        h0 = (
            self._lookup(self.initial_embeddings, batch.initial_ids, "initial")
            + self._lookup(self.final_embeddings, batch.final_ids, "final")
            + self.position_embeddings(self._raw_positions(batch.lengths, n))
            + self.segment_embeddings.weight[1]
        )
        return self.encode(h0, padding_mask(batch.lengths, n))

    def _check_length(self, n: int) -> None:
        if n > self.config.max_len:
            raise EncodingError(f"Sequence length {n} exceeds max_len={self.config.max_len}")


@torch.no_grad()
def correct_sentences(
    sentences: Sequence[str],
    model: DormModel,
    cv: CharVocab,
    pv: PhonemeVocab,
    table: PinyinTable,
    batch_size: int = 32,
) -> list[str]:
    """Argmax over text positions (first index on ties); pinyin-position predictions are dropped."""
    was_training = model.training
    model.eval()
    corrected = list(sentences)
    pending = [i for i, s in enumerate(sentences) if s]
    try:
        for start in range(0, len(pending), batch_size):
            indices = pending[start:start + batch_size]
            batch = encode_batch(
                [sentences[i] for i in indices],
                cv,
                pv,
                table,
                with_labels=False,
                max_len=model.config.max_len,
                separation=model.config.separation_mask,
            )
            text_logits, _ = model.forward_phonetics(batch)
            predicted = text_logits.argmax(dim=-1)
            for row, i in enumerate(indices):
                length = len(sentences[i])
                corrected[i] = decode_prediction(predicted[row, :length].tolist(), sentences[i], cv)
    finally:
        model.train(was_training)
    return corrected


def infer_correct(
    sentence: str, model: DormModel, cv: CharVocab, pv: PhonemeVocab, table: PinyinTable
) -> str:
    return correct_sentences([sentence], model, cv, pv, table)[0]


@torch.no_grad()
def attention_weights(
    sentence: str, model: DormModel, cv: CharVocab, pv: PhonemeVocab, table: PinyinTable
) -> dict[str, torch.Tensor]:
    """Per-layer, per-head (2n, 2n) attention maps keyed 'layer{l}.head{h}'."""
    was_training = model.training
    model.eval()
    try:
        batch = encode_batch(
            [sentence], cv, pv, table, with_labels=False, max_len=model.config.max_len
        )
        _, attentions = model.encode(model.embed(batch), model.attention_mask(batch), True)
    finally:
        model.train(was_training)
    return {
        f"layer{layer}.head{head}": weights[0, head]
        for layer, weights in enumerate(attentions)
        for head in range(weights.shape[1])
    }

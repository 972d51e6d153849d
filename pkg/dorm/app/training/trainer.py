"""
Training loop: two forward passes per step, the joint loss, AdamW under a warmup/linear-decay
schedule, dev-set model selection and resumable checkpoints.
"""
from __future__ import annotations

import logging
import math
import shutil
import time
from pathlib import Path
from typing import Any, Literal, Sequence

import numpy as np
import torch
from pydantic import BaseModel, Field, ValidationError, model_validator
from tqdm import tqdm

from ..core.checkpoint import load_checkpoint, save_checkpoint
from ..core.exceptions import CheckpointError, NonFiniteLossError, ShapeError, UsageError
from ..core.model import DormModel, ModelConfig, correct_sentences
from ..core.numeric import set_deterministic
from ..core.objective import LossBreakdown, LossWeights, compute_losses
from ..core.textcodec import (
    CharVocab,
    PhonemeVocab,
    PhoneticsAwareBatch,
    build_char_vocab,
    collate,
    encode_ids,
)
from ..data.dataset import read_dataset
from ..data.models import CorrectionExample
from ..evaluation.evaluator import EvalReport, evaluate_examples
from ..observability import JsonlLog
from ..pinyin.table import PinyinTable

logger = logging.getLogger(__name__)

FINETUNE_LR = 75e-6
PRETRAIN_LR = 5e-5
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8

# Keys of a run config file that configure the encoder rather than the loop.
MODEL_KEYS = ("layers", "heads", "d_model", "ffn_size", "dropout", "max_len", "separation_mask")


class TrainConfig(BaseModel):
    mode: Literal["pretrain", "finetune"] = "finetune"
    epochs: int = Field(default=3, ge=1)
    batch_size: int = Field(default=32, ge=1)
    lr: float | None = Field(default=None, gt=0.0)
    warmup_fraction: float = Field(default=0.1, ge=0.0, lt=1.0)
    weight_decay: float = Field(default=0.01, ge=0.0)
    clip_norm: float = Field(default=1.0, gt=0.0)
    alpha: float = Field(default=1.0, ge=0.0, allow_inf_nan=False)
    beta: float = Field(default=1.2, ge=0.0, allow_inf_nan=False)
    gamma: float = Field(default=0.97, ge=0.0, allow_inf_nan=False)
    seed: int = 42
    deterministic: bool = False
    eval_interval: int = Field(default=0, ge=0)  # 0: evaluate at the end of each epoch
    max_steps: int | None = Field(default=None, ge=1)
    resume: bool = False
    init_checkpoint: str | None = None

    @model_validator(mode="after")
    def _apply_mode(self) -> "TrainConfig":
        if self.mode == "pretrain":
            # Pretraining recovers corrupted characters without the self-distillation terms.
            self.beta = 0.0
            self.gamma = 0.0
        if self.lr is None:
            self.lr = PRETRAIN_LR if self.mode == "pretrain" else FINETUNE_LR
        return self

    @property
    def weights(self) -> LossWeights:
        return LossWeights(alpha=self.alpha, beta=self.beta, gamma=self.gamma)


class TrainLogRecord(BaseModel):
    step: int
    epoch: int
    lr: float
    l_text: float
    l_pinyin: float
    l_kl: float
    l_raw: float
    l_joint: float
    wall_time: float
    eval: EvalReport | None = None


class TrainResult(BaseModel):
    steps: int
    best_dev_f1: float | None
    last_checkpoint: Path
    best_checkpoint: Path
    log_path: Path
    final_losses: dict[str, float]


def build_run_configs(
    values: dict[str, Any], overrides: dict[str, Any] | None = None
) -> tuple[TrainConfig, dict[str, Any]]:
    """Split flat config values (file, then overrides) into a TrainConfig and model overrides."""
    merged = {**values, **{k: v for k, v in (overrides or {}).items() if v is not None}}
    unknown = set(merged) - set(TrainConfig.model_fields) - set(MODEL_KEYS)
    if unknown:
        raise UsageError(f"Unknown config keys: {', '.join(sorted(unknown))}")
    model_values = {k: v for k, v in merged.items() if k in MODEL_KEYS}
    try:
        train = TrainConfig(**{k: v for k, v in merged.items() if k not in MODEL_KEYS})
        # Validate the model keys early; vocabulary sizes are filled in later.
        ModelConfig(vocab_size=3, num_initials=2, num_finals=2, **model_values)
    except ValidationError as e:
        raise UsageError(f"Invalid configuration: {e}") from e
    return train, model_values


def lr_at(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Linear ramp 0 -> peak over the warmup fraction, then linear decay to 0 at total_steps."""
    if total_steps <= 0:
        raise UsageError(f"total_steps must be positive, got {total_steps}")
    if not 0 <= step <= total_steps:
        raise UsageError(f"step {step} outside [0, {total_steps}]")
    warmup = cfg.warmup_fraction * total_steps
    if step < warmup:
        return cfg.lr * step / warmup
    return cfg.lr * (total_steps - step) / (total_steps - warmup)


def build_optimizer(model: DormModel, cfg: TrainConfig) -> torch.optim.AdamW:
    # Matrices and embedding tables decay; biases and layer-norm gains do not.
    decay = [p for p in model.parameters() if p.requires_grad and p.dim() >= 2]
    no_decay = [p for p in model.parameters() if p.requires_grad and p.dim() < 2]
    groups = [
        {"params": decay, "weight_decay": cfg.weight_decay},
        {"params": no_decay, "weight_decay": 0.0},
    ]
    return torch.optim.AdamW(groups, lr=cfg.lr, betas=ADAM_BETAS, eps=ADAM_EPS)


def optimizer_update(optimizer: torch.optim.Optimizer, lr: float) -> None:
    for group in optimizer.param_groups:
        group["lr"] = lr
    optimizer.step()


def train_step(
    model: DormModel,
    batch: PhoneticsAwareBatch,
    optimizer: torch.optim.Optimizer,
    cfg: TrainConfig,
    lr: float,
) -> LossBreakdown:
    model.train()
    optimizer.zero_grad()
    try:
        breakdown = compute_losses(model, batch, cfg.weights)
    except NonFiniteLossError as e:
        logger.error(
            f"Aborting step: {e} (lr={lr:.3e}, batch lengths {batch.lengths.tolist()})"
        )
        raise
    breakdown.l_joint.backward()
    torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.clip_norm)
    optimizer_update(optimizer, lr)
    return breakdown


def evaluate_model(
    model: DormModel,
    examples: Sequence[CorrectionExample],
    cv: CharVocab,
    pv: PhonemeVocab,
    table: PinyinTable,
    batch_size: int = 32,
) -> EvalReport:
    predictions = correct_sentences(
        [ex.source for ex in examples], model, cv, pv, table, batch_size
    )
    return evaluate_examples(examples, predictions)


def _optimizer_arrays(model: DormModel, optimizer: torch.optim.Optimizer) -> dict[str, np.ndarray]:
    arrays = {}
    for name, p in model.named_parameters():
        state = optimizer.state.get(p)
        if not state:
            continue
        arrays[f"optim.{name}.exp_avg"] = state["exp_avg"].detach().cpu().numpy()
        arrays[f"optim.{name}.exp_avg_sq"] = state["exp_avg_sq"].detach().cpu().numpy()
        arrays[f"optim.{name}.step"] = np.asarray(float(state["step"]), dtype=np.float32)
    arrays["rng.torch"] = torch.get_rng_state().numpy()
    return arrays


def _restore_optimizer(
    model: DormModel, optimizer: torch.optim.Optimizer, extras: dict[str, np.ndarray]
) -> None:
    for name, p in model.named_parameters():
        key = f"optim.{name}"
        if f"{key}.exp_avg" not in extras:
            continue
        for moment in ("exp_avg", "exp_avg_sq"):
            shape = tuple(extras[f"{key}.{moment}"].shape)
            if shape != tuple(p.shape):
                raise ShapeError(
                    f"Checkpoint {moment} for '{name}' has shape {shape}, "
                    f"parameter has {tuple(p.shape)}"
                )
        optimizer.state[p] = {
            "step": torch.tensor(float(extras[f"{key}.step"])),
            "exp_avg": torch.from_numpy(extras[f"{key}.exp_avg"].copy()),
            "exp_avg_sq": torch.from_numpy(extras[f"{key}.exp_avg_sq"].copy()),
        }
    if "rng.torch" not in extras:
        raise CheckpointError("Training checkpoint has no RNG state")
    torch.set_rng_state(torch.from_numpy(extras["rng.torch"].copy()))


def run_training(
    train_path: str | Path,
    dev_path: str | Path | None,
    cfg: TrainConfig,
    out_dir: str | Path,
    table: PinyinTable,
    vocab: CharVocab | None = None,
    model_overrides: dict[str, Any] | None = None,
) -> TrainResult:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    last_path, best_path = out_dir / "last.npz", out_dir / "best.npz"
    vocab_path = out_dir / "vocab.txt"
    set_deterministic(cfg.seed, cfg.deterministic)

    train = read_dataset(train_path)
    dev = read_dataset(dev_path) if dev_path else None
    resuming = cfg.resume and last_path.exists()
    if resuming and vocab is None and vocab_path.exists():
        vocab = CharVocab.load(vocab_path)
    if vocab is None:
        vocab = build_char_vocab([p for p in (train_path, dev_path) if p])
    vocab.save(vocab_path)
    pv = PhonemeVocab()

    step, best_f1 = 0, None
    if resuming:
        loaded = load_checkpoint(last_path, vocab, pv)
        model = loaded.model
        optimizer = build_optimizer(model, cfg)
        _restore_optimizer(model, optimizer, loaded.extras)
        state = loaded.manifest.train_state or {}
        step, best_f1 = int(state.get("step", 0)), state.get("best_dev_f1")
        logger.info(f"Resuming from {last_path} at step {step}")
    else:
        if cfg.init_checkpoint:
            model = load_checkpoint(cfg.init_checkpoint, vocab, pv).model
            logger.info(f"Initialised from {cfg.init_checkpoint}")
        else:
            model = DormModel(ModelConfig.for_vocabs(vocab, pv, **(model_overrides or {})))
        optimizer = build_optimizer(model, cfg)
    logger.info(
        f"Training {model.num_parameters()} parameters in {cfg.mode} mode "
        f"(alpha={cfg.alpha}, beta={cfg.beta}, gamma={cfg.gamma}, lr={cfg.lr})"
    )

    encoded = [encode_ids(ex, vocab, pv, table, True, model.config.max_len) for ex in train]
    steps_per_epoch = math.ceil(len(encoded) / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    stop_at = min(total_steps, cfg.max_steps or total_steps)

    def save_last() -> None:
        save_checkpoint(
            last_path,
            model,
            vocab,
            pv,
            extras=_optimizer_arrays(model, optimizer),
            train_state={"step": step, "best_dev_f1": best_f1, "mode": cfg.mode},
        )

    def run_eval() -> EvalReport | None:
        nonlocal best_f1
        if dev is None:
            return None
        report = evaluate_model(model, dev, vocab, pv, table, cfg.batch_size)
        logger.info(
            f"Step {step}: dev correction F1 {report.correction_f1:.4f} "
            f"(detection F1 {report.detection_f1:.4f})"
        )
        if best_f1 is None or report.correction_f1 > best_f1:
            best_f1 = report.correction_f1
            save_checkpoint(
                best_path, model, vocab, pv, train_state={"step": step, "best_dev_f1": best_f1}
            )
        return report

    log = JsonlLog(out_dir / "train_log.jsonl")
    breakdown = None
    start = time.time()
    progress = tqdm(total=stop_at, initial=step, desc=f"Training ({cfg.mode})", unit="step")
    while step < stop_at:
        epoch, offset = divmod(step, steps_per_epoch)
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(encoded))
        for b in range(offset, steps_per_epoch):
            indices = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            batch = collate([encoded[i] for i in indices], model.config.separation_mask)
            lr = lr_at(step, total_steps, cfg)
            breakdown = train_step(model, batch, optimizer, cfg, lr)
            step += 1
            progress.update(1)
            progress.set_postfix(loss=f"{breakdown.l_joint.item():.4f}")

            end_of_epoch = b == steps_per_epoch - 1
            due = step % cfg.eval_interval == 0 if cfg.eval_interval else end_of_epoch
            report = run_eval() if due else None
            log.append(
                TrainLogRecord(
                    step=step,
                    epoch=epoch,
                    lr=lr,
                    **breakdown.as_floats(),
                    wall_time=time.time() - start,
                    eval=report,
                )
            )
            if end_of_epoch or step >= stop_at:
                save_last()
            if step >= stop_at:
                break
    progress.close()

    if dev is None or not best_path.exists():
        shutil.copyfile(last_path, best_path)
    logger.info(f"Finished at step {step}; best dev correction F1 {best_f1}")
    return TrainResult(
        steps=step,
        best_dev_f1=best_f1,
        last_checkpoint=last_path,
        best_checkpoint=best_path,
        log_path=log.path,
        final_losses=breakdown.as_floats() if breakdown is not None else {},
    )

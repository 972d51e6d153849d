import json

import numpy as np
import pytest
import torch

from app.core.checkpoint import load_checkpoint, read_container, write_container
from app.core.exceptions import ShapeError, UsageError
from app.core.textcodec import CharVocab, PhonemeVocab, encode_batch
from app.data import CorrectionExample, make_toy_corpus, read_dataset
from app.pinyin import load_pinyin_table
from app.training import (
    TrainConfig,
    build_optimizer,
    build_run_configs,
    lr_at,
    optimizer_update,
    run_training,
    train_step,
)
from app.training.trainer import FINETUNE_LR, PRETRAIN_LR

TINY = {"layers": 1, "heads": 2, "d_model": 16, "ffn_size": 32, "dropout": 0.1, "max_len": 32}


@pytest.fixture
def toy(tmp_path):
    corpus = make_toy_corpus(tmp_path / "toy.tsv", vocab_size=24, n_examples=12, seed=3)
    return corpus, load_pinyin_table(corpus.table_path)


class TestTrainConfig:
    def test_finetune_defaults(self):
        cfg = TrainConfig()
        assert (cfg.alpha, cfg.beta, cfg.gamma) == (1.0, 1.2, 0.97)
        assert cfg.lr == FINETUNE_LR and cfg.epochs == 3

    def test_pretrain_drops_distillation(self):
        cfg = TrainConfig(mode="pretrain", beta=5.0)
        assert cfg.beta == cfg.gamma == 0.0
        assert cfg.lr == PRETRAIN_LR
        assert not cfg.weights.needs_raw_pass

    def test_build_run_configs_splits_model_keys(self):
        values = {"epochs": "2", "d_model": "32", "heads": "4"}
        cfg, model = build_run_configs(values, {"lr": 1e-3})
        assert cfg.epochs == 2 and cfg.lr == 1e-3
        assert model == {"d_model": "32", "heads": "4"}

    def test_overrides_win_and_none_is_ignored(self):
        cfg, _ = build_run_configs({"epochs": "5"}, {"epochs": 1, "batch_size": None})
        assert cfg.epochs == 1 and cfg.batch_size == 32

    @pytest.mark.parametrize(
        "values", [{"epochz": "1"}, {"epochs": "zero"}, {"d_model": "10", "heads": "3"}]
    )
    def test_invalid(self, values):
        with pytest.raises(UsageError):
            build_run_configs(values)


class TestSchedule:
    def test_shape(self):
        cfg = TrainConfig(lr=1.0, warmup_fraction=0.1)
        assert lr_at(0, 100, cfg) == 0.0
        assert lr_at(5, 100, cfg) == pytest.approx(0.5)
        assert lr_at(10, 100, cfg) == pytest.approx(1.0)
        assert lr_at(55, 100, cfg) == pytest.approx(0.5)
        assert lr_at(100, 100, cfg) == 0.0

    def test_continuous(self):
        cfg = TrainConfig(lr=1.0, warmup_fraction=0.25)
        values = [lr_at(s, 40, cfg) for s in range(41)]
        assert max(abs(a - b) for a, b in zip(values, values[1:])) <= 1.0 / 10 + 1e-12

    def test_no_warmup(self):
        assert lr_at(0, 10, TrainConfig(lr=2.0, warmup_fraction=0.0)) == 2.0

    def test_out_of_range(self):
        with pytest.raises(UsageError):
            lr_at(11, 10, TrainConfig())
        with pytest.raises(UsageError):
            lr_at(0, 0, TrainConfig())


class TestOptimizer:
    def test_zero_gradients_leave_parameters(self, make_model):
        model = make_model()
        optimizer = build_optimizer(model, TrainConfig(weight_decay=0.0))
        before = [p.detach().clone() for p in model.parameters()]
        for p in model.parameters():
            p.grad = torch.zeros_like(p)
        optimizer_update(optimizer, 1e-3)
        for old, new in zip(before, model.parameters()):
            assert torch.equal(old, new)

    def test_weight_decay_only_on_matrices(self, make_model):
        model = make_model()
        optimizer = build_optimizer(model, TrainConfig())
        decay, no_decay = optimizer.param_groups
        assert decay["weight_decay"] == 0.01 and no_decay["weight_decay"] == 0.0
        assert all(p.dim() >= 2 for p in decay["params"])
        assert all(p.dim() == 1 for p in no_decay["params"])

    def test_matches_hand_rolled_adamw(self):
        param = torch.nn.Parameter(torch.tensor([0.5]))
        optimizer = torch.optim.AdamW(
            [param], lr=0.1, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01
        )
        x, m, v = 0.5, 0.0, 0.0
        for step, g in enumerate([0.3, -0.2, 0.7], start=1):
            param.grad = torch.tensor([g])
            optimizer_update(optimizer, 0.1)
            x -= 0.1 * 0.01 * x
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            m_hat, v_hat = m / (1 - 0.9**step), v / (1 - 0.999**step)
            x -= 0.1 * m_hat / (v_hat**0.5 + 1e-8)
            assert param.item() == pytest.approx(x, abs=1e-6)

    def test_constant_gradient_step_tends_to_lr(self):
        param = torch.nn.Parameter(torch.tensor([0.0]))
        optimizer = torch.optim.AdamW([param], lr=0.01, weight_decay=0.0)
        previous = 0.0
        for _ in range(200):
            param.grad = torch.tensor([3.0])
            optimizer_update(optimizer, 0.01)
            step, previous = previous - param.item(), param.item()
        assert step == pytest.approx(0.01, rel=1e-3)


def test_train_step_clips_gradients(make_model, cv, pv, table):
    model = make_model()
    cfg = TrainConfig(clip_norm=1e-4)
    optimizer = build_optimizer(model, cfg)
    examples = [CorrectionExample(source="可是我真户秃。", target="可是我真糊涂。")]
    batch = encode_batch(examples, cv, pv, table, with_labels=True)
    breakdown = train_step(model, batch, optimizer, cfg, lr=1e-3)
    norm = torch.sqrt(sum(p.grad.pow(2).sum() for p in model.parameters() if p.grad is not None))
    assert norm.item() <= 1e-4 * (1 + 1e-3)
    assert breakdown.l_joint.item() > 0


def train(corpus, table, out, dev=False, model_overrides=TINY, **settings):
    dev_path = corpus.dataset_path if dev else None
    cfg = TrainConfig(**settings)
    return run_training(
        corpus.dataset_path, dev_path, cfg, out, table, model_overrides=model_overrides
    )


class TestRunTraining:
    def test_writes_checkpoints_and_log(self, tmp_path, toy):
        corpus, table = toy
        result = train(corpus, table, tmp_path / "run", dev=True, epochs=2, batch_size=4, lr=1e-3)
        assert result.steps == 6
        assert result.last_checkpoint.exists() and result.best_checkpoint.exists()
        assert (tmp_path / "run" / "vocab.txt").exists()
        records = [json.loads(line) for line in result.log_path.read_text().splitlines()]
        assert [r["step"] for r in records] == list(range(1, 7))
        assert sum(r["eval"] is not None for r in records) == 2
        assert records[0]["lr"] == 0.0
        assert result.best_dev_f1 is not None

    def test_eval_interval(self, tmp_path, toy):
        corpus, table = toy
        result = train(
            corpus, table, tmp_path / "run", dev=True, epochs=2, batch_size=4, eval_interval=2
        )
        records = [json.loads(line) for line in result.log_path.read_text().splitlines()]
        assert [r["step"] for r in records if r["eval"] is not None] == [2, 4, 6]

    def test_pretrain_logs_zero_distillation(self, tmp_path, toy):
        corpus, table = toy
        result = train(corpus, table, tmp_path / "pre", mode="pretrain", epochs=1, batch_size=6)
        assert result.final_losses["l_kl"] == 0.0 and result.final_losses["l_raw"] == 0.0
        assert result.best_dev_f1 is None
        assert result.best_checkpoint.read_bytes() == result.last_checkpoint.read_bytes()

    def test_init_checkpoint(self, tmp_path, toy):
        corpus, table = toy
        first = train(corpus, table, tmp_path / "a", epochs=1, batch_size=6)
        vocab = CharVocab.load(tmp_path / "a" / "vocab.txt")
        cfg = TrainConfig(epochs=1, batch_size=6, init_checkpoint=str(first.last_checkpoint))
        second = run_training(corpus.dataset_path, None, cfg, tmp_path / "b", table, vocab=vocab)
        loaded = load_checkpoint(second.last_checkpoint, vocab, PhonemeVocab())
        assert loaded.model.config.layers == 1

    def test_resume_is_bit_identical(self, tmp_path, toy):
        corpus, table = toy
        base = dict(epochs=3, batch_size=4, lr=1e-3, seed=5, deterministic=True)
        straight = train(corpus, table, tmp_path / "straight", **base)
        train(corpus, table, tmp_path / "split", max_steps=4, **base)
        resumed = train(corpus, table, tmp_path / "split", resume=True, **base)
        assert resumed.steps == straight.steps == 9
        a = load_checkpoint(straight.last_checkpoint).model.state_dict()
        b = load_checkpoint(resumed.last_checkpoint).model.state_dict()
        for name in a:
            assert torch.equal(a[name], b[name]), name

    def test_resume_rejects_misshaped_moments(self, tmp_path, toy):
        corpus, table = toy
        base = dict(epochs=2, batch_size=4, seed=5)
        first = train(corpus, table, tmp_path / "run", max_steps=2, **base)
        manifest, arrays = read_container(first.last_checkpoint)
        name = next(k for k in arrays if k.endswith(".exp_avg"))
        arrays[name] = arrays[name][..., :1]
        write_container(first.last_checkpoint, arrays, manifest)
        with pytest.raises(ShapeError, match="exp_avg"):
            train(corpus, table, tmp_path / "run", resume=True, **base)

    def test_training_lowers_loss(self, tmp_path, toy):
        corpus, table = toy
        result = train(
            corpus,
            table,
            tmp_path / "run",
            model_overrides={**TINY, "dropout": 0.0},
            epochs=15,
            batch_size=4,
            lr=3e-3,
        )
        records = [json.loads(line) for line in result.log_path.read_text().splitlines()]
        first = np.mean([r["l_text"] for r in records[:3]])
        last = np.mean([r["l_text"] for r in records[-3:]])
        assert last < first
        assert len(read_dataset(corpus.dataset_path)) == 12

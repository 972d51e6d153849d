"""
End-to-end properties of the encoder, the objective and the data pipeline.

The training runs at the bottom take a few minutes on a CPU and are marked slow.
"""
import json
import math
import random
from collections import Counter

import numpy as np
import pytest
import torch

from app.core.checkpoint import load_checkpoint
from app.core.model import DormModel, ModelConfig, attention_weights, correct_sentences
from app.core.numeric import check_gradients, set_deterministic
from app.core.objective import LossWeights, compute_losses
from app.core.textcodec import CharVocab, PhonemeVocab, encode_batch
from app.data import (
    CorrectionExample,
    CorruptionPolicy,
    corrupt_fragment_with_events,
    fragment_rng,
    make_toy_corpus,
    read_dataset,
    write_dataset,
)
from app.evaluation import evaluate_examples
from app.pinyin import load_pinyin_table
from app.training import TrainConfig, run_training


@pytest.fixture
def deterministic():
    set_deterministic(0)
    yield


def homophone_sentence(rng: random.Random, table, length: int) -> str:
    chars = [ch for ch in table.characters() if table.confusion_candidates(ch)]
    return "".join(rng.choice(chars) for _ in range(length))


def test_separation_isolates_pinyin_from_text(deterministic, make_model, cv, pv, table):
    rng = random.Random(0)
    for trial in range(100):
        model = make_model(seed=trial, layers=rng.randint(1, 3), separation_mask=True)
        n = rng.randint(1, 12)
        original = homophone_sentence(rng, table, n)
        chars = list(original)
        for i in rng.sample(range(n), rng.randint(1, n)):
            chars[i] = rng.choice(table.confusion_candidates(chars[i]))
        changed = "".join(chars)

        first = encode_batch([original, "可是"], cv, pv, table, with_labels=False)
        second = encode_batch([changed, "可是"], cv, pv, table, with_labels=False)
        assert torch.equal(first.initial_ids, second.initial_ids)
        assert torch.equal(first.final_ids, second.final_ids)
        _, pinyin_first = model.forward_phonetics(first)
        _, pinyin_second = model.forward_phonetics(second)
        assert torch.equal(pinyin_first, pinyin_second), trial

        if trial % 10 == 0:
            for weights in attention_weights(changed, model, cv, pv, table).values():
                assert torch.all(weights[n:, :n] == 0)


def test_pinyin_only_encoding_matches_pinyin_rows(make_model, cv, pv, table):
    rng = random.Random(1)
    for trial in range(20):
        model = make_model(seed=100 + trial)
        sentences = [homophone_sentence(rng, table, rng.randint(1, 10)) for _ in range(3)]
        batch = encode_batch(sentences, cv, pv, table, with_labels=False)
        full = model.encode(model.embed(batch), model.attention_mask(batch))[:, batch.n :]
        alone = model.encode_pinyin_only(batch)
        keep = batch.text_mask
        assert (full[keep] - alone[keep]).abs().max().item() < 1e-5, trial


def test_joint_loss_gradients_match_finite_differences(pv, table):
    torch.manual_seed(0)
    characters = [ch for ch in table.characters() if table.confusion_candidates(ch)][:18]
    cv = CharVocab.from_characters(characters)
    assert len(cv) == 20

    config = ModelConfig.for_vocabs(
        cv, pv, layers=2, heads=2, d_model=16, ffn_size=32, dropout=0.0, max_len=16
    )
    model = DormModel(config).double()

    def sentence(*indices: int) -> str:
        return "".join(characters[i] for i in indices)

    examples = [
        CorrectionExample(source=sentence(1, 4, 9), target=sentence(0, 4, 9)),
        CorrectionExample(source=sentence(12, 3), target=sentence(12, 2)),
    ]
    batch = encode_batch(examples, cv, pv, table, with_labels=True)
    weights = LossWeights(alpha=1.0, beta=1.2, gamma=0.97)

    report = check_gradients(
        lambda: compute_losses(model, batch, weights).l_joint,
        dict(model.named_parameters()),
        h=1e-3,
        max_entries=24,
    )
    assert report.max_relative_error < 1e-3, report.per_parameter


def test_corruption_statistics(table, cv):
    rng = random.Random(2)
    policy = CorruptionPolicy(seed=11)
    selected = total = 0
    branches: Counter[str] = Counter()
    for index in range(5000):
        clean = homophone_sentence(rng, table, 20)
        _, events = corrupt_fragment_with_events(
            clean, policy, table, cv, fragment_rng(policy.seed, index)
        )
        total += len(clean)
        selected += len(events)
        branches.update(e.branch for e in events)
    assert total == 100_000
    assert abs(selected / total - 0.15) <= 0.01
    for branch, share in (("confusion", 0.8), ("random", 0.1), ("keep", 0.1)):
        assert abs(branches[branch] / selected - share) <= 0.02, branch


TOY_STEPS = 500
# Largest step-to-step rise allowed in a window-20 moving average of a loss curve.
SMOOTHED_RISE_TOLERANCE = 2e-3


@pytest.fixture(scope="module")
def toy_runs(tmp_path_factory):
    """The seeded toy corpus trained for TOY_STEPS steps under three self-distillation weights."""
    root = tmp_path_factory.mktemp("toy")
    corpus = make_toy_corpus(root / "toy.tsv", vocab_size=100, n_examples=64, seed=7)
    table = load_pinyin_table(corpus.table_path)
    runs = {}
    for beta in (1.2, 10.0, 0.0):
        cfg = TrainConfig(
            epochs=TOY_STEPS // 4, batch_size=16, lr=1e-3, beta=beta, seed=7, deterministic=True
        )
        result = run_training(
            corpus.dataset_path,
            None,
            cfg,
            root / f"beta{beta}",
            table,
            model_overrides={"dropout": 0.0},
        )
        records = [json.loads(line) for line in result.log_path.read_text().splitlines()]
        runs[beta] = (result, records)
    return corpus, table, runs


def smoothed(values: list[float], window: int = 20) -> np.ndarray:
    return np.convolve(values, np.ones(window) / window, mode="valid")


@pytest.mark.slow
def test_overfits_toy_corpus(toy_runs):
    corpus, table, runs = toy_runs
    result, records = runs[1.2]
    assert result.steps == TOY_STEPS == len(records)

    examples = read_dataset(corpus.dataset_path)
    vocab = CharVocab.load(result.last_checkpoint.parent / "vocab.txt")
    model = load_checkpoint(result.last_checkpoint, vocab, PhonemeVocab()).model
    sources = [ex.source for ex in examples]
    predictions = correct_sentences(sources, model, vocab, PhonemeVocab(), table)
    tokens = sum(len(ex.target) for ex in examples)
    right = sum(p == y for ex, pred in zip(examples, predictions) for p, y in zip(pred, ex.target))
    assert right / tokens >= 0.99
    assert evaluate_examples(examples, predictions).correction_f1 >= 0.95


@pytest.mark.slow
def test_losses_fall_under_default_weights(toy_runs):
    _, _, runs = toy_runs
    _, records = runs[1.2]
    for key in ("l_text", "l_raw"):
        curve = smoothed([r[key] for r in records])
        assert len(curve) == TOY_STEPS - 19
        assert np.diff(curve).max() <= SMOOTHED_RISE_TOLERANCE, key
        assert curve[-1] < curve[0]


@pytest.mark.slow
def test_self_distillation_pulls_passes_together(toy_runs):
    _, _, runs = toy_runs
    strong = np.mean([r["l_kl"] for r in runs[10.0][1][-50:]])
    none = np.mean([r["l_kl"] for r in runs[0.0][1][-50:]])
    assert strong < none


@pytest.mark.slow
def test_restores_example_sentences(tmp_path, table):
    pairs = [
        ("可是我忘了，我真户秃。", "可是我忘了，我真糊涂。"),
        ("可是现在我什么事都不济的。", "可是现在我什么事都不记得。"),
        ("我真糊涂。", "我真糊涂。"),
        ("你好，我是学生。", "你好，我是学生。"),
        ("他们说天大地大。", "他们说天大地大。"),
        ("我们有一个家。", "我们有一个家。"),
    ]
    data = tmp_path / "train.tsv"
    write_dataset([CorrectionExample(source=s, target=t) for s, t in pairs], data)
    cfg = TrainConfig(epochs=300, batch_size=6, lr=1e-3, seed=3, deterministic=True)
    result = run_training(
        data, None, cfg, tmp_path / "run", table, model_overrides={"dropout": 0.0}
    )

    vocab = CharVocab.load(tmp_path / "run" / "vocab.txt")
    model = load_checkpoint(result.last_checkpoint, vocab, PhonemeVocab()).model
    corrected = correct_sentences([s for s, _ in pairs[:2]], model, vocab, PhonemeVocab(), table)
    assert corrected == [t for _, t in pairs[:2]]
    assert not math.isnan(result.final_losses["l_joint"])

import pytest
import torch

from app.core.config import DEFAULT_TABLE_PATH, get_settings
from app.core.model import DormModel, ModelConfig
from app.core.textcodec import CharVocab, PhonemeVocab
from app.pinyin.table import load_pinyin_table


@pytest.fixture(autouse=True)
def fresh_settings():
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture(scope="session")
def table():
    return load_pinyin_table(DEFAULT_TABLE_PATH)


@pytest.fixture(scope="session")
def pv():
    return PhonemeVocab()


@pytest.fixture(scope="session")
def cv(table):
    return CharVocab.from_characters(table.characters() + list("，。！？a"))


@pytest.fixture
def make_model(cv, pv):
    def _make(seed: int = 0, **overrides) -> DormModel:
        torch.manual_seed(seed)
        settings = dict(layers=2, heads=2, d_model=16, ffn_size=32, dropout=0.0, max_len=32)
        settings.update(overrides)
        model = DormModel(ModelConfig.for_vocabs(cv, pv, **settings))
        model.eval()
        return model

    return _make

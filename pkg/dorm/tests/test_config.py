import pytest

from app.core.config import (
    DEFAULT_TABLE_PATH,
    get_settings,
    read_run_config,
    resolve_table_path,
)
from app.core.exceptions import UsageError
from app.evaluation import PhoneticRecall
from app.observability import JsonlLog


def test_settings_from_environment(monkeypatch):
    monkeypatch.setenv("DORM_SEED", "7")
    monkeypatch.setenv("DORM_DETERMINISTIC", "1")
    settings = get_settings()
    assert settings.DORM_SEED == 7
    assert settings.DORM_DETERMINISTIC is True


def test_table_path_resolution(monkeypatch, tmp_path):
    monkeypatch.delenv("DORM_TABLE_PATH", raising=False)
    assert resolve_table_path(None) == DEFAULT_TABLE_PATH
    assert DEFAULT_TABLE_PATH.exists()

    get_settings.cache_clear()
    monkeypatch.setenv("DORM_TABLE_PATH", str(tmp_path / "env.tsv"))
    assert resolve_table_path(None) == tmp_path / "env.tsv"
    assert resolve_table_path(tmp_path / "cli.tsv") == tmp_path / "cli.tsv"


def test_read_run_config(tmp_path):
    path = tmp_path / "finetune.conf"
    path.write_text("# comment\nEPOCHS=3\nbeta = 1.2\nmax_steps=\n", encoding="utf-8")
    assert read_run_config(path) == {"epochs": "3", "beta": "1.2"}


def test_read_run_config_missing(tmp_path):
    with pytest.raises(UsageError):
        read_run_config(tmp_path / "absent.conf")


def test_jsonl_log(tmp_path):
    log = JsonlLog(tmp_path / "logs" / "train.jsonl")
    assert log.read() == []
    log.append(PhoneticRecall(restored=1, total=4))
    log.append(PhoneticRecall(restored=0, total=0))
    assert log.read() == [
        {"restored": 1, "total": 4, "recall": 0.25},
        {"restored": 0, "total": 0, "recall": 0.0},
    ]

from functools import lru_cache
from pathlib import Path

from dotenv import dotenv_values
from pydantic_settings import BaseSettings

from .exceptions import UsageError

# dorm/data, shipped next to the package
DATA_DIR = Path(__file__).resolve().parents[2] / "data"
DEFAULT_TABLE_PATH = DATA_DIR / "pinyin_table.tsv"


class Settings(BaseSettings):
    # Numeric Settings
    DORM_DETERMINISTIC: bool = False
    DORM_SEED: int = 42

    # Logging Settings
    DORM_LOG_LEVEL: str = "INFO"

    # Pinyin Settings
    DORM_TABLE_PATH: str | None = None

    class Config:
        env_file = ".env"
        case_sensitive = True
        extra = "ignore"


@lru_cache()
def get_settings() -> Settings:
    return Settings()


def resolve_table_path(path: str | Path | None) -> Path:
    """Explicit path, else DORM_TABLE_PATH, else the table shipped in dorm/data."""
    if path:
        return Path(path)
    settings = get_settings()
    if settings.DORM_TABLE_PATH:
        return Path(settings.DORM_TABLE_PATH)
    return DEFAULT_TABLE_PATH


def read_run_config(path: str | Path) -> dict[str, str]:
    """Flat `key=value` run configuration; keys are lowercased, empty values dropped."""
    path = Path(path)
    if not path.exists():
        raise UsageError(f"Config file not found: {path}")
    values = dotenv_values(path)
    return {key.strip().lower(): value for key, value in values.items() if value not in (None, "")}

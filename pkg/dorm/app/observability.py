import json
import logging
from pathlib import Path

from pydantic import BaseModel

from .core.config import get_settings

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def init_observability(level: str | None = None) -> None:
    settings = get_settings()
    level = (level or settings.DORM_LOG_LEVEL).upper()
    logging.basicConfig(level=level, format=LOG_FORMAT)
    logger.debug(f"Logging initialised at level {level}")


class JsonlLog:
    """Append-only newline-delimited JSON log of pydantic records."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)

    def append(self, record: BaseModel) -> None:
        with open(self.path, "a", encoding="utf-8") as write:
            write.write(record.model_dump_json() + "\n")

    def read(self) -> list[dict]:
        if not self.path.exists():
            return []
        with open(self.path, encoding="utf-8") as read:
            return [json.loads(line) for line in read if line.strip()]

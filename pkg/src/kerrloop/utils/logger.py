import logging
from src.kerrloop.config import config

logger = logging.getLogger("kerrloop")
logging.basicConfig(level=getattr(logging, config["settings"]["logging_level"]))


def set_level(level: str) -> None:
    logger.setLevel(getattr(logging, level.upper()))

import logging

import coloredlogs

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

logger = logging.getLogger(__name__)


def setup_logging(level: str = "INFO") -> None:
    """
    Install the console log handler for the whole toolkit.

    Args:
        level (str): A standard logging level name such as "DEBUG" or "INFO".

    Raises:
        ValueError: If `level` is not a known logging level name.
    """
    numeric = logging.getLevelName(level.upper())
    if not isinstance(numeric, int):
        raise ValueError(f"Unknown log level: '{level}'")
    coloredlogs.install(level=numeric, fmt=LOG_FORMAT)
    logger.debug(f"Logging initialized at level {level.upper()}.")

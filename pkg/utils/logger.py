"""
Logging Setup
Single place where loguru sinks are configured for the CLI and tests
"""

import sys
from typing import Optional

from loguru import logger

LOG_FORMAT = "<green>{time:HH:mm:ss}</green> | <level>{level: <7}</level> | {name}:{line} - {message}"
FILE_FORMAT = "{time:YYYY-MM-DD HH:mm:ss.SSS} | {level: <7} | {name}:{function}:{line} - {message}"


def configure_logging(level: str = "INFO", log_file: Optional[str] = None) -> None:
    """
    Reset loguru sinks

    Args:
        level: Minimum level for the stderr sink
        log_file: Optional path of an additional DEBUG-level file sink
    """
    logger.remove()
    logger.add(sys.stderr, level=level.upper(), format=LOG_FORMAT, colorize=None)
    if log_file:
        logger.add(log_file, level="DEBUG", format=FILE_FORMAT, encoding="utf-8")

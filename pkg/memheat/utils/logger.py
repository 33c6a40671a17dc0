import logging
import os
from rich.console import Console
from rich.logging import RichHandler


def setup_logger(name: str = "memheat") -> logging.Logger:
    # stdout is reserved for command output (paths, tables, JSON)
    logging.basicConfig(
        level=os.getenv("MEMHEAT_LOG_LEVEL", "INFO").upper(),
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=Console(stderr=True), rich_tracebacks=True)]
    )
    logger = logging.getLogger(name)
    return logger

logger = setup_logger()

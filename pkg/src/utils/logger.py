# src/utils/logger.py
from __future__ import annotations

import logging
from typing import Optional

from rich.console import Console
from rich.logging import RichHandler

_ROOT = "rdp"
_handler: Optional[RichHandler] = None

# stderr only: stdout carries JSON/CSV payloads
_console = Console(stderr=True)


def setup_logging(level: str | int = "WARNING") -> logging.Logger:
    """
    Install a single RichHandler on the 'rdp' logger (idempotent).
    Calling again only changes the level.
    """
    global _handler
    root = logging.getLogger(_ROOT)
    if isinstance(level, str):
        level = logging.getLevelName(level.upper())
        if not isinstance(level, int):
            level = logging.WARNING
    root.setLevel(level)
    if _handler is None:
        _handler = RichHandler(console=_console, show_path=False, markup=False, rich_tracebacks=False)
        _handler.setFormatter(logging.Formatter("%(name)s: %(message)s"))
        root.addHandler(_handler)
        root.propagate = False
    return root


def get_logger(name: str) -> logging.Logger:
    """Return a child of the 'rdp' logger, e.g. get_logger('solver') -> 'rdp.solver'."""
    if name.startswith("src."):
        name = name.split(".")[-1]
    return logging.getLogger(f"{_ROOT}.{name}")

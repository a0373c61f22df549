"""Logging-Konfiguration für Kommandozeile und Tests."""

import logging
import os
import sys
from typing import Optional

LOG_LEVEL_ENV = "APDI_LOG_LEVEL"
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


class LogHelper:
    """Richtet das Root-Logging einmalig ein."""

    _configured = False

    @classmethod
    def resolve_level(cls, override: Optional[str] = None) -> int:
        """
        Bestimmt das Log-Level.

        Args:
            override: Level-Name aus der Kommandozeile (hat Vorrang)

        Returns:
            Numerisches Logging-Level; Standard ist WARNING
        """
        name = (override or os.environ.get(LOG_LEVEL_ENV) or "WARNING").upper()
        level = logging.getLevelName(name)
        if not isinstance(level, int):
            return logging.WARNING
        return level

    @classmethod
    def configure(cls, override: Optional[str] = None) -> None:
        """Konfiguriert den Root-Logger (stderr, ein Handler)."""
        level = cls.resolve_level(override)
        root = logging.getLogger()
        if not cls._configured:
            handler = logging.StreamHandler(sys.stderr)
            handler.setFormatter(logging.Formatter(LOG_FORMAT))
            root.addHandler(handler)
            cls._configured = True
        root.setLevel(level)

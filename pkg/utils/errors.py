"""Fehlerklassen der Anwendung mit zugeordneten Exit-Codes."""


class ApdiError(Exception):
    """Basisklasse für alle Anwendungsfehler."""

    exit_code = 1
    kind = "error"


class ConfigError(ApdiError):
    """Ungültige oder unvollständige Konfiguration."""

    exit_code = 2
    kind = "config"


class DataIOError(ApdiError):
    """Datei fehlt oder kann nicht gelesen/geschrieben werden."""

    exit_code = 3
    kind = "io"


class SchemaError(ApdiError):
    """Datei verletzt das erwartete Format (JSON, JSON-Lines, COCO)."""

    exit_code = 4
    kind = "schema"

    def __init__(self, message: str, path: str = "", line: int | None = None, field: str = ""):
        location = path
        if line is not None:
            location = f"{location}:{line}" if location else f"line {line}"
        if field:
            location = f"{location} [{field}]" if location else f"[{field}]"
        super().__init__(f"{location}: {message}" if location else message)
        self.path = path
        self.line = line
        self.field = field

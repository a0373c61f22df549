"""Validierung von Konfigurations- und Dump-Dokumenten."""

from typing import Any, Iterable

from utils.errors import ConfigError, SchemaError


class SchemaValidator:
    """Prüft Schlüssel, Typen und Schema-Kennungen von JSON-Dokumenten."""

    @classmethod
    def reject_unknown(cls, data: dict, allowed: Iterable[str], path: str = "") -> None:
        """
        Lehnt unbekannte Schlüssel ab.

        Args:
            data: Das zu prüfende Dictionary
            allowed: Erlaubte Schlüssel
            path: Pfad des Abschnitts für die Fehlermeldung

        Raises:
            ConfigError: wenn ein Schlüssel nicht erlaubt ist
        """
        if not isinstance(data, dict):
            raise ConfigError(f"Abschnitt '{path or '<root>'}' muss ein JSON-Objekt sein")
        unknown = sorted(set(data) - set(allowed))
        if unknown:
            prefix = f"{path}." if path else ""
            raise ConfigError(f"Unbekannter Konfigurationsschlüssel: {prefix}{unknown[0]}")

    @classmethod
    def check_schema_tag(cls, record: dict, expected: str, path: str = "", line: int | None = None) -> None:
        """Prüft das Feld 'schema' eines Datensatzes."""
        tag = record.get("schema")
        if tag != expected:
            raise SchemaError(f"Schema-Version {tag!r}, erwartet {expected!r}", path, line, "schema")

    @classmethod
    def require(
        cls,
        record: dict,
        key: str,
        kind: type | tuple[type, ...],
        path: str = "",
        line: int | None = None,
        where: str = "",
    ) -> Any:
        """Liest ein Pflichtfeld und prüft seinen Typ; `where` ist der Pfad des Datensatzes."""
        field = f"{where}.{key}" if where else key
        if key not in record:
            raise SchemaError("Pflichtfeld fehlt", path, line, field)
        value = record[key]
        if isinstance(value, bool) or not isinstance(value, kind):
            raise SchemaError(f"Falscher Typ {type(value).__name__}", path, line, field)
        return value

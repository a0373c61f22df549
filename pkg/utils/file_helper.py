"""Datei-Hilfsfunktionen für deterministische Ausgaben (JSON, JSON-Lines, CSV)."""

import csv
import json
import math
from pathlib import Path
from typing import Any, Iterable, Sequence

from utils.errors import DataIOError, SchemaError


class FileHelper:
    """Hilfsklasse für Dateioperationen."""

    # Feste Formatierung aller Zahlen in Tabellen
    METRIC_FORMAT = "{:.4f}"

    @classmethod
    def ensure_dir(cls, directory: Path) -> Path:
        """
        Legt ein Ausgabeverzeichnis an.

        Args:
            directory: Das Zielverzeichnis

        Returns:
            Das Verzeichnis als Path
        """
        directory = Path(directory)
        try:
            directory.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise DataIOError(f"Verzeichnis kann nicht angelegt werden: {directory}: {e}") from e
        return directory

    @classmethod
    def write_json(cls, path: Path, document: Any) -> Path:
        """Schreibt ein JSON-Dokument mit stabiler Schlüsselreihenfolge."""
        path = Path(path)
        cls.ensure_dir(path.parent)
        try:
            with open(path, "w", encoding="utf-8") as f:
                json.dump(document, f, indent=2, ensure_ascii=False, allow_nan=False)
                f.write("\n")
        except OSError as e:
            raise DataIOError(f"Datei kann nicht geschrieben werden: {path}: {e}") from e
        return path

    @classmethod
    def read_json(cls, path: Path) -> Any:
        """
        Liest ein JSON-Dokument.

        Raises:
            DataIOError: wenn die Datei fehlt oder nicht lesbar ist
            SchemaError: bei ungültigem UTF-8 oder ungültigem JSON
        """
        path = Path(path)
        if not path.exists():
            raise DataIOError(f"Datei nicht gefunden: {path}")
        try:
            data = path.read_bytes()
        except OSError as e:
            raise DataIOError(f"Datei nicht lesbar: {path}: {e}") from e
        try:
            return json.loads(data.decode("utf-8"))
        except UnicodeDecodeError as e:
            line = data[: e.start].count(b"\n") + 1
            raise SchemaError(f"Ungültiges UTF-8 an Byte {e.start}", str(path), line) from e
        except json.JSONDecodeError as e:
            raise SchemaError(f"JSON-Fehler: {e.msg} (Spalte {e.colno})", str(path), e.lineno) from e

    @classmethod
    def write_jsonl(cls, path: Path, records: Iterable[dict]) -> Path:
        """Schreibt einen Datensatz pro Zeile (kompaktes JSON)."""
        path = Path(path)
        cls.ensure_dir(path.parent)
        try:
            with open(path, "w", encoding="utf-8") as f:
                for record in records:
                    f.write(json.dumps(record, separators=(",", ":"), allow_nan=False))
                    f.write("\n")
        except OSError as e:
            raise DataIOError(f"Datei kann nicht geschrieben werden: {path}: {e}") from e
        return path

    @classmethod
    def format_value(cls, value: Any) -> str:
        """Zahlen mit vier Nachkommastellen, alles andere als Text."""
        if isinstance(value, bool) or value is None:
            return "" if value is None else str(value).lower()
        if isinstance(value, int):
            return str(value)
        if isinstance(value, float):
            return "nan" if math.isnan(value) else cls.METRIC_FORMAT.format(value)
        return str(value)

    @classmethod
    def write_csv(cls, path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
        """Schreibt eine CSV-Tabelle mit fester Zahlenformatierung."""
        path = Path(path)
        cls.ensure_dir(path.parent)
        try:
            with open(path, "w", encoding="utf-8", newline="") as f:
                writer = csv.writer(f, lineterminator="\n")
                writer.writerow(header)
                for row in rows:
                    writer.writerow([cls.format_value(v) for v in row])
        except OSError as e:
            raise DataIOError(f"Datei kann nicht geschrieben werden: {path}: {e}") from e
        return path

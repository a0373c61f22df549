"""Hilfsklassen: Box-Operationen, RoI-Pooling, Dateien, Validierung, Logging, Fehler."""

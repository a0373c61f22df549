"""Kommandozeilen-Oberfläche."""

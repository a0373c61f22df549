"""Datenmodelle: Boxen, Szenen, Proposals, Head-Gewichte, Konfiguration und Berichte."""

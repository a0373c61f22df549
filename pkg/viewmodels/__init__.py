"""ViewModel der Experiment-Aktionen."""

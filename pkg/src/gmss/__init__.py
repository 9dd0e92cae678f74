"""Graph-based multi-task self-supervised learning for EEG-style graph signals."""

__version__ = "0.1.0"

"""Data loading, normalization, windowing and synthetic series."""

"""Persistence layer - atomic file storage and model artifacts."""

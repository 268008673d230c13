"""Pydantic models for schemas, configuration, reports and checkpoints."""

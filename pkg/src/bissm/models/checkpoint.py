"""Checkpoint envelope for trained models."""

from typing import Any

from pydantic import BaseModel, Field

from bissm.models.config import ModelConfig
from bissm.models.schema import DatasetSchema, NormalizationSpec

CHECKPOINT_VERSION = 1


class Checkpoint(BaseModel):
    """Everything needed to rebuild a trained model and its preprocessing.

    Parameter tensors are stored as nested lists keyed by parameter id.
    Python's float repr round-trips, so reloading is bit-exact.
    """

    version: int = CHECKPOINT_VERSION
    config: ModelConfig
    dataset: DatasetSchema
    normalization: NormalizationSpec
    params: dict[str, Any] = Field(default_factory=dict)

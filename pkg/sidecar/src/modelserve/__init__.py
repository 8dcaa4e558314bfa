"""modelserve: HTTP sidecar exposing embedding, captioning, and image
generation endpoints behind the augmentation pipeline's wire contracts."""

from .app import ServeConfig, create_app
from .models import ClipEmbedder, ToyCaptioner, ToyEmbedder, ToyGenerator

__all__ = [
    "ClipEmbedder",
    "ServeConfig",
    "ToyCaptioner",
    "ToyEmbedder",
    "ToyGenerator",
    "create_app",
]

"""HTTP service wrapping the training/evaluation pipeline."""

from .app import create_app

__all__ = ["create_app"]

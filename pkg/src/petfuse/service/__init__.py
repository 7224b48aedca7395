"""FastAPI service exposing the pipeline operations over file paths."""

from .app import app, create_app

__all__ = ["app", "create_app"]

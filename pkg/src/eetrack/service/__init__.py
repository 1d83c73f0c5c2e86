"""FastAPI service wrapping the tracker package."""

from .app import app

__all__ = ["app"]

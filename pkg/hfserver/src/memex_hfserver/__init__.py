"""memex/1 protocol server for transformer checkpoints."""

from .backends import CausalBackend, MaskedBackend
from .server import create_app, serve, serve_arm_adapter

__all__ = ["CausalBackend", "MaskedBackend", "create_app", "serve", "serve_arm_adapter"]

"""Recurrent burst super-resolution with key-frame-guided fusion."""

__version__ = "0.1.0"

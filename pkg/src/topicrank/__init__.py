"""Personalized search ranking from topical user profiles and layered kernel matching."""

__version__ = "0.1.0"

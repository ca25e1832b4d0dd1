"""Text-to-motion generation through atomic motion descriptions."""

__version__ = "0.1.0"

"""MFHCA - speech emotion recognition with multi-spatial fusion and cooperative attention."""

__version__ = "0.1.0"

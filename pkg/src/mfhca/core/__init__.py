"""Core modules for mfhca."""

"""Utility modules for mfhca."""

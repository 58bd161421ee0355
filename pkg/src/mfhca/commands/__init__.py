"""Command modules for mfhca."""

"""Tests for mfhca."""

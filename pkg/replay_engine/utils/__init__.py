"""Utility modules for the replay engine."""

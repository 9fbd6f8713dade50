"""Test suite for the Replay Engine."""

"""Scenario data model, file formats, batch loading and synthetic generation."""

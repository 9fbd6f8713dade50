"""Batched log-replay simulation: geometry, roads, dynamics, done signals, environment."""

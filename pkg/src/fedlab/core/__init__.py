"""Simulation core: seeded randomness, topologies, aggregation, metrics, engine."""

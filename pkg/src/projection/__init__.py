"""Admissible-set projections for portfolio and consumption controls."""

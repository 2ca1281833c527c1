"""Evaluation of trained policies: welfare, wealth distribution, hedging demand and validation."""

"""Utility functions and value-recursion aggregators."""

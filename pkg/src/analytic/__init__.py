"""Closed-form Merton benchmark and the myopic mean-variance benchmark."""

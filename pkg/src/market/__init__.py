"""Long-run-risk market: parameters, dynamics and path simulation."""

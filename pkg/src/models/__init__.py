"""Neural networks, optimizers and checkpoints."""

"""Pontryagin-guided training: Hamiltonian, losses and the training loop."""

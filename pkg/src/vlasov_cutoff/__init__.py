"""Particle Vlasov-Poisson engine with a velocity-cutoff hierarchy."""

__version__ = "0.1.0"

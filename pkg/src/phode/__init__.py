"""Simulate normal-hearing and cochlear-implant speech input to a causal
phoneme recognizer and analyse its errors, reaction times and dynamics."""

__version__ = "0.1.0"

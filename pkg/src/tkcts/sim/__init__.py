"""Offline simulation: synthetic tasks, noisy judges and evaluation statistics."""

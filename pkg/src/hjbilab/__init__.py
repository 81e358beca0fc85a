"""Numerical toolkit for sup-inf integro-differential equations with Lévy jumps."""

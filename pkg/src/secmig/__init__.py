"""Noninterference and confinement for programs with migrating threads."""

__version__ = "0.1.0"

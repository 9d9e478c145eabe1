"""Anatomically constrained mixture-of-experts classification on lung CT volumes."""

__version__ = "0.1.0"

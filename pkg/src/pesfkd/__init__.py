"""Desk-scale knowledge-distillation lab with adapter-augmented teachers."""

__version__ = "0.1.0"

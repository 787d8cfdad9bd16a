"""Desk-scale contrastive CT/report pipeline with a verifiable evaluation stack."""

__version__ = "0.1.0"

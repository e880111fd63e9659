"""Unsupervised intrusion detection for IEEE 1722 (AVTP) streams."""

__version__ = "0.1.0"

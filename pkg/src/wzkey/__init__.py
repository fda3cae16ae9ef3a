"""Wyner-Ziv key agreement codes for PUF and biometric identifiers."""

__version__ = "0.1.0"

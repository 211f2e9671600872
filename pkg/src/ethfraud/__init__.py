"""Phishing-account detection from transaction sentences, similarity graphs and account graphs."""

__version__ = "0.1.0"

"""Multifactorial (popularity x positivity) bias toolkit for rating-based recommenders."""
__version__ = "0.1.0"

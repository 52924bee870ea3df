"""Personality-trait prediction from smartphone activity logs."""

__version__ = "0.1.0"

"""Ambient helpers: logging setup, output files and progress tracking."""

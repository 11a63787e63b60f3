"""Handlers package: one module per command-line subcommand."""

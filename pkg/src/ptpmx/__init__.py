"""Minimax offset estimation for packet-based clock synchronization."""

__version__ = "0.1.0"

"""Learned-risk MPC crowd navigation workbench."""

__version__ = "0.1.0"

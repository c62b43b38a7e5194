"""Checking and exploring models of decentralized systems written in the dvl language."""

__version__ = "0.1.0"

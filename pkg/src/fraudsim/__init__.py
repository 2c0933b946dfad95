"""Agent-based simulation of internal-fraud operational losses in retail banking."""

__version__ = "0.1.0"

"""Grid security toolkit: state estimation, attack and defense models, and a cyber-range simulator."""

__version__ = "0.1.0"

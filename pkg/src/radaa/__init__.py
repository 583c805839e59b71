"""Risk-adaptive authorization: token core, adaptive engine, servers and a threat harness."""

__version__ = "0.1.0"

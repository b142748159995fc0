"""Trust/engagement behavior models, their estimation, and MPC assistance seeking."""

__version__ = "0.1.0"

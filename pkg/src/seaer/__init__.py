"""Structure-evolution-aware experience replay for node-wise graph continual learning."""

__version__ = "0.1.0"

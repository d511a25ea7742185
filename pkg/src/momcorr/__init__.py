"""Staleness-corrected momentum for TD learning, with its exact
recomputation oracle and the experiments that probe both."""

__version__ = "0.1.0"

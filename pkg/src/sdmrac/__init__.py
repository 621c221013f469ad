"""Stochastic deep model reference adaptive control laboratory."""

from . import adapt, bnn, dynamics, harness, replay

__all__ = ["adapt", "bnn", "dynamics", "harness", "replay"]
__version__ = "0.1.0"

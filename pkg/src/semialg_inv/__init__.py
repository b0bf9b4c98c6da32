"""Semialgebraic invariant synthesis for polynomial guarded loops."""

__version__ = "0.1.0"

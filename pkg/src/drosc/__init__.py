"""Distributionally robust synthetic control: estimation, perturbation inference,
and a Monte Carlo lab."""

from __future__ import annotations

__version__ = "0.1.0"

"""Uniform correlator product states on infinite spin-1/2 chains."""

from __future__ import annotations

__version__ = "0.1.0"

"""Restoration planning: degradation synthesis, tool plans, unified reward,
exhaustive plan search, and a small plan policy trained by SFT and MRRHF."""

__version__ = "0.1.0"

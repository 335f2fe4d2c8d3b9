"""Deterministic audit toolkit for gig-platform driver data-export bundles."""

__version__ = "0.1.0"

"""Zeroth-order proximal double variance reduction."""

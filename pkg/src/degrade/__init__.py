"""Degradation modeling toolkit."""

"""Extremal-branch simulator."""

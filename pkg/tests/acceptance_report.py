"""Shared store for the acceptance summary lines printed at the end of a run."""

LINES = []

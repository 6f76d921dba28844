"""Utility functions for akpz-lab."""

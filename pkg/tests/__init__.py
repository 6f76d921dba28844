"""Tests for the akpz-lab package."""

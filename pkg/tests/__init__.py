"""Tests for the packing laboratory."""

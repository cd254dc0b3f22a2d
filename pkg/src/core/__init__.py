"""Geometric substrate, configuration and process plumbing."""

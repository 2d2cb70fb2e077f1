"""Estimation, robust synthesis and experiment services behind the management commands."""

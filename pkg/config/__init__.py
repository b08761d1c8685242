"""Packaged default configuration for gsrpde."""

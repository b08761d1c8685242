"""Packaged meshes and region partitions shipped with gsrpde."""

"""Monocular 3D detection tooling for mixed 2D/3D datasets."""

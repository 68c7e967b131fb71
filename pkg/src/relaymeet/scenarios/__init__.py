"""Bundled scenario documents (YAML)."""

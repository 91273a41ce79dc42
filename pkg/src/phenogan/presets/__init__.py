"""Bundled INI run presets."""

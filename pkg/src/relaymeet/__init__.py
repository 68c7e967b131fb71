"""Intermittent-meeting coordination for source/relay robot teams under local LTL tasks."""

__version__ = "0.1.0"

"""
Test suite for xbarsim.

This package contains unit tests and integration tests for the xbarsim library and CLI.
"""

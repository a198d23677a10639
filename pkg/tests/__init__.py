"""Tests for forcedvi."""

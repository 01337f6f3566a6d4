"""Tests for Vessel Tracer."""

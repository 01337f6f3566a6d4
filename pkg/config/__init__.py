"""Configuration module for Vessel Tracer."""

"""Vessel Tracer - semi-automatic retinal vessel tree tracing by embedding clustering."""

"""Deterministic simulator: scenes, detections, switch operation, experiments."""

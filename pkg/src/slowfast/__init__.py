"""Slow manifolds, fiber frames and fiber curvature for slow-fast ODEs."""
